"""Frozen analytic teacher field: a sum of conditioning-driven Gaussian blobs.

Blob i has center mu0_i + A_i a, density s_i exp(-|p - center|^2 / (2 r_i^2))
and a fixed color. Overlapping blobs mix colors weighted by density. Empty
space has zero density and black color.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import ConfigError


@dataclass(frozen=True)
class RadianceSample:
    color: np.ndarray
    sigma: float


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Blob:
    center: np.ndarray
    drive: np.ndarray  # (3, D)
    radius: float
    amplitude: float
    color: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, (3,)))
        drive = np.array(self.drive, dtype=np.float64)
        object.__setattr__(self, "drive", _frozen(drive, (3, -1)) if drive.size else _frozen(np.zeros((3, 0))))
        object.__setattr__(self, "color", _frozen(self.color, (3,)))
        if not self.radius > 0:
            raise ConfigError(f"blob {self.name!r}: radius must be positive")
        if not self.amplitude >= 0:
            raise ConfigError(f"blob {self.name!r}: amplitude must be nonnegative")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ConfigError(f"blob {self.name!r}: color must lie in [0, 1]")

    @property
    def is_static(self) -> bool:
        return not np.any(self.drive)

    def center_at(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if self.drive.shape[1] == 0:
            return self.center
        return self.center + self.drive @ a

    def to_dict(self) -> dict:
        return {"name": self.name, "center": self.center.tolist(), "drive": self.drive.tolist(),
                "radius": self.radius, "amplitude": self.amplitude, "color": self.color.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Blob":
        return cls(d["center"], d.get("drive", []), float(d["radius"]), float(d["amplitude"]),
                   d["color"], d.get("name", ""))


@dataclass(frozen=True)
class AnalyticScene:
    blobs: tuple = ()
    drive_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blobs", tuple(self.blobs))
        for b in self.blobs:
            if b.drive.shape[1] not in (0, self.drive_dim):
                raise ConfigError(f"blob {b.name!r} drive has {b.drive.shape[1]} columns, scene expects {self.drive_dim}")

    def centers(self, a) -> np.ndarray:
        return np.array([b.center_at(a) for b in self.blobs]).reshape(-1, 3)

    def to_dict(self) -> dict:
        return {"drive_dim": self.drive_dim, "blobs": [b.to_dict() for b in self.blobs]}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticScene":
        return cls(tuple(Blob.from_dict(b) for b in d.get("blobs", [])), int(d.get("drive_dim", 0)))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "AnalyticScene":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class FieldCounter:
    """Counts point evaluations made through ``eval_field_batch``."""

    def __init__(self):
        self.count = 0

    def reset(self) -> None:
        self.count = 0


def eval_field_batch(scene: AnalyticScene, a, points: np.ndarray, directions: np.ndarray | None = None,
                     counter: FieldCounter | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Colors (..., 3) and densities (...) at ``points`` of shape (..., 3).

    ``directions`` is accepted for parity with view-dependent fields and
    ignored here.
    """
    points = np.asarray(points, dtype=np.float64)
    lead = points.shape[:-1]
    if counter is not None:
        counter.count += int(np.prod(lead))
    if not scene.blobs:
        return np.zeros(lead + (3,)), np.zeros(lead)
    sigma = np.zeros(lead)
    weighted = np.zeros(lead + (3,))
    for blob in scene.blobs:
        diff = points - blob.center_at(a)
        d2 = np.einsum("...k,...k->...", diff, diff)
        s = blob.amplitude * np.exp(-d2 / (2.0 * blob.radius ** 2))
        sigma += s
        weighted += s[..., None] * blob.color
    color = np.zeros_like(weighted)
    pos = sigma > 0
    color[pos] = weighted[pos] / sigma[pos, None]
    np.clip(color, 0.0, 1.0, out=color)
    return color, sigma


def eval_field(scene: AnalyticScene, a, p, d=None) -> RadianceSample:
    c, s = eval_field_batch(scene, a, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return RadianceSample(c[0], float(s[0]))


def default_talking_scene(seed: int = 0, D: int = 4) -> AnalyticScene:
    """A head-like static blob with a driven mouth blob and a driven brow blob.

    The layout is fixed; the seed only perturbs the drive matrices and the
    colors slightly so different seeds give different yet similar dynamics.
    """
    if D < 1:
        raise ConfigError("talking scene needs a drive dimension D >= 1")
    rng = np.random.default_rng(seed)

    def drive(scale: float, axes_weight) -> np.ndarray:
        A = rng.normal(0.0, 1.0, (3, D))
        A /= np.linalg.norm(A, axis=1, keepdims=True) + 1e-12
        return scale * A * np.asarray(axes_weight)[:, None] / np.sqrt(3)

    jitter = lambda c: np.clip(np.asarray(c) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)
    blobs = [
        Blob([0.0, 0.0, 0.0], np.zeros((3, D)), 0.45, 10.0, jitter([0.85, 0.65, 0.5]), "head"),
        Blob([0.0, -0.22, 0.42], drive(0.2, [0.5, 1.0, 0.3]), 0.14, 25.0, jitter([0.75, 0.15, 0.2]), "mouth"),
        Blob([0.0, 0.2, 0.4], drive(0.12, [0.3, 1.0, 0.2]), 0.11, 30.0, jitter([0.25, 0.15, 0.1]), "brow"),
    ]
    return AnalyticScene(tuple(blobs), D)


def static_scene(seed: int = 0) -> AnalyticScene:
    """The talking scene with every drive removed; drive_dim is zero."""
    base = default_talking_scene(seed, 1)
    blobs = tuple(Blob(b.center, np.zeros((3, 0)), b.radius, b.amplitude, b.color, b.name) for b in base.blobs)
    return AnalyticScene(blobs, 0)
