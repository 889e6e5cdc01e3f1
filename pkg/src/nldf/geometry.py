"""Camera poses, pixel rays, sample placement and beam encoding.

Camera convention: the camera looks along its local -z axis with +y up and
+x right; pixel rows grow downward. A pixel's ray passes through its
integer coordinate (px, py), not its center, so the principal point ray
is exactly the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) >= 1e-9 or abs(np.linalg.det(R) - 1.0) >= 1e-9:
            raise DomainError("pose rotation must be orthonormal with det 1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> "Pose":
        """Pose whose -z axis points from ``eye`` toward ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        back = eye - np.asarray(target, dtype=np.float64)
        back /= np.linalg.norm(back)
        right = np.cross(np.asarray(up, dtype=np.float64), back)
        right /= np.linalg.norm(right)
        true_up = np.cross(back, right)
        R = np.stack([right, true_up, back], axis=1)
        # re-orthonormalize against rounding
        u, _, vt = np.linalg.svd(R)
        return cls(u @ vt, eye)

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["R"], dtype=np.float64), np.array(d["t"], dtype=np.float64))


@dataclass(frozen=True)
class Camera:
    pose: Pose
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.focal > 0:
            raise DomainError(f"focal must be positive, got {self.focal}")
        if self.width <= 0 or self.height <= 0:
            raise DomainError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @classmethod
    def centered(cls, pose: Pose, focal: float, width: int, height: int) -> "Camera":
        return cls(pose, float(focal), width / 2.0, height / 2.0, int(width), int(height))

    def with_pose(self, pose: Pose) -> "Camera":
        return Camera(pose, self.focal, self.cx, self.cy, self.width, self.height)

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "focal": self.focal, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(Pose.from_dict(d["pose"]), float(d["focal"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        if not 0 <= self.t_near < self.t_far:
            raise DomainError(f"ray bounds must satisfy 0 <= t_near < t_far, got [{self.t_near}, {self.t_far}]")

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass(frozen=True)
class BeamFeature:
    coords: np.ndarray
    K: int


@dataclass(frozen=True)
class SamplePoint:
    position: np.ndarray
    depth: float
    delta: float


def pixel_ray(camera: Camera, px: float, py: float, t_near: float = 0.0, t_far: float = 1.0) -> Ray:
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise DomainError(f"pixel ({px}, {py}) outside {camera.width}x{camera.height} frame")
    d_cam = np.array([(px - camera.cx) / camera.focal, -(py - camera.cy) / camera.focal, -1.0])
    d = camera.pose.R @ d_cam
    return Ray(camera.pose.t.copy(), d / np.linalg.norm(d), float(t_near), float(t_far))


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for every pixel, row-major, shape (H*W, 3)."""
    py, px = np.meshgrid(np.arange(camera.height, dtype=np.float64),
                         np.arange(camera.width, dtype=np.float64), indexing="ij")
    d_cam = np.stack([(px - camera.cx) / camera.focal, -(py - camera.cy) / camera.focal,
                      -np.ones_like(px)], axis=-1).reshape(-1, 3)
    d = d_cam @ camera.pose.R.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.pose.t, d.shape).copy()
    return o, d


def beam_depths(t_near: float, t_far: float, K: int) -> np.ndarray:
    if K < 2:
        raise ConfigError(f"beam encoding needs K >= 2, got {K}")
    k = np.arange(K, dtype=np.float64)
    return t_near + k / (K - 1) * (t_far - t_near)


def encode_beam(ray: Ray, K: int = 16) -> BeamFeature:
    t = beam_depths(ray.t_near, ray.t_far, K)
    pts = ray.origin + t[:, None] * ray.direction
    # exact endpoints, independent of the interpolation rounding
    pts[0] = ray.origin + ray.t_near * ray.direction
    pts[-1] = ray.origin + ray.t_far * ray.direction
    return BeamFeature(pts.reshape(-1), K)


def encode_beams(origins: np.ndarray, directions: np.ndarray, t_near: float, t_far: float,
                 K: int = 16) -> np.ndarray:
    """Batched ``encode_beam``: (R, 3) rays to (R, 3K) features."""
    t = beam_depths(t_near, t_far, K)
    pts = origins[:, None, :] + t[None, :, None] * directions[:, None, :]
    pts[:, 0] = origins + t_near * directions
    pts[:, -1] = origins + t_far * directions
    return pts.reshape(len(origins), -1)


def sinusoidal_encoding(x: np.ndarray, n_freqs: int) -> np.ndarray:
    """[x, sin(2^l pi x), cos(2^l pi x)] for l < n_freqs, along the last axis."""
    if n_freqs <= 0:
        return x
    freqs = (2.0 ** np.arange(n_freqs)) * np.pi
    ang = x[..., None] * freqs
    parts = [x, np.sin(ang).reshape(*x.shape[:-1], -1), np.cos(ang).reshape(*x.shape[:-1], -1)]
    return np.concatenate(parts, axis=-1)


def sample_depths(t_near: float, t_far: float, N: int, mode: str = "midpoint",
                  rng: np.random.Generator | None = None, n_rays: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Depths and deltas for N equal bins over [t_near, t_far].

    Midpoint mode returns shape (N,). Stratified mode draws one depth per
    bin and returns shape (n_rays, N) (or (N,) when n_rays is None).
    """
    if N < 1:
        raise ConfigError(f"sample count must be >= 1, got {N}")
    width = (t_far - t_near) / N
    lo = t_near + width * np.arange(N)
    if mode == "midpoint":
        t = lo + 0.5 * width
    elif mode == "stratified":
        if rng is None:
            raise ConfigError("stratified sampling needs an rng")
        shape = (N,) if n_rays is None else (n_rays, N)
        t = lo + width * rng.random(shape)
    else:
        raise ConfigError(f"unknown sampling mode {mode!r}")
    delta = np.empty_like(t)
    delta[..., :-1] = np.diff(t, axis=-1)
    delta[..., -1] = width
    return t, delta


def place_samples(ray: Ray, N: int, mode: str = "midpoint", seed: int = 0) -> list[SamplePoint]:
    rng = np.random.default_rng(seed) if mode == "stratified" else None
    t, delta = sample_depths(ray.t_near, ray.t_far, N, mode, rng)
    return [SamplePoint(ray.origin + tk * ray.direction, float(tk), float(dk)) for tk, dk in zip(t, delta)]


def orbit_poses(n_frames: int, radius: float, yaw_amplitude: float = 0.0, pitch_amplitude: float = 0.0,
                period: float | None = None, target=(0.0, 0.0, 0.0)) -> list[Pose]:
    """Cameras on a sphere around ``target`` swaying in yaw and pitch.

    Zero amplitudes give a static trajectory (the same pose every frame).
    """
    period = period or max(n_frames, 1)
    poses = []
    for f in range(n_frames):
        phase = 2 * np.pi * f / period
        yaw = yaw_amplitude * np.sin(phase)
        pitch = pitch_amplitude * np.sin(2 * phase)
        eye = np.asarray(target) + radius * np.array(
            [np.sin(yaw) * np.cos(pitch), np.sin(pitch), np.cos(yaw) * np.cos(pitch)])
        poses.append(Pose.look_at(eye, target))
    return poses
