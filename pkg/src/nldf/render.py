"""Discrete volume rendering: transmittance, full and per-segment compositing.

Segment colors use the global prefix transmittance, so summing all
segments of a ray reproduces the full composite exactly (up to float
rounding). Batched functions take arrays whose last axis indexes samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import Camera, ConfigError, DomainError, camera_rays, sample_depths
from .teacher import AnalyticScene, FieldCounter, RadianceSample, eval_field_batch

log = logging.getLogger(__name__)

DEFAULT_N = 64
DEFAULT_M = 4


@dataclass(frozen=True)
class SegmentColors:
    colors: np.ndarray  # (M, 3)

    @property
    def M(self) -> int:
        return self.colors.shape[0]


@dataclass(frozen=True)
class PixelColor:
    rgb: np.ndarray


@dataclass
class Image:
    """Row-major float RGB in [0, 1], ``pixels`` shape (height, width, 3)."""

    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_flat(cls, flat: np.ndarray, width: int, height: int) -> "Image":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (width * height, 3):
            raise ValueError(f"expected {(width * height, 3)} pixel array, got {flat.shape}")
        return cls(flat.reshape(height, width, 3))


def _check_nonneg(sigmas: np.ndarray, deltas: np.ndarray) -> None:
    if sigmas.shape != deltas.shape:
        raise DomainError(f"sigma/delta shape mismatch {sigmas.shape} vs {deltas.shape}")
    if np.any(sigmas < 0) or np.any(deltas < 0):
        raise DomainError("densities and deltas must be nonnegative")


def transmittance_prefix(sigmas, deltas) -> np.ndarray:
    """T_k = exp(-sum_{j<k} sigma_j delta_j), along the last axis."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=np.float64), sigmas.shape)
    _check_nonneg(sigmas, deltas)
    tau = sigmas * deltas
    acc = np.zeros_like(tau)
    np.cumsum(tau[..., :-1], axis=-1, out=acc[..., 1:])
    return np.exp(-acc)


def alpha_weights(sigmas, deltas) -> np.ndarray:
    """T_k (1 - exp(-sigma_k delta_k)), the per-sample compositing weights."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=np.float64), sigmas.shape)
    T = transmittance_prefix(sigmas, deltas)
    return T * -np.expm1(-sigmas * deltas)


def composite_segments_batch(colors: np.ndarray, sigmas: np.ndarray, deltas: np.ndarray, M: int) -> np.ndarray:
    """Unclamped segment colors, (..., N, 3) -> (..., M, 3)."""
    N = sigmas.shape[-1]
    if M < 1 or N % M:
        raise ConfigError(f"segment count M={M} must divide sample count N={N}")
    w = alpha_weights(sigmas, deltas)
    contrib = w[..., None] * colors
    return contrib.reshape(*contrib.shape[:-2], M, N // M, 3).sum(axis=-2)


def composite_full_batch(colors: np.ndarray, sigmas: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Unclamped full composite, (..., N, 3) -> (..., 3)."""
    w = alpha_weights(sigmas, deltas)
    return np.einsum("...n,...nc->...c", w, colors)


def _unpack(samples) -> tuple[np.ndarray, np.ndarray]:
    colors = np.array([s.color for s in samples], dtype=np.float64).reshape(-1, 3)
    sigmas = np.array([s.sigma for s in samples], dtype=np.float64)
    return colors, sigmas


def composite_full(samples: list[RadianceSample], deltas, clamp: bool = True) -> PixelColor:
    if len(samples) < 1:
        raise DomainError("compositing needs at least one sample")
    colors, sigmas = _unpack(samples)
    rgb = composite_full_batch(colors, sigmas, np.asarray(deltas, dtype=np.float64))
    return PixelColor(np.clip(rgb, 0.0, 1.0) if clamp else rgb)


def composite_segments(samples: list[RadianceSample], deltas, M: int) -> SegmentColors:
    colors, sigmas = _unpack(samples)
    return SegmentColors(composite_segments_batch(colors, sigmas, np.asarray(deltas, dtype=np.float64), M))


def _clamp_with_log(rgb: np.ndarray, what: str) -> np.ndarray:
    over = rgb > 1.0
    if np.any(over):
        n = int(np.any(over, axis=-1).sum()) if rgb.ndim > 1 else 1
        log.debug("%s saturated: %d value(s) clamped to 1", what, n)
    return np.clip(rgb, 0.0, 1.0)


def accumulate_segments(seg: SegmentColors | np.ndarray) -> PixelColor:
    colors = seg.colors if isinstance(seg, SegmentColors) else np.asarray(seg)
    return PixelColor(_clamp_with_log(colors.sum(axis=0), "segment sum"))


@dataclass
class TeacherRays:
    """Teacher supervision for a set of rays: segments (R, M, 3), pixel (R, 3), opacity (R,)."""

    segments: np.ndarray
    pixel: np.ndarray
    opacity: np.ndarray


def teacher_targets(scene: AnalyticScene, a, origins: np.ndarray, directions: np.ndarray,
                    t_near: float, t_far: float, N: int = DEFAULT_N, M: int = DEFAULT_M,
                    mode: str = "midpoint", rng: np.random.Generator | None = None,
                    counter: FieldCounter | None = None, chunk: int = 8192) -> TeacherRays:
    """Evaluate the teacher along each ray and composite full and per-segment colors.

    ``pixel`` is the unclamped full composite, equal to the segment sum.
    """
    if N % M:
        raise ConfigError(f"segment count M={M} must divide sample count N={N}")
    R = len(origins)
    segs = np.empty((R, M, 3))
    pix = np.empty((R, 3))
    opa = np.empty(R)
    for lo in range(0, R, chunk):
        hi = min(lo + chunk, R)
        t, delta = sample_depths(t_near, t_far, N, mode, rng, None if mode == "midpoint" else hi - lo)
        t = np.broadcast_to(t, (hi - lo, N))
        delta = np.broadcast_to(delta, (hi - lo, N))
        pts = origins[lo:hi, None, :] + t[..., None] * directions[lo:hi, None, :]
        col, sig = eval_field_batch(scene, a, pts, directions[lo:hi], counter)
        w = alpha_weights(sig, delta)
        contrib = w[..., None] * col
        segs[lo:hi] = contrib.reshape(hi - lo, M, N // M, 3).sum(axis=2)
        pix[lo:hi] = contrib.sum(axis=1)
        opa[lo:hi] = w.sum(axis=1)
    return TeacherRays(segs, pix, opa)


def render_frame_teacher(scene: AnalyticScene, camera: Camera, a, N: int = DEFAULT_N,
                         mode: str = "midpoint", t_near: float = 2.0, t_far: float = 6.0,
                         M: int = DEFAULT_M, seed: int = 0,
                         counter: FieldCounter | None = None) -> tuple[Image, int]:
    """Teacher image and the number of field evaluations it took (W*H*N)."""
    if N % M:
        raise ConfigError(f"segment count M={M} must divide sample count N={N}")
    own = counter if counter is not None else FieldCounter()
    before = own.count
    o, d = camera_rays(camera)
    if mode == "midpoint":
        out = teacher_targets(scene, a, o, d, t_near, t_far, N, M, counter=own)
    else:
        # one stream per pixel keeps the result independent of chunking order
        pixels = []
        for i in range(len(o)):
            rng = np.random.default_rng([seed, i])
            pixels.append(teacher_targets(scene, a, o[i:i + 1], d[i:i + 1], t_near, t_far, N, M,
                                          "stratified", rng, counter=own).pixel[0])
        out = TeacherRays(np.zeros((len(o), M, 3)), np.array(pixels), np.zeros(len(o)))
    img = Image.from_flat(_clamp_with_log(out.pixel, "teacher frame"), camera.width, camera.height)
    return img, own.count - before
