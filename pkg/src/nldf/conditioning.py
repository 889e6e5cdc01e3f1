"""Synthetic driving signals and the attention window fusion module."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .geometry import ConfigError

MAX_FREQ_HZ = 1.0
MIN_FREQ_HZ = 0.1


@dataclass(frozen=True)
class DrivingSignal:
    frames: np.ndarray  # (T, D_raw)
    fps: float = 25.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ConfigError(f"signal must be a (T, D_raw) matrix with T >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ConfigError("signal contains non-finite values")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)
        if not self.fps > 0:
            raise ConfigError("fps must be positive")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fps", repr(self.fps)])
            for row in self.frames:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def load_csv(cls, path) -> "DrivingSignal":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        fps = float(rows[0][1])
        return cls(np.array([[float(v) for v in r] for r in rows[1:]]), fps)


def adjacent_step_bound(dim: int, fps: float, max_freq: float = MAX_FREQ_HZ) -> float:
    """Upper bound on the L2 distance between consecutive sinusoid-mixture frames.

    Each channel is the mean of three unit sinusoids with frequency at most
    ``max_freq`` so its slope is at most 2*pi*max_freq; one frame lasts 1/fps.
    """
    return float(np.sqrt(dim) * 2 * np.pi * max_freq / fps)


def generate_signal(kind: str, T: int, D_raw: int, seed: int, fps: float = 25.0) -> DrivingSignal:
    if T < 1 or D_raw < 1:
        raise ConfigError(f"signal needs T >= 1 and D_raw >= 1, got T={T}, D_raw={D_raw}")
    rng = np.random.default_rng(seed)
    t = np.arange(T) / fps
    if kind == "sinusoid-mixture":
        freqs = rng.uniform(MIN_FREQ_HZ, MAX_FREQ_HZ, size=(D_raw, 3))
        phases = rng.uniform(0, 2 * np.pi, size=(D_raw, 3))
        ang = 2 * np.pi * freqs[None] * t[:, None, None] + phases[None]
        frames = np.sin(ang).mean(axis=2)
    elif kind == "bandlimited-noise":
        # white noise low-passed at MAX_FREQ_HZ in the frequency domain
        n = max(T, 2)
        spectrum = np.fft.rfft(rng.standard_normal((n, D_raw)), axis=0)
        spectrum[np.fft.rfftfreq(n, d=1.0 / fps) > MAX_FREQ_HZ] = 0.0
        spectrum[0] = 0.0
        frames = np.fft.irfft(spectrum, n=n, axis=0)[:T]
        peak = np.max(np.abs(frames), axis=0, keepdims=True)
        frames = frames / np.where(peak > 0, peak, 1.0)
    else:
        raise ConfigError(f"unknown signal kind {kind!r}")
    return DrivingSignal(frames, fps)


class FusionModule(ad.Module):
    """Single-head dot-product attention over a 2w+1 frame window.

    The query comes from the center frame; keys and values from every frame
    in the window. No positional term, so the output depends on frame order
    only through the scores.
    """

    def __init__(self, d_raw: int, d_out: int, window: int = 1, seed: int = 0, dtype=np.float64):
        if d_raw < 1 or d_out < 0 or window < 0:
            raise ConfigError("fusion module needs d_raw >= 1, d_out >= 0, window >= 0")
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d_raw)
        self.d_raw = d_raw
        self.d_out = d_out
        self.window = window
        self.Wq = ad.Parameter(rng.normal(0, scale, (d_raw, d_out)).astype(dtype))
        self.Wk = ad.Parameter(rng.normal(0, scale, (d_raw, d_out)).astype(dtype))
        self.Wv = ad.Parameter(rng.normal(0, scale, (d_raw, d_out)).astype(dtype))

    def window_frames(self, signal: DrivingSignal, frame: int) -> np.ndarray:
        if not 0 <= frame < signal.T:
            raise ConfigError(f"frame {frame} outside signal of length {signal.T}")
        idx = np.clip(np.arange(frame - self.window, frame + self.window + 1), 0, signal.T - 1)
        return signal.frames[idx]

    def attention(self, x: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        """Weights (2w+1,) and fused output (D,) for a window matrix ``x``."""
        X = ad.Tensor(x.astype(self.Wq.dtype))
        center = X[self.window:self.window + 1]
        q = center @ self.Wq  # (1, D)
        k = X @ self.Wk  # (W, D)
        v = X @ self.Wv
        scores = (q @ k.T) * (1.0 / np.sqrt(max(self.d_out, 1)))
        w = ad.softmax(scores, axis=-1)
        return w.reshape(-1), (w @ v).reshape(-1)

    def __call__(self, signal: DrivingSignal, frame: int) -> ad.Tensor:
        return fuse_window(self, signal, frame)


def fuse_window(module: FusionModule, signal: DrivingSignal, frame: int) -> ad.Tensor:
    if module.d_out == 0:
        return ad.Tensor(np.zeros(0, dtype=module.Wq.dtype))
    if signal.dim != module.d_raw:
        raise ConfigError(f"signal has {signal.dim} channels, fusion expects {module.d_raw}")
    _, out = module.attention(module.window_frames(signal, frame))
    return out


def fuse_all(module: FusionModule, signal: DrivingSignal) -> np.ndarray:
    """Fused vectors for every frame, computed in plain numpy, shape (T, D)."""
    if module.d_out == 0:
        return np.zeros((signal.T, 0))
    w = module.window
    idx = np.clip(np.arange(signal.T)[:, None] + np.arange(-w, w + 1)[None, :], 0, signal.T - 1)
    X = signal.frames[idx].astype(module.Wq.dtype)  # (T, 2w+1, D_raw)
    q = X[:, w] @ module.Wq.data
    k = X @ module.Wk.data
    v = X @ module.Wv.data
    scores = np.einsum("td,tjd->tj", q, k) / np.sqrt(max(module.d_out, 1))
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    att = e / e.sum(axis=1, keepdims=True)
    return np.einsum("tj,tjd->td", att, v)
