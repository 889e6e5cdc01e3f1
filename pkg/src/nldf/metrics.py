"""PSNR and Gaussian-window SSIM for float images in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .render import Image

PSNR_CAP_DB = 99.0


class MetricError(ValueError):
    pass


def _arr(img) -> np.ndarray:
    return np.asarray(img.pixels if isinstance(img, Image) else img, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB; ``math.inf`` for identical images (see ``psnr_capped``)."""
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise MetricError(f"image shapes differ: {x.shape} vs {y.shape}")
    err = float(np.mean((x - y) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr_capped(value: float) -> float:
    return min(value, PSNR_CAP_DB)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, peak: float = 1.0, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over every fully contained window, averaged over channels."""
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise MetricError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < window or x.shape[1] < window:
        raise MetricError(f"SSIM needs images of at least {window}x{window}, got {x.shape[1]}x{x.shape[0]}")
    w = gaussian_window(window, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def filt(img: np.ndarray) -> np.ndarray:
        return fftconvolve(img, w, mode="valid")

    scores = []
    for ch in range(x.shape[2]):
        u, v = x[..., ch], y[..., ch]
        mu_u, mu_v = filt(u), filt(v)
        var_u = filt(u * u) - mu_u ** 2
        var_v = filt(v * v) - mu_v ** 2
        cov = filt(u * v) - mu_u * mu_v
        num = (2 * mu_u * mu_v + c1) * (2 * cov + c2)
        den = (mu_u ** 2 + mu_v ** 2 + c1) * (var_u + var_v + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.clip(np.mean(scores), -1.0, 1.0))


@dataclass
class MetricReport:
    psnr_db: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, pred, ref) -> None:
        self.psnr_db.append(psnr(pred, ref))
        self.ssim.append(ssim(pred, ref))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([psnr_capped(p) for p in self.psnr_db]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_dict(self) -> dict:
        return {
            "psnr_db": [psnr_capped(p) for p in self.psnr_db],
            "identical": [math.isinf(p) for p in self.psnr_db],
            "ssim": self.ssim,
            "mean_psnr_db": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
        }

    def csv_rows(self) -> list[list]:
        rows = [["frame", "psnr_db", "ssim"]]
        rows += [[i, psnr_capped(p), s] for i, (p, s) in enumerate(zip(self.psnr_db, self.ssim))]
        rows.append(["mean", self.mean_psnr, self.mean_ssim])
        return rows
