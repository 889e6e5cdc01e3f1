"""The per-ray student network: beam feature + conditioning -> M segment colors."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .conditioning import DrivingSignal, FusionModule, fuse_window
from .geometry import BeamFeature, Camera, ConfigError, camera_rays, encode_beams, sinusoidal_encoding
from .render import Image, PixelColor, SegmentColors


@dataclass
class NLDFConfig:
    K: int = 16
    M: int = 4
    blocks: int = 8
    width: int = 128
    cond_dim: int = 16
    output_activation: str = "sigmoid"
    pe_frequencies: int = 0
    slope: float = 0.01
    # initial value of every segment output; 0.5 means an all-zero head
    head_bias_prior: float = 0.1
    t_near: float = 2.0
    t_far: float = 6.0
    # per-coordinate standardization of the beam feature, length 3K (empty = identity)
    input_shift: list = field(default_factory=list)
    input_scale: list = field(default_factory=list)

    def validate(self) -> list[str]:
        errs = []
        if self.K < 2:
            errs.append(f"model.K must be >= 2 (got {self.K})")
        if self.M < 1:
            errs.append(f"model.M must be >= 1 (got {self.M})")
        if self.blocks < 1:
            errs.append(f"model.blocks must be >= 1 (got {self.blocks})")
        if self.width < 3 * self.M:
            errs.append(f"model.width must be >= 3*M = {3 * self.M} (got {self.width})")
        if self.cond_dim < 0:
            errs.append(f"model.cond_dim must be >= 0 (got {self.cond_dim})")
        if self.output_activation != "sigmoid":
            errs.append(f"model.output_activation must be 'sigmoid' (got {self.output_activation!r})")
        if not 0 < self.head_bias_prior < 1:
            errs.append(f"model.head_bias_prior must lie in (0, 1) (got {self.head_bias_prior})")
        if self.pe_frequencies < 0:
            errs.append("model.pe_frequencies must be >= 0")
        if not 0 <= self.t_near < self.t_far:
            errs.append(f"model bounds need 0 <= t_near < t_far (got [{self.t_near}, {self.t_far}])")
        for name in ("input_shift", "input_scale"):
            v = getattr(self, name)
            if v and len(v) != 3 * self.K:
                errs.append(f"model.{name} must have 3K = {3 * self.K} entries (got {len(v)})")
        return errs

    @property
    def beam_dim(self) -> int:
        return 3 * self.K

    @property
    def input_dim(self) -> int:
        enc = self.beam_dim * (1 + 2 * self.pe_frequencies)
        return enc + self.cond_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NLDFConfig":
        return cls(**d)


class NLDFModel(ad.Module):
    """Input projection, B residual blocks and an output head.

    Head weights start at zero and its bias at logit(head_bias_prior), so an
    untrained model emits that constant for every segment channel.
    """

    def __init__(self, config: NLDFConfig, seed: int = 0, dtype=np.float64):
        errs = config.validate()
        if errs:
            raise ConfigError("; ".join(errs))
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.proj = ad.Dense(config.input_dim, config.width, rng, dtype)
        self.blocks = [ad.ResBlock(config.width, rng, dtype, slope=config.slope) for _ in range(config.blocks)]
        self.head = ad.Dense(config.width, 3 * config.M, rng, dtype, zero_init=True)
        p0 = config.head_bias_prior
        self.head.b.data[...] = np.log(p0 / (1.0 - p0))
        self.shift = np.asarray(config.input_shift or np.zeros(config.beam_dim), dtype=dtype)
        self.scale = np.asarray(config.input_scale or np.ones(config.beam_dim), dtype=dtype)

    def set_normalization(self, beams: np.ndarray) -> None:
        """Standardize beam coordinates with statistics of ``beams`` (R, 3K)."""
        shift = beams.mean(axis=0)
        scale = beams.std(axis=0)
        scale = np.where(scale > 1e-8, scale, 1.0)
        self.config.input_shift = shift.tolist()
        self.config.input_scale = scale.tolist()
        self.shift = shift.astype(self.dtype)
        self.scale = scale.astype(self.dtype)

    def encode_input(self, beams: np.ndarray) -> np.ndarray:
        x = (np.asarray(beams, dtype=self.dtype) - self.shift) / self.scale
        return sinusoidal_encoding(x, self.config.pe_frequencies).astype(self.dtype, copy=False)

    def logits(self, beams: np.ndarray, cond) -> ad.Tensor:
        """Pre-activation outputs (R, 3M) for a batch of beams.

        ``cond`` is a (D,) tensor shared by every ray, or an (R, D) array.
        """
        x = ad.Tensor(self.encode_input(beams))
        R = x.shape[0]
        cond = ad.as_tensor(cond)
        if cond.data.dtype != self.dtype:
            cond = ad.Tensor(cond.data.astype(self.dtype)) if not cond.requires_grad else cond
        D = self.config.cond_dim
        if cond.shape[-1] != D:
            raise ConfigError(f"conditioning has {cond.shape[-1]} entries, model expects {D}")
        if D:
            c = cond.reshape(1, D) if cond.data.ndim == 1 else cond
            if c.shape[0] != R:
                c = ad.broadcast_to(c, (R, D))
            x = ad.concat([x, c], axis=1)
        h = ad.leaky_relu(self.proj(x), self.config.slope)
        for blk in self.blocks:
            h = blk(h)
        return self.head(ad.leaky_relu(h, self.config.slope))

    def infer(self, beams: np.ndarray, cond: np.ndarray) -> np.ndarray:
        """Segment colors (R, M, 3) without building a tape; matches ``segments``.

        Buffers are reused across layers and the conditioning contribution of
        the input layer is computed once when ``cond`` is shared by every ray.
        """
        x = self.encode_input(beams)
        R, n_beam = x.shape
        cond = np.asarray(cond, dtype=self.dtype)
        slope = self.dtype.type(self.config.slope)
        W0, b0 = self.proj.W.data, self.proj.b.data
        h = x @ W0[:, :n_beam].T
        if self.config.cond_dim:
            h += cond @ W0[:, n_beam:].T  # (D,) broadcasts over rays, (R, D) is per ray
        h += b0
        tmp = np.empty_like(h)
        t = np.empty_like(h)

        def act(a):
            np.multiply(a, slope, out=tmp)
            np.maximum(a, tmp, out=a)

        act(h)
        for blk in self.blocks:
            np.matmul(h, blk.fc1.W.data.T, out=t)
            t += blk.fc1.b.data
            act(t)
            np.matmul(t, blk.fc2.W.data.T, out=tmp)
            tmp += blk.fc2.b.data
            h += tmp
        act(h)
        z = h @ self.head.W.data.T
        z += self.head.b.data
        return (1.0 / (1.0 + np.exp(-z))).astype(self.dtype, copy=False).reshape(R, self.config.M, 3)

    def segments(self, beams: np.ndarray, cond) -> ad.Tensor:
        """Segment colors (R, M, 3) in (0, 1)."""
        z = self.logits(beams, cond)
        return ad.sigmoid(z).reshape(z.shape[0], self.config.M, 3)


class ForwardCounter:
    def __init__(self):
        self.count = 0


def nldf_forward(model: NLDFModel, beam: BeamFeature, a) -> SegmentColors:
    if beam.K != model.config.K:
        raise ConfigError(f"beam has K={beam.K}, model expects K={model.config.K}")
    with ad.no_grad():
        seg = model.segments(beam.coords.reshape(1, -1), ad.as_tensor(a))
    return SegmentColors(seg.data[0].astype(np.float64))


def nldf_pixel(model: NLDFModel, beam: BeamFeature, a) -> PixelColor:
    seg = nldf_forward(model, beam, a)
    return PixelColor(np.clip(seg.colors.sum(axis=0), 0.0, 1.0))


def render_rays_student(model: NLDFModel, beams: np.ndarray, cond: np.ndarray,
                        counter: ForwardCounter | None = None, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Unclamped pixel sums (R, 3) and segments (R, M, 3), one forward per ray."""
    R = len(beams)
    segs = np.empty((R, model.config.M, 3), dtype=model.dtype)
    cond = cond.data if isinstance(cond, ad.Tensor) else np.asarray(cond)
    for lo in range(0, R, chunk):
        hi = min(lo + chunk, R)
        c = cond[lo:hi] if cond.ndim == 2 else cond
        segs[lo:hi] = model.infer(beams[lo:hi], c)
        if counter is not None:
            counter.count += hi - lo
    return segs.sum(axis=1), segs


def render_frame_student(model: NLDFModel, camera: Camera, signal: DrivingSignal | None, frame: int,
                         fusion: FusionModule | None = None, counter: ForwardCounter | None = None,
                         cond: np.ndarray | None = None) -> tuple[Image, int]:
    """Student image of ``frame`` and the number of network forwards it took (W*H).

    The fused conditioning vector is computed once for the frame.
    """
    own = counter if counter is not None else ForwardCounter()
    before = own.count
    if cond is None:
        if fusion is None or signal is None:
            cond = np.zeros(model.config.cond_dim)
        else:
            with ad.no_grad():
                cond = fuse_window(fusion, signal, frame).data
    o, d = camera_rays(camera)
    beams = encode_beams(o, d, model.config.t_near, model.config.t_far, model.config.K)
    pix, _ = render_rays_student(model, beams, np.asarray(cond, dtype=model.dtype), own)
    img = Image.from_flat(np.clip(pix, 0.0, 1.0), camera.width, camera.height)
    return img, own.count - before
