"""Distillation of the teacher field into the student network.

Each iteration draws one frame, samples a foreground-biased batch of its
pixels, and takes an Adam step on loss_r + lambda * loss_rs. The highest
loss rays of every batch go into a bounded active pool that is replayed as
an extra batch; replay steps never touch the fusion module.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .conditioning import DrivingSignal, FusionModule, fuse_all, fuse_window
from .geometry import Camera, ConfigError, Ray, camera_rays, encode_beams
from .render import PixelColor, SegmentColors, TeacherRays, teacher_targets
from .student import NLDFConfig, NLDFModel, render_rays_student
from .teacher import AnalyticScene

log = logging.getLogger(__name__)

OPACITY_THRESHOLD = 0.01
METRIC_COLUMNS = ["iter", "loss_r", "loss_rs", "total", "saturation_rate", "pool_size", "ms_per_iter"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class BatchConfig:
    batch_size: int = 4096
    foreground_fraction: float = 0.9
    lam: float = 0.2
    pool_fraction: float = 0.25
    pool_capacity: int | None = None
    pool_batch_size: int | None = None
    pool_every: int = 1
    pool_select: str = "highest"
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        if self.batch_size < 1:
            errs.append(f"batch.batch_size must be >= 1 (got {self.batch_size})")
        if not 0 <= self.foreground_fraction <= 1:
            errs.append(f"batch.foreground_fraction must lie in [0, 1] (got {self.foreground_fraction})")
        if not self.lam >= 0:
            errs.append(f"batch.lam must be >= 0 (got {self.lam})")
        if not 0 <= self.pool_fraction <= 1:
            errs.append(f"batch.pool_fraction must lie in [0, 1] (got {self.pool_fraction})")
        if self.pool_capacity is not None and self.pool_capacity < 1:
            errs.append("batch.pool_capacity must be >= 1")
        if self.pool_every < 1:
            errs.append("batch.pool_every must be >= 1")
        if self.pool_select not in ("highest", "lowest"):
            errs.append(f"batch.pool_select must be 'highest' or 'lowest' (got {self.pool_select!r})")
        return errs

    @property
    def capacity(self) -> int:
        return self.pool_capacity if self.pool_capacity is not None else 4 * self.batch_size

    @property
    def replay_size(self) -> int:
        return self.pool_batch_size if self.pool_batch_size is not None else self.batch_size


@dataclass(frozen=True)
class TrainingSample:
    ray: Ray
    frame: int
    gt: PixelColor
    segments: SegmentColors
    is_foreground: bool


class Dataset:
    """Frames of a driven scene seen by per-frame cameras, with teacher supervision.

    The teacher for frame f is driven by the raw signal row f; the student
    only ever sees the fused conditioning.
    """

    def __init__(self, scene: AnalyticScene, signal: DrivingSignal, cameras: list[Camera],
                 frames: list[int], N: int = 64, M: int = 4, t_near: float = 2.0, t_far: float = 6.0,
                 K: int = 16, cache_targets: bool = False, threads: int = 1):
        if len(cameras) != signal.T:
            raise ConfigError(f"need one camera per signal frame ({signal.T}), got {len(cameras)}")
        if scene.drive_dim not in (0, signal.dim):
            raise ConfigError(f"scene drive_dim {scene.drive_dim} != signal channels {signal.dim}")
        if N % M:
            raise ConfigError(f"M={M} must divide N={N}")
        self.scene, self.signal, self.cameras = scene, signal, cameras
        self.frames = list(frames)
        self.N, self.M, self.t_near, self.t_far, self.K = N, M, t_near, t_far, K
        self.width, self.height = cameras[0].width, cameras[0].height
        self.n_pixels = self.width * self.height
        self._rays: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.cache: dict[int, TeacherRays] | None = {} if cache_targets else None
        self.masks: dict[int, np.ndarray] = {}
        self.threads = max(1, threads)
        c0 = cameras[0]
        self.static_camera = all(np.array_equal(c.pose.R, c0.pose.R) and np.array_equal(c.pose.t, c0.pose.t)
                                 and c.to_dict() == c0.to_dict() for c in cameras)
        self._prepare(self.frames)

    def drive(self, frame: int) -> np.ndarray:
        return self.signal.frames[frame] if self.scene.drive_dim else np.zeros(0)

    def rays(self, frame: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Origins, directions and beam features of every pixel of ``frame``."""
        cam = self.cameras[frame]
        key = -1 if self.static_camera else frame
        if key not in self._rays:
            o, d = camera_rays(cam)
            self._rays[key] = (o, d, encode_beams(o, d, self.t_near, self.t_far, self.K))
        return self._rays[key]

    def frame_targets(self, frame: int) -> TeacherRays:
        if self.cache is not None and frame in self.cache:
            return self.cache[frame]
        o, d, _ = self.rays(frame)
        return teacher_targets(self.scene, self.drive(frame), o, d, self.t_near, self.t_far, self.N, self.M)

    def _prepare(self, frames: list[int]) -> None:
        def work(f):
            return f, self.frame_targets(f)

        for f in frames:
            self.rays(f)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                results = list(ex.map(work, frames))
        else:
            results = [work(f) for f in frames]
        for f, tr in results:
            self.masks[f] = tr.opacity > OPACITY_THRESHOLD
            if self.cache is not None:
                self.cache[f] = tr

    def targets(self, frame: int, pixels: np.ndarray) -> TeacherRays:
        if self.cache is not None:
            tr = self.frame_targets(frame)
            return TeacherRays(tr.segments[pixels], tr.pixel[pixels], tr.opacity[pixels])
        o, d, _ = self.rays(frame)
        return teacher_targets(self.scene, self.drive(frame), o[pixels], d[pixels],
                               self.t_near, self.t_far, self.N, self.M)


def foreground_mask(scene: AnalyticScene, camera: Camera, a, N: int = 64, t_near: float = 2.0,
                    t_far: float = 6.0, M: int = 4) -> np.ndarray:
    """(H, W) mask where the teacher's accumulated opacity exceeds 0.01."""
    o, d = camera_rays(camera)
    tr = teacher_targets(scene, a, o, d, t_near, t_far, N, M)
    return (tr.opacity > OPACITY_THRESHOLD).reshape(camera.height, camera.width)


@dataclass
class TrainingBatch:
    """Structure-of-arrays batch; indexing yields ``TrainingSample`` records."""

    frame: np.ndarray  # (R,) int
    pixel: np.ndarray  # (R,) int
    beams: np.ndarray  # (R, 3K)
    gt: np.ndarray  # (R, 3)
    segments: np.ndarray  # (R, M, 3)
    is_foreground: np.ndarray  # (R,) bool
    origins: np.ndarray | None = None
    directions: np.ndarray | None = None
    t_near: float = 2.0
    t_far: float = 6.0

    def __len__(self) -> int:
        return len(self.frame)

    def __getitem__(self, i: int) -> TrainingSample:
        ray = Ray(self.origins[i], self.directions[i], self.t_near, self.t_far)
        return TrainingSample(ray, int(self.frame[i]), PixelColor(self.gt[i]),
                              SegmentColors(self.segments[i]), bool(self.is_foreground[i]))

    def select(self, idx: np.ndarray) -> "TrainingBatch":
        pick = lambda a: None if a is None else a[idx]
        return TrainingBatch(self.frame[idx], self.pixel[idx], self.beams[idx], self.gt[idx],
                             self.segments[idx], self.is_foreground[idx], pick(self.origins),
                             pick(self.directions), self.t_near, self.t_far)

    @staticmethod
    def concat(batches: list["TrainingBatch"]) -> "TrainingBatch":
        cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
        has_rays = all(b.origins is not None for b in batches)
        return TrainingBatch(cat("frame"), cat("pixel"), cat("beams"), cat("gt"), cat("segments"),
                             cat("is_foreground"), cat("origins") if has_rays else None,
                             cat("directions") if has_rays else None, batches[0].t_near, batches[0].t_far)


def split_counts(batch_size: int, fg_fraction: float) -> tuple[int, int]:
    n_fg = int(math.floor(fg_fraction * batch_size + 1e-9))
    return n_fg, batch_size - n_fg


def sample_batch(dataset: Dataset, cfg: BatchConfig, rng: np.random.Generator,
                 frame: int | None = None) -> TrainingBatch:
    """Pixels of one randomly chosen training frame, foreground-biased."""
    if frame is None:
        frame = int(dataset.frames[rng.integers(len(dataset.frames))])
    mask = dataset.masks[frame]
    fg = np.flatnonzero(mask)
    bg = np.flatnonzero(~mask)
    n_fg, n_bg = split_counts(cfg.batch_size, cfg.foreground_fraction)
    if (n_fg and not len(fg)) or (n_bg and not len(bg)):
        log.warning("frame %d: degenerate foreground mask (%d fg / %d bg); sampling uniformly",
                    frame, len(fg), len(bg))
        pix = rng.integers(dataset.n_pixels, size=cfg.batch_size)
    else:
        pix = np.concatenate([fg[rng.integers(len(fg), size=n_fg)] if n_fg else np.zeros(0, int),
                              bg[rng.integers(len(bg), size=n_bg)] if n_bg else np.zeros(0, int)])
    o, d, beams = dataset.rays(frame)
    tr = dataset.targets(frame, pix)
    return TrainingBatch(np.full(len(pix), frame), pix, beams[pix], tr.pixel, tr.segments, mask[pix],
                         o[pix], d[pix], dataset.t_near, dataset.t_far)


# ----------------------------------------------------------------- losses


def loss_rs(pred, target) -> ad.Tensor:
    """Batch mean of the per-ray sum over segments and channels of squared error."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"segment shapes differ: {pred.shape} vs {target.shape}")
    return ad.square(pred - target).sum() * (1.0 / pred.shape[0])


def loss_r(pred, gt) -> ad.Tensor:
    """Batch mean of the per-ray squared pixel error."""
    pred = ad.as_tensor(pred)
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"pixel shapes differ: {pred.shape} vs {gt.shape}")
    return ad.square(pred - gt).sum() * (1.0 / pred.shape[0])


def total_loss(lr, lrs, lam: float):
    return lr + lam * lrs


def per_ray_losses(seg_pred: np.ndarray, seg_target: np.ndarray, gt: np.ndarray, lam: float) -> np.ndarray:
    pix = seg_pred.sum(axis=1)
    lr = ((pix - gt) ** 2).sum(axis=1)
    lrs = ((seg_pred - seg_target) ** 2).sum(axis=(1, 2))
    return lr + lam * lrs


# ------------------------------------------------------------ active pool


class ActivePool:
    """Bounded buffer of high-loss rays kept sorted by loss, highest first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("pool capacity must be >= 1")
        self.capacity = capacity
        self.rays: TrainingBatch | None = None
        self.loss = np.zeros(0)

    def __len__(self) -> int:
        return len(self.loss)

    @property
    def entries(self) -> list[tuple[TrainingSample, float]]:
        if self.rays is None:
            return []
        return [(self.rays[i], float(self.loss[i])) for i in range(len(self))]

    def keys(self) -> np.ndarray:
        if self.rays is None:
            return np.zeros(0, dtype=np.int64)
        return self.rays.frame.astype(np.int64) * (1 << 32) + self.rays.pixel.astype(np.int64)

    def _set(self, rays: TrainingBatch, loss: np.ndarray) -> None:
        order = np.argsort(-loss, kind="stable")[: self.capacity]
        self.rays = rays.select(order)
        self.loss = loss[order]

    def insert(self, rays: TrainingBatch, loss: np.ndarray) -> None:
        if len(loss) == 0:
            return
        loss = np.asarray(loss, dtype=np.float64)
        # a batch drawn with replacement can repeat a ray; keep its highest-loss copy
        new_keys = rays.frame.astype(np.int64) * (1 << 32) + rays.pixel.astype(np.int64)
        order = np.argsort(-loss, kind="stable")
        _, first = np.unique(new_keys[order], return_index=True)
        uniq = np.sort(order[first])
        if len(uniq) < len(loss):
            rays, loss, new_keys = rays.select(uniq), loss[uniq], new_keys[uniq]
        if self.rays is None:
            self._set(rays, loss)
            return
        keep = ~np.isin(self.keys(), new_keys)
        merged = TrainingBatch.concat([self.rays.select(np.flatnonzero(keep)), rays])
        self._set(merged, np.concatenate([self.loss[keep], loss]))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Indices of up to ``n`` distinct entries drawn uniformly."""
        if n >= len(self):
            return np.arange(len(self))
        return np.sort(rng.choice(len(self), size=n, replace=False))

    def update_losses(self, idx: np.ndarray, loss: np.ndarray) -> None:
        self.loss = self.loss.copy()
        self.loss[idx] = loss
        self._set(self.rays, self.loss)


def update_active_pool(pool: ActivePool, batch: TrainingBatch, losses: np.ndarray, j: float,
                       select: str = "highest") -> None:
    """Insert the ceil(j * len(batch)) highest-loss rays of ``batch`` into ``pool``."""
    if not 0 <= j <= 1:
        raise ConfigError(f"pool fraction must lie in [0, 1], got {j}")
    n = int(math.ceil(j * len(batch) - 1e-9))
    if n == 0:
        return
    losses = np.asarray(losses, dtype=np.float64)
    order = np.argsort(-losses if select == "highest" else losses, kind="stable")[:n]
    pool.insert(batch.select(order), losses[order])


# -------------------------------------------------------------- training


@dataclass
class TrainConfig:
    iterations: int = 1000
    lr: float = 5e-4
    lr_final_ratio: float = 0.05
    pool: bool = True
    distill: bool = True
    checkpoint_every: int = 0
    dtype: str = "float32"
    init_seed: int = 0
    fusion_window: int = 1

    def validate(self) -> list[str]:
        errs = []
        if self.iterations < 1:
            errs.append(f"train.iterations must be >= 1 (got {self.iterations})")
        if not self.lr > 0:
            errs.append(f"train.lr must be positive (got {self.lr})")
        if not 0 <= self.lr_final_ratio <= 1:
            errs.append("train.lr_final_ratio must lie in [0, 1]")
        if self.checkpoint_every < 0:
            errs.append("train.checkpoint_every must be >= 0")
        if self.dtype not in ("float32", "float64"):
            errs.append(f"train.dtype must be float32 or float64 (got {self.dtype!r})")
        if self.fusion_window < 0:
            errs.append("train.fusion_window must be >= 0")
        return errs


def cosine_lr(base: float, final_ratio: float, it: int, total: int) -> float:
    frac = it / max(total - 1, 1)
    return base * (final_ratio + (1 - final_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))


@dataclass
class TrainResult:
    model: NLDFModel
    fusion: FusionModule
    metrics: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    steps: int = 0
    pool: ActivePool | None = None


class Trainer:
    """Owns the student, the fusion module, the optimizer state and the pool."""

    def __init__(self, dataset: Dataset, model_cfg: NLDFConfig, batch_cfg: BatchConfig, train_cfg: TrainConfig):
        errs = model_cfg.validate() + batch_cfg.validate() + train_cfg.validate()
        if model_cfg.K != dataset.K or model_cfg.M != dataset.M:
            errs.append("model K/M must match the dataset's K/M")
        if errs:
            raise ConfigError("; ".join(errs))
        self.dataset = dataset
        self.batch_cfg = batch_cfg
        self.train_cfg = train_cfg
        dtype = np.dtype(train_cfg.dtype)
        model_cfg.t_near, model_cfg.t_far = dataset.t_near, dataset.t_far
        init_rng = np.random.default_rng([train_cfg.init_seed, 1])
        model_seed, fusion_seed = (int(s) for s in init_rng.integers(2 ** 31, size=2))
        self.model = NLDFModel(model_cfg, seed=model_seed, dtype=dtype)
        self.model.set_normalization(dataset.rays(dataset.frames[0])[2])
        self.fusion = FusionModule(dataset.signal.dim, model_cfg.cond_dim, train_cfg.fusion_window,
                                   seed=fusion_seed, dtype=dtype)
        self.batch_rng = np.random.default_rng([batch_cfg.seed, 2])
        self.pool_rng = np.random.default_rng([batch_cfg.seed, 3])
        self.pool = ActivePool(batch_cfg.capacity)
        self.lam = batch_cfg.lam if train_cfg.distill else 0.0
        self.steps = 0
        self.iteration = 0

    # parameters the fresh-batch step updates, and the subset a replay step does
    def all_params(self) -> list[ad.Parameter]:
        return self.model.parameters() + self.fusion.parameters()

    def named_params(self) -> list[tuple[str, ad.Parameter]]:
        return ([(f"student.{n}", p) for n, p in self.model.named_parameters()] +
                [(f"fusion.{n}", p) for n, p in self.fusion.named_parameters()])

    def fused_table(self) -> np.ndarray:
        return fuse_all(self.fusion, self.dataset.signal).astype(self.model.dtype)

    def _step(self, batch: TrainingBatch, cond, params: list[ad.Parameter], lr: float):
        for p in self.all_params():
            p.grad = None
        seg = self.model.segments(batch.beams, cond)
        pix = seg.sum(axis=1)
        lr_t = loss_r(pix, batch.gt)
        lrs_t = loss_rs(seg, batch.segments)
        loss = total_loss(lr_t, lrs_t, self.lam) if self.lam else lr_t
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at iteration {self.iteration}")
        loss.backward()
        ad.adam_step(params, lr)
        self.steps += 1
        seg_np = seg.data.astype(np.float64)
        per_ray = per_ray_losses(seg_np, batch.segments, batch.gt, self.lam)
        saturation = float(np.mean(np.any(seg_np.sum(axis=1) > 1.0, axis=1)))
        return lr_t.item(), lrs_t.item(), value, per_ray, saturation

    def train_step(self) -> dict:
        """One iteration: a fresh-batch step, then a replay step when due."""
        t0 = time.perf_counter()
        cfg, tcfg = self.batch_cfg, self.train_cfg
        lr = cosine_lr(tcfg.lr, tcfg.lr_final_ratio, self.iteration, tcfg.iterations)
        batch = sample_batch(self.dataset, cfg, self.batch_rng)
        frame = int(batch.frame[0])
        cond = fuse_window(self.fusion, self.dataset.signal, frame)
        try:
            lr_v, lrs_v, total, per_ray, sat = self._step(batch, cond, self.all_params(), lr)
        except TrainingDiverged:
            self._dump(batch)
            raise
        if tcfg.pool:
            update_active_pool(self.pool, batch, per_ray, cfg.pool_fraction, cfg.pool_select)
            if len(self.pool) and self.iteration % cfg.pool_every == 0:
                self.replay_step(lr)
        row = {"iter": self.iteration, "loss_r": lr_v, "loss_rs": lrs_v, "total": total,
               "saturation_rate": sat, "pool_size": len(self.pool),
               "ms_per_iter": (time.perf_counter() - t0) * 1000.0}
        self.iteration += 1
        return row

    def replay_step(self, lr: float) -> None:
        idx = self.pool.sample(self.batch_cfg.replay_size, self.pool_rng)
        batch = self.pool.rays.select(idx)
        # conditioning is a constant here: no gradient reaches the fusion module
        cond = self.fused_table()[batch.frame]
        try:
            _, _, _, per_ray, _ = self._step(batch, cond, self.model.parameters(), lr)
        except TrainingDiverged:
            self._dump(batch)
            raise
        self.pool.update_losses(idx, per_ray)

    dump_dir: Path | None = None

    def _dump(self, batch: TrainingBatch) -> None:
        if self.dump_dir is None:
            return
        path = Path(self.dump_dir) / f"diverged_iter{self.iteration}.npz"
        np.savez(path, frame=batch.frame, pixel=batch.pixel, beams=batch.beams, gt=batch.gt,
                 segments=batch.segments)
        log.error("non-finite loss; offending batch written to %s", path)

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.update({"model": self.model.config.to_dict(),
                     "fusion": {"d_raw": self.fusion.d_raw, "d_out": self.fusion.d_out,
                                "window": self.fusion.window},
                     "iteration": self.iteration})
        save_checkpoint(path, self.named_params(), seed=self.train_cfg.init_seed, step=self.steps, meta=meta)


def train(trainer: Trainer, out_dir: Path | None = None, deterministic: bool = True,
          on_iteration: Callable[[Trainer, dict], None] | None = None, meta: dict | None = None) -> TrainResult:
    """Run ``trainer.train_cfg.iterations`` iterations, logging and checkpointing.

    With ``deterministic`` the metrics CSV records 0 in ms_per_iter so that
    identical runs produce identical files; timings go to timings.csv.
    """
    tcfg = trainer.train_cfg
    result = TrainResult(trainer.model, trainer.fusion, pool=trainer.pool)
    ckpt_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        trainer.dump_dir = out_dir
    for _ in range(tcfg.iterations):
        row = trainer.train_step()
        result.metrics.append(row)
        if on_iteration is not None:
            on_iteration(trainer, row)
        it = row["iter"] + 1
        if ckpt_dir is not None and tcfg.checkpoint_every and it % tcfg.checkpoint_every == 0 and it < tcfg.iterations:
            path = ckpt_dir / f"step_{it:07d}.ckpt"
            trainer.save(path, meta)
            result.checkpoints.append(path)
    if ckpt_dir is not None:
        path = ckpt_dir / "final.ckpt"
        trainer.save(path, meta)
        result.checkpoints.append(path)
        write_metrics(out_dir / "metrics.csv", result.metrics, deterministic)
        if deterministic:
            with open(out_dir / "timings.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iter", "ms_per_iter"])
                for r in result.metrics:
                    w.writerow([r["iter"], f"{r['ms_per_iter']:.3f}"])
    result.steps = trainer.steps
    return result


def write_metrics(path, rows: list[dict], deterministic: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            ms = 0.0 if deterministic else r["ms_per_iter"]
            w.writerow([r["iter"], repr(r["loss_r"]), repr(r["loss_rs"]), repr(r["total"]),
                        repr(r["saturation_rate"]), r["pool_size"], f"{ms:.3f}"])


# ------------------------------------------------------------- evaluation


@dataclass
class FrameEval:
    loss_r: float
    loss_rs: float
    segment_mse: float
    student: np.ndarray  # (H*W, 3) unclamped
    teacher: np.ndarray  # (H*W, 3) unclamped


def evaluate_frames(model: NLDFModel, fusion: FusionModule, dataset: Dataset, frames: list[int],
                    lam: float = 0.2) -> list[FrameEval]:
    """Full-frame student vs teacher losses for each frame."""
    out = []
    with ad.no_grad():
        for f in frames:
            cond = fuse_window(fusion, dataset.signal, f).data if fusion.d_out else np.zeros(0, model.dtype)
            _, _, beams = dataset.rays(f)
            pix, seg = render_rays_student(model, beams, cond.astype(model.dtype))
            tr = dataset.frame_targets(f)
            pix, seg = pix.astype(np.float64), seg.astype(np.float64)
            lr = float(np.mean(((pix - tr.pixel) ** 2).sum(axis=1)))
            lrs = float(np.mean(((seg - tr.segments) ** 2).sum(axis=(1, 2))))
            out.append(FrameEval(lr, lrs, float(np.mean((seg - tr.segments) ** 2)), pix, tr.pixel))
    return out


def load_models(path) -> tuple[NLDFModel, FusionModule, dict]:
    """Student and fusion module restored from a checkpoint written by ``Trainer.save``."""
    header, tensors = read_checkpoint(path)
    meta = header.get("meta", {})
    if "model" not in meta or "fusion" not in meta:
        raise ValueError(f"{path}: checkpoint lacks model/fusion metadata")
    dtype = np.dtype(header["dtype"])
    model = NLDFModel(NLDFConfig.from_dict(meta["model"]), seed=0, dtype=dtype)
    fz = meta["fusion"]
    fusion = FusionModule(fz["d_raw"], fz["d_out"], fz["window"], seed=0, dtype=dtype)
    named = ([(f"student.{n}", p) for n, p in model.named_parameters()] +
             [(f"fusion.{n}", p) for n, p in fusion.named_parameters()])
    load_into(named, header, tensors)
    return model, fusion, header
