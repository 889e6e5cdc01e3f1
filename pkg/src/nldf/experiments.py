"""Training runs with held-out evaluation, and the three ablation studies."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import (
    RunConfig, build_dataset, build_scene, build_signal, heldout_frames, sub_seed, train_frames,
)
from .metrics import MetricReport
from .render import Image
from .student import render_rays_student
from .training import (
    BatchConfig, Dataset, Trainer, TrainingBatch, evaluate_frames, per_ray_losses, sample_batch, train,
)

log = logging.getLogger(__name__)

CHECKPOINT_FRACTIONS = (0.25, 0.5, 1.0)


@dataclass
class HeldoutEval:
    psnr_db: float
    ssim: float
    segment_mse: float
    loss_r: float
    loss_rs: float
    total: float
    background_max: float
    report: MetricReport = field(repr=False, default_factory=MetricReport)

    def to_dict(self) -> dict:
        return {"psnr_db": self.psnr_db, "ssim": self.ssim, "segment_mse": self.segment_mse,
                "loss_r": self.loss_r, "loss_rs": self.loss_rs, "total": self.total,
                "background_max": self.background_max, "frames": self.report.to_dict()}


def evaluate_heldout(trainer: Trainer, dataset: Dataset, frames: list[int], lam: float = 0.2) -> HeldoutEval:
    """Student vs teacher on whole frames: image metrics and the training losses."""
    evals = evaluate_frames(trainer.model, trainer.fusion, dataset, frames, lam)
    W, H = dataset.width, dataset.height
    rep = MetricReport()
    bg_max = 0.0
    for f, e in zip(frames, evals):
        pred = Image.from_flat(np.clip(e.student, 0, 1), W, H)
        ref = Image.from_flat(np.clip(e.teacher, 0, 1), W, H)
        rep.add(pred, ref)
        bg = ~dataset.masks[f] if f in dataset.masks else np.zeros(W * H, bool)
        if bg.any():
            bg_max = max(bg_max, float(np.clip(e.student[bg], 0, 1).max()))
    lr = float(np.mean([e.loss_r for e in evals]))
    lrs = float(np.mean([e.loss_rs for e in evals]))
    return HeldoutEval(rep.mean_psnr, rep.mean_ssim, float(np.mean([e.segment_mse for e in evals])),
                       lr, lrs, lr + lam * lrs, bg_max, rep)


def probe_batch(dataset: Dataset, n_rays: int, seed: int) -> TrainingBatch:
    """A fixed set of training rays spread over several frames."""
    rng = np.random.default_rng([seed, 7])
    frames = dataset.frames[:: max(1, len(dataset.frames) // 8)][:8]
    per = max(1, n_rays // len(frames))
    cfg = BatchConfig(batch_size=per)
    return TrainingBatch.concat([sample_batch(dataset, cfg, rng, frame=f) for f in frames])


def probe_loss(trainer: Trainer, probe: TrainingBatch, lam: float) -> float:
    table = trainer.fused_table()
    with ad.no_grad():
        _, seg = render_rays_student(trainer.model, probe.beams, table[probe.frame])
    return float(np.mean(per_ray_losses(seg.astype(np.float64), probe.segments, probe.gt, lam)))


@dataclass
class RunOutcome:
    label: str
    seed: int
    steps: int
    heldout: HeldoutEval | None
    probe: dict[float, float]
    metrics: list[dict]

    def row(self) -> dict:
        h = self.heldout
        out = {"variant": self.label, "seed": self.seed, "steps": self.steps}
        if h is not None:
            out.update(psnr_db=h.psnr_db, ssim=h.ssim, segment_mse=h.segment_mse, heldout_total=h.total)
        for frac, v in sorted(self.probe.items()):
            out[f"probe_total@{int(frac * 100)}%"] = v
        return out


def run_variant(cfg: RunConfig, label: str, seed: int, *, steps: int | None = None,
                heldout: bool = True, probe_rays: int = 0, out_dir: Path | None = None,
                threads: int = 1, data_cache: dict | None = None) -> RunOutcome:
    """Train one configuration with the given seed and evaluate it.

    ``steps`` fixes the optimizer-step budget: with replay enabled every
    iteration makes two steps, so half as many iterations are run.
    """
    cfg = RunConfig.from_dict(cfg.to_dict(), cfg.source)
    cfg.seeds = {k: v for k, v in cfg.seeds.items() if k in ("scene", "signal")}
    cfg.seeds.update(init=sub_seed(seed, "init"), batch=sub_seed(seed, "batch"))
    cfg = cfg.resolved()
    if steps is not None:
        per_iter = 2 if cfg.train.pool and cfg.batch.pool_every == 1 else 1
        if steps % per_iter:
            raise ValueError(f"step budget {steps} is not a multiple of {per_iter}")
        cfg.train.iterations = steps // per_iter
    cache = data_cache if data_cache is not None else {}
    if "train" not in cache:
        scene, signal = build_scene(cfg), build_signal(cfg)
        cache["train"] = build_dataset(cfg, train_frames(cfg), scene, signal, threads)
        cache["heldout"] = build_dataset(cfg, heldout_frames(cfg), scene, signal, threads) \
            if cfg.split.heldout_frames else None
    ds = cache["train"]
    trainer = Trainer(ds, cfg.model, cfg.batch, cfg.train)
    lam_probe = cfg.batch.lam
    probe = probe_batch(ds, probe_rays, 0) if probe_rays else None
    total_steps = cfg.train.iterations * (2 if cfg.train.pool and cfg.batch.pool_every == 1 else 1)
    marks = {int(round(f * total_steps)): f for f in CHECKPOINT_FRACTIONS}
    probes: dict[float, float] = {}

    def hook(tr: Trainer, row: dict) -> None:
        if probe is not None and tr.steps in marks and marks[tr.steps] not in probes:
            probes[marks[tr.steps]] = probe_loss(tr, probe, lam_probe)

    result = train(trainer, out_dir, deterministic=True, on_iteration=hook)
    held = None
    if heldout and cache.get("heldout") is not None:
        held = evaluate_heldout(trainer, cache["heldout"], heldout_frames(cfg), cfg.batch.lam)
    log.info("%s seed %d: %d steps%s", label, seed, trainer.steps,
             f", held-out PSNR {held.psnr_db:.2f} dB" if held else "")
    return RunOutcome(label, seed, trainer.steps, held, probes, result.metrics)


# ---------------------------------------------------------------- ablations


@dataclass
class AblationResult:
    kind: str
    rows: list[dict]
    summary: dict
    passed: bool

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        keys: list[str] = []
        for r in self.rows:
            keys += [k for k in r if k not in keys]
        with open(out_dir / "table.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in self.rows:
                w.writerow([_fmt(r.get(k, "")) for k in keys])
        (out_dir / "report.json").write_text(json.dumps(
            {"kind": self.kind, "summary": self.summary, "passed": self.passed, "rows": self.rows},
            indent=2, sort_keys=True))


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _median(rows: list[dict], variant: str, key: str) -> float:
    return float(statistics.median(r[key] for r in rows if r["variant"] == variant))


def ablate_distill(cfg: RunConfig, seeds=(0, 1, 2), steps: int | None = None, threads: int = 1) -> AblationResult:
    """lambda = 0.2 against lambda = 0 at equal iterations; held-out segment MSE must be lower with it."""
    base = RunConfig.from_dict(cfg.to_dict(), cfg.source)
    base.ablation.pool = False
    cache: dict = {}
    rows = []
    for s in seeds:
        for label, on in (("distill", True), ("no-distill", False)):
            v = RunConfig.from_dict(base.to_dict(), base.source)
            v.ablation.distill = on
            rows.append(run_variant(v, label, s, steps=steps, threads=threads, data_cache=cache).row())
    on, off = _median(rows, "distill", "segment_mse"), _median(rows, "no-distill", "segment_mse")
    summary = {"median_segment_mse": {"distill": on, "no-distill": off},
               "median_psnr_db": {"distill": _median(rows, "distill", "psnr_db"),
                                  "no-distill": _median(rows, "no-distill", "psnr_db")}}
    summary["psnr_delta_db"] = summary["median_psnr_db"]["distill"] - summary["median_psnr_db"]["no-distill"]
    return AblationResult("distill", rows, summary, on < off)


def ablate_pool(cfg: RunConfig, seeds=(0, 1, 2), steps: int = 800, probe_rays: int = 2048,
                threads: int = 1) -> AblationResult:
    """Replay on against off at equal optimizer steps, compared on a fixed probe of training rays."""
    cache: dict = {}
    rows = []
    probes: dict[tuple[str, int], dict] = {}
    for s in seeds:
        for label, on in (("pool", True), ("no-pool", False)):
            v = RunConfig.from_dict(cfg.to_dict(), cfg.source)
            v.ablation.pool = on
            out = run_variant(v, label, s, steps=steps, heldout=False, probe_rays=probe_rays,
                              threads=threads, data_cache=cache)
            rows.append(out.row())
            probes[(label, s)] = out.probe
    wins = {}
    for s in seeds:
        wins[s] = all(probes[("pool", s)][f] <= probes[("no-pool", s)][f] for f in CHECKPOINT_FRACTIONS)
    medians = {f"{int(f * 100)}%": {"pool": statistics.median(probes[("pool", s)][f] for s in seeds),
                                    "no-pool": statistics.median(probes[("no-pool", s)][f] for s in seeds)}
               for f in CHECKPOINT_FRACTIONS}
    n_wins = sum(wins.values())
    summary = {"seed_wins": {str(k): v for k, v in wins.items()}, "wins": n_wins, "median_probe_total": medians}
    return AblationResult("pool", rows, summary, n_wins >= 2)


def ablate_depth(cfg: RunConfig, seeds=(0, 1, 2), blocks=(2, 4, 8), steps: int | None = None,
                 threads: int = 1) -> AblationResult:
    """Held-out metrics against residual depth at equal steps."""
    cache: dict = {}
    rows = []
    for s in seeds:
        for b in blocks:
            v = RunConfig.from_dict(cfg.to_dict(), cfg.source)
            v.ablation.blocks = b
            rows.append(run_variant(v, f"B={b}", s, steps=steps, threads=threads, data_cache=cache).row())
    summary = {f"B={b}": {k: _median(rows, f"B={b}", k) for k in ("psnr_db", "ssim", "heldout_total")}
               for b in blocks}
    lo, hi = f"B={min(blocks)}", f"B={max(blocks)}"
    passed = summary[hi]["heldout_total"] <= summary[lo]["heldout_total"]
    return AblationResult("depth", rows, summary, passed)


ABLATIONS = {"distill": ablate_distill, "pool": ablate_pool, "depth": ablate_depth}


# ------------------------------------------------------------- grad check


def pipeline_gradcheck(seed: int = 0, blocks: int = 2, width: int = 32, n_rays: int = 8,
                       max_coords: int | None = None, eps: float = 1e-5) -> float:
    """End-to-end finite-difference check: fusion -> student -> loss_r + 0.2 loss_rs, float64."""
    from .conditioning import fuse_window
    from .geometry import Camera, Pose
    from .conditioning import generate_signal
    from .student import NLDFConfig
    from .teacher import default_talking_scene
    from .training import TrainConfig, loss_r, loss_rs, total_loss

    sig = generate_signal("sinusoid-mixture", 8, 4, seed)
    cam = Camera.centered(Pose.look_at([0, 0, 4.0]), 16, 16, 16)
    ds = Dataset(default_talking_scene(seed, 4), sig, [cam] * 8, [2], N=32, cache_targets=True)
    tr = Trainer(ds, NLDFConfig(blocks=blocks, width=width, cond_dim=8), BatchConfig(batch_size=n_rays),
                 TrainConfig(dtype="float64", init_seed=seed, fusion_window=1))
    # move off the identity initialization so every block contributes a gradient
    rng = np.random.default_rng([seed, 11])
    for p in tr.all_params():
        p.data += rng.normal(0, 0.05, p.shape)
    batch = sample_batch(ds, BatchConfig(batch_size=n_rays), np.random.default_rng([seed, 12]))

    def loss():
        seg = tr.model.segments(batch.beams, fuse_window(tr.fusion, sig, 2))
        return total_loss(loss_r(seg.sum(axis=1), batch.gt), loss_rs(seg, batch.segments), 0.2)

    return ad.grad_check(loss, tr.all_params(), eps=eps, max_coords=max_coords, seed=seed)
