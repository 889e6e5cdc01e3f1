"""Command-line entry point: ``nldf <command> [options]``.

Every command writes into a run directory (``--run-dir``, default taken
from the config) and ends with a ``report.json``. Failures print a single
JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .bench import bench
from .config import (
    RunConfig, build_cameras, build_dataset, build_scene, build_signal, content_hash, heldout_frames,
    load_config, train_frames,
)
from .conditioning import FusionModule, fuse_all
from .experiments import ABLATIONS, evaluate_heldout, pipeline_gradcheck
from .geometry import ConfigError, DomainError
from .imageio import read_frame, write_frame
from .metrics import MetricError, MetricReport
from .render import render_frame_teacher
from .student import NLDFModel, render_frame_student
from .training import Trainer, TrainingDiverged, load_models, train

log = logging.getLogger("nldf")

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


class CLIError(RuntimeError):
    def __init__(self, kind: str, messages: list[str]):
        super().__init__("; ".join(messages))
        self.kind = kind
        self.messages = messages


# ----------------------------------------------------------------- helpers


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().check()
    return cfg.resolved()


def _run_dir(args, cfg: RunConfig) -> Path:
    d = Path(args.run_dir or cfg.output.run_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "frames").mkdir(exist_ok=True)
    return d


def _describe_run(run_dir: Path, cfg: RunConfig, scene, signal) -> str:
    """Config copy plus a content hash of all inputs, next to the outputs."""
    (run_dir / "config.json").write_text(cfg.canonical_json() + "\n")
    digest = content_hash(cfg, scene, signal)
    (run_dir / "inputs.sha256").write_text(digest + "\n")
    return digest


def _write_report(run_dir: Path, report: dict) -> None:
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _frame_list(frames_arg: str | None, default: list[int], n_frames: int) -> list[int]:
    if not frames_arg:
        return default
    out: list[int] = []
    for part in frames_arg.split(","):
        if ":" in part:
            lo, hi = part.split(":")
            out.extend(range(int(lo), int(hi)))
        else:
            out.append(int(part))
    bad = [f for f in out if not 0 <= f < n_frames]
    if bad:
        raise CLIError("frames", [f"frame {f} outside [0, {n_frames})" for f in bad])
    return out


def _frame_path(run_dir: Path, prefix: str, frame: int, fmt: str) -> Path:
    return run_dir / "frames" / f"{prefix}_{frame:04d}.{fmt}"


# ---------------------------------------------------------------- commands


def cmd_scene_gen(args) -> dict:
    cfg = _config(args)
    run_dir = _run_dir(args, cfg)
    scene, signal = build_scene(cfg), build_signal(cfg)
    scene.save(run_dir / "scene.json")
    signal.save_csv(run_dir / "signal.csv")
    digest = _describe_run(run_dir, cfg, scene, signal)
    return {"command": "scene gen", "content_hash": digest, "blobs": len(scene.blobs),
            "drive_dim": scene.drive_dim, "frames": signal.T}


def cmd_render_teacher(args) -> dict:
    cfg = _config(args)
    run_dir = _run_dir(args, cfg)
    scene, signal = build_scene(cfg), build_signal(cfg)
    digest = _describe_run(run_dir, cfg, scene, signal)
    cams = build_cameras(cfg, signal.T)
    frames = _frame_list(args.frames, [0], signal.T)
    r = cfg.render
    evals, written = [], []
    for f in frames:
        a = signal.frames[f] if scene.drive_dim else np.zeros(0)
        img, n = render_frame_teacher(scene, cams[f], a, N=r.N, t_near=r.t_near, t_far=r.t_far, M=cfg.model.M)
        path = _frame_path(run_dir, "teacher", f, cfg.output.frame_format)
        write_frame(path, img)
        evals.append(n)
        written.append(str(path.relative_to(run_dir)))
    return {"command": "render-teacher", "content_hash": digest, "frames": written, "field_evals": evals}


def cmd_distill(args) -> dict:
    cfg = _config(args)
    if args.iterations is not None:
        cfg.train.iterations = args.iterations
    run_dir = _run_dir(args, cfg)
    scene, signal = build_scene(cfg), build_signal(cfg)
    digest = _describe_run(run_dir, cfg, scene, signal)
    t0 = time.perf_counter()
    ds = build_dataset(cfg, train_frames(cfg), scene, signal, args.threads)
    trainer = Trainer(ds, cfg.model, cfg.batch, cfg.train)
    every = max(1, cfg.train.iterations // 20)

    def progress(tr, row):
        if row["iter"] % every == 0:
            log.info("iter %d  loss_r %.3g  loss_rs %.3g  pool %d", row["iter"], row["loss_r"],
                     row["loss_rs"], row["pool_size"])

    result = train(trainer, run_dir, deterministic=args.deterministic, on_iteration=progress,
                   meta={"content_hash": digest})
    report = {"command": "distill", "content_hash": digest, "iterations": cfg.train.iterations,
              "optimizer_steps": result.steps, "final": {k: result.metrics[-1][k] for k in
                                                         ("loss_r", "loss_rs", "total", "saturation_rate")},
              "checkpoints": [str(p.relative_to(run_dir)) for p in result.checkpoints]}
    held = heldout_frames(cfg)
    if held and not args.skip_eval:
        hds = build_dataset(cfg, held, scene, signal, args.threads)
        ev = evaluate_heldout(trainer, hds, held, cfg.batch.lam)
        report["heldout"] = ev.to_dict()
        f = held[0]
        img, _ = render_frame_student(trainer.model, hds.cameras[f], signal, f, cond=trainer.fused_table()[f])
        write_frame(_frame_path(run_dir, "student", f, cfg.output.frame_format), img)
    if not args.deterministic:
        report["wall_seconds"] = time.perf_counter() - t0
    return report


def _load_student(args, cfg: RunConfig) -> tuple[NLDFModel, FusionModule]:
    if args.checkpoint:
        model, fusion, _ = load_models(args.checkpoint)
        return model, fusion
    if not getattr(args, "untrained", False):
        raise CLIError("usage", ["--checkpoint is required (or --untrained for structural runs)"])
    model = NLDFModel(cfg.model, seed=cfg.train.init_seed, dtype=np.dtype(cfg.train.dtype))
    fusion = FusionModule(cfg.signal.dim, cfg.model.cond_dim, cfg.train.fusion_window, seed=cfg.train.init_seed,
                          dtype=np.dtype(cfg.train.dtype))
    return model, fusion


def cmd_render_student(args) -> dict:
    cfg = _config(args)
    run_dir = _run_dir(args, cfg)
    scene, signal = build_scene(cfg), build_signal(cfg)
    digest = _describe_run(run_dir, cfg, scene, signal)
    model, fusion = _load_student(args, cfg)
    cams = build_cameras(cfg, signal.T)
    table = fuse_all(fusion, signal).astype(model.dtype)
    frames = _frame_list(args.frames, heldout_frames(cfg)[:1] or [0], signal.T)
    written, calls = [], []
    for f in frames:
        img, n = render_frame_student(model, cams[f], signal, f, cond=table[f])
        path = _frame_path(run_dir, "student", f, cfg.output.frame_format)
        write_frame(path, img)
        written.append(str(path.relative_to(run_dir)))
        calls.append(n)
    return {"command": "render-student", "content_hash": digest, "frames": written, "forward_calls": calls}


def _image_pairs(pred: Path, ref: Path) -> list[tuple[Path, Path]]:
    if pred.is_dir() != ref.is_dir():
        raise CLIError("usage", ["--pred and --ref must both be files or both be directories"])
    if not pred.is_dir():
        return [(pred, ref)]
    pairs = []
    for p in sorted(pred.iterdir()):
        if p.suffix.lower() in (".ppm", ".png"):
            q = ref / p.name
            if not q.exists():
                raise CLIError("io", [f"{q}: missing reference for {p.name}"])
            pairs.append((p, q))
    return pairs


def cmd_eval(args) -> dict:
    if args.pred or args.ref:
        if not (args.pred and args.ref):
            raise CLIError("usage", ["--pred and --ref go together"])
        run_dir = Path(args.run_dir or "runs/eval")
        run_dir.mkdir(parents=True, exist_ok=True)
        rep = MetricReport()
        pairs = _image_pairs(Path(args.pred), Path(args.ref))
        for p, q in pairs:
            rep.add(read_frame(p), read_frame(q))
        with open(run_dir / "metrics.csv", "w", newline="") as fh:
            import csv
            csv.writer(fh).writerows(rep.csv_rows())
        return {"command": "eval", "pairs": [[str(p), str(q)] for p, q in pairs], **rep.to_dict()}
    cfg = _config(args)
    run_dir = _run_dir(args, cfg)
    scene, signal = build_scene(cfg), build_signal(cfg)
    digest = _describe_run(run_dir, cfg, scene, signal)
    model, fusion = _load_student(args, cfg)
    held = _frame_list(args.frames, heldout_frames(cfg), signal.T)
    if not held:
        raise CLIError("usage", ["no frames to evaluate (split.heldout_frames is 0 and --frames not given)"])
    hds = build_dataset(cfg, held, scene, signal, args.threads)
    holder = type("Models", (), {"model": model, "fusion": fusion})()
    ev = evaluate_heldout(holder, hds, held, cfg.batch.lam)
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        import csv
        csv.writer(fh).writerows(ev.report.csv_rows())
    return {"command": "eval", "content_hash": digest, "heldout_frames": held, **ev.to_dict()}


def cmd_bench(args) -> dict:
    cfg = _config(args)
    run_dir = _run_dir(args, cfg)
    scene, signal = build_scene(cfg), build_signal(cfg)
    digest = _describe_run(run_dir, cfg, scene, signal)
    model, fusion = _load_student(args, cfg)
    if args.untrained and not args.checkpoint:
        model.set_normalization(build_dataset(cfg, [0], scene, signal).rays(0)[2])
    r = cfg.render
    rep = bench(scene, model, fusion, signal, build_cameras(cfg, signal.T), N=r.N, frames=args.frames,
                t_near=r.t_near, t_far=r.t_far)
    out = rep.to_dict()
    out.update(command="bench", content_hash=digest, trained=bool(args.checkpoint))
    return out


def cmd_gradcheck(args) -> dict:
    err = pipeline_gradcheck(args.seed, blocks=args.blocks, width=args.width,
                             max_coords=args.max_coords or None, eps=args.eps)
    err = float(err)
    ok = bool(err < args.tolerance)
    report = {"command": "gradcheck", "max_rel_error": err, "tolerance": args.tolerance, "passed": ok,
              "blocks": args.blocks, "width": args.width, "eps": args.eps}
    if args.run_dir:
        Path(args.run_dir).mkdir(parents=True, exist_ok=True)
    if not ok:
        raise CLIError("gradcheck", [f"max relative error {err:.3g} >= {args.tolerance}"])
    return report


def cmd_ablate(args) -> dict:
    cfg = _config(args)
    run_dir = _run_dir(args, cfg) / f"ablate_{args.kind}"
    scene, signal = build_scene(cfg), build_signal(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = _describe_run(run_dir, cfg, scene, signal)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    kw = {"seeds": seeds, "threads": args.threads}
    if args.steps:
        kw["steps"] = args.steps
    res = ABLATIONS[args.kind](cfg, **kw)
    res.write(run_dir)
    return {"command": f"ablate {args.kind}", "content_hash": digest, "passed": res.passed,
            "summary": res.summary, "_run_dir": str(run_dir)}


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nldf", description="Distil an analytic radiance field into a "
                                                          "per-ray light-field student.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (defaults when omitted)")
    common.add_argument("--run-dir", help="output directory (overrides output.run_dir)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: $NLDF_THREADS or 1)")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics and timing-free metrics.csv")
    common.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    scene = sub.add_parser("scene", help="scene utilities")
    scene_sub = scene.add_subparsers(dest="scene_command", required=True)
    gen = scene_sub.add_parser("gen", parents=[common], help="write scene.json and signal.csv")
    gen.set_defaults(func=cmd_scene_gen)

    rt = sub.add_parser("render-teacher", parents=[common], help="volume-render frames with the teacher")
    rt.add_argument("--frames", help="e.g. 0,5,10 or 0:20 (default 0)")
    rt.set_defaults(func=cmd_render_teacher)

    d = sub.add_parser("distill", parents=[common], help="train the student")
    d.add_argument("--iterations", type=int)
    d.add_argument("--skip-eval", action="store_true", help="skip held-out evaluation")
    d.set_defaults(func=cmd_distill)

    rs = sub.add_parser("render-student", parents=[common], help="render frames with a trained student")
    rs.add_argument("--checkpoint")
    rs.add_argument("--untrained", action="store_true")
    rs.add_argument("--frames")
    rs.set_defaults(func=cmd_render_student)

    ev = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of images or of a checkpoint")
    ev.add_argument("--pred", help="image file or directory")
    ev.add_argument("--ref", help="reference image file or directory")
    ev.add_argument("--checkpoint")
    ev.add_argument("--untrained", action="store_true")
    ev.add_argument("--frames")
    ev.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="teacher vs student rendering benchmark")
    b.add_argument("--checkpoint")
    b.add_argument("--untrained", action="store_true", help="structural accounting with fresh weights")
    b.add_argument("--frames", type=int, default=10)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", parents=[common], help="end-to-end finite-difference gradient check")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--blocks", type=int, default=2)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--max-coords", type=int, default=0, help="coordinates per parameter (0 = all)")
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", parents=[common], help="run an ablation study")
    a.add_argument("kind", choices=sorted(ABLATIONS))
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--steps", type=int, help="optimizer-step budget per run")
    a.set_defaults(func=cmd_ablate)
    return p


SUMMARY_KEYS = ("command", "passed", "content_hash", "eval_ratio", "wallclock_speedup", "max_rel_error",
                "mean_psnr_db", "mean_ssim", "psnr_db", "ssim", "optimizer_steps")


def _summary(report: dict) -> dict:
    """Short stdout line; the full report is in report.json."""
    out = {k: report[k] for k in SUMMARY_KEYS if k in report}
    if "heldout" in report:
        out["heldout_psnr_db"] = report["heldout"]["psnr_db"]
        out["heldout_ssim"] = report["heldout"]["ssim"]
    return out


def _fail(kind: str, messages: list[str], code: int) -> int:
    print(json.dumps({"error": kind, "messages": messages}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = args.threads if args.threads is not None else int(os.environ.get("NLDF_THREADS", "1") or 1)
    args.threads = 1 if args.deterministic else max(1, threads)
    try:
        with threadpool_limits(limits=args.threads):
            report = args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc).split("\n"), EXIT_CONFIG)
    except CLIError as exc:
        return _fail(exc.kind, exc.messages, EXIT_CONFIG if exc.kind == "usage" else EXIT_RUNTIME)
    except TrainingDiverged as exc:
        return _fail("diverged", [str(exc)], EXIT_RUNTIME)
    except (OSError, ValueError, DomainError, MetricError, KeyError) as exc:
        return _fail(type(exc).__name__, [str(exc)], EXIT_RUNTIME)
    target = report.pop("_run_dir", None) or args.run_dir
    if target is None and args.command not in ("gradcheck", "eval"):
        target = (load_config(args.config) if args.config else RunConfig()).output.run_dir
    if target is None and args.command == "eval":
        target = "runs/eval"
    if target is not None:
        Path(target).mkdir(parents=True, exist_ok=True)
        _write_report(Path(target), report)
    print(json.dumps(_summary(report)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
