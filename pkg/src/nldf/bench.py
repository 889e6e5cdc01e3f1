"""Teacher vs student rendering benchmark: structural counts and wall time."""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .conditioning import DrivingSignal, FusionModule, fuse_all
from .geometry import Camera
from .render import render_frame_teacher
from .student import ForwardCounter, NLDFModel, render_frame_student
from .teacher import AnalyticScene, FieldCounter


@dataclass
class PathStats:
    evals: int  # field evaluations (teacher) or network forwards (student)
    wall_ms_per_frame: float
    frames: int


@dataclass
class BenchReport:
    width: int
    height: int
    N: int
    frames: int
    teacher: PathStats
    student: PathStats
    eval_ratio: float
    wallclock_speedup: float
    hardware: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["teacher"]["field_evals"] = d["teacher"].pop("evals")
        d["student"]["forward_calls"] = d["student"].pop("evals")
        return d


def hardware_note() -> str:
    return f"{platform.machine()} {platform.processor() or 'cpu'}, {os.cpu_count()} logical cores, " \
           f"python {platform.python_version()}, numpy {np.__version__}"


def _timed(fn, n: int) -> list[float]:
    times = []
    for i in range(n):
        t0 = time.perf_counter()
        fn(i)
        times.append((time.perf_counter() - t0) * 1000.0)
    return times


def bench(scene: AnalyticScene, model: NLDFModel, fusion: FusionModule, signal: DrivingSignal,
          cameras: list[Camera], N: int = 64, frames: int = 10, t_near: float = 2.0,
          t_far: float = 6.0) -> BenchReport:
    """Render ``frames`` frames with each path after one untimed warm-up frame.

    Counts cover only the timed frames and are checked against W*H*N*F and W*H*F.
    """
    cam0 = cameras[0]
    W, H = cam0.width, cam0.height
    pick = lambda i: i % signal.T
    t_ctr, s_ctr = FieldCounter(), ForwardCounter()
    table = fuse_all(fusion, signal).astype(model.dtype)

    def teacher(i, ctr=None):
        f = pick(i)
        a = signal.frames[f] if scene.drive_dim else np.zeros(0)
        render_frame_teacher(scene, cameras[f], a, N=N, t_near=t_near, t_far=t_far, M=model.config.M, counter=ctr)

    def student(i, ctr=None):
        f = pick(i)
        render_frame_student(model, cameras[f], signal, f, counter=ctr, cond=table[f])

    teacher(0)  # warm-up, not counted
    t_times = _timed(lambda i: teacher(i, t_ctr), frames)
    student(0)
    s_times = _timed(lambda i: student(i, s_ctr), frames)
    if t_ctr.count != W * H * N * frames:
        raise AssertionError(f"teacher made {t_ctr.count} field evaluations, expected {W * H * N * frames}")
    if s_ctr.count != W * H * frames:
        raise AssertionError(f"student made {s_ctr.count} forwards, expected {W * H * frames}")
    t_ms, s_ms = statistics.median(t_times), statistics.median(s_times)
    return BenchReport(W, H, N, frames, PathStats(t_ctr.count, t_ms, frames), PathStats(s_ctr.count, s_ms, frames),
                       t_ctr.count / s_ctr.count, t_ms / s_ms, hardware_note())
