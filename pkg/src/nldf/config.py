"""Run configuration: JSON in, validated dataclasses and built objects out.

Every constraint is checked on load and all violations are reported at once,
each prefixed with the file and the dotted key it came from.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .conditioning import DrivingSignal, generate_signal
from .geometry import Camera, ConfigError, orbit_poses
from .student import NLDFConfig
from .teacher import AnalyticScene, default_talking_scene, static_scene
from .training import BatchConfig, Dataset, TrainConfig

SEED_STREAMS = ("scene", "signal", "init", "batch")


def sub_seed(seed: int, stream: str) -> int:
    """Independent 31-bit seed for a named stream of the master seed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(stream.encode())])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


@dataclass
class SceneConfig:
    kind: str = "default"  # default | static | file
    path: str | None = None
    dim: int = 4

    def validate(self) -> list[str]:
        errs = []
        if self.kind not in ("default", "static", "file"):
            errs.append(f"scene.kind must be 'default', 'static' or 'file' (got {self.kind!r})")
        if self.kind == "file" and not self.path:
            errs.append("scene.path is required when scene.kind is 'file'")
        if self.dim < 0:
            errs.append(f"scene.dim must be >= 0 (got {self.dim})")
        return errs


@dataclass
class SignalConfig:
    kind: str = "sinusoid-mixture"
    frames: int = 120
    dim: int = 4
    fps: float = 25.0
    path: str | None = None

    def validate(self) -> list[str]:
        errs = []
        if self.path is None and self.kind not in ("sinusoid-mixture", "bandlimited-noise"):
            errs.append(f"signal.kind must be 'sinusoid-mixture' or 'bandlimited-noise' (got {self.kind!r})")
        if self.frames < 1:
            errs.append(f"signal.frames must be >= 1 (got {self.frames})")
        if self.dim < 1:
            errs.append(f"signal.dim must be >= 1 (got {self.dim})")
        if not self.fps > 0:
            errs.append(f"signal.fps must be positive (got {self.fps})")
        return errs


@dataclass
class CameraConfig:
    width: int = 64
    height: int = 64
    focal: float = 64.0
    radius: float = 4.0
    yaw_amplitude: float = 0.0
    pitch_amplitude: float = 0.0

    def validate(self) -> list[str]:
        errs = []
        if self.width < 1 or self.height < 1:
            errs.append(f"camera.width and camera.height must be >= 1 (got {self.width}x{self.height})")
        if not self.focal > 0:
            errs.append(f"camera.focal must be positive (got {self.focal})")
        if not self.radius > 0:
            errs.append(f"camera.radius must be positive (got {self.radius})")
        return errs


@dataclass
class RenderConfig:
    N: int = 64
    t_near: float = 2.0
    t_far: float = 6.0

    def validate(self) -> list[str]:
        errs = []
        if self.N < 1:
            errs.append(f"render.N must be >= 1 (got {self.N})")
        if not 0 <= self.t_near < self.t_far:
            errs.append(f"render bounds need 0 <= t_near < t_far (got [{self.t_near}, {self.t_far}])")
        return errs


@dataclass
class SplitConfig:
    train_frames: int = 100
    heldout_frames: int = 20

    def validate(self) -> list[str]:
        errs = []
        if self.train_frames < 1:
            errs.append(f"split.train_frames must be >= 1 (got {self.train_frames})")
        if self.heldout_frames < 0:
            errs.append(f"split.heldout_frames must be >= 0 (got {self.heldout_frames})")
        return errs


@dataclass
class OutputConfig:
    run_dir: str = "runs/default"
    frame_format: str = "ppm"

    def validate(self) -> list[str]:
        if self.frame_format not in ("ppm", "png"):
            return [f"output.frame_format must be 'ppm' or 'png' (got {self.frame_format!r})"]
        return []


@dataclass
class AblationConfig:
    distill: bool = True
    pool: bool = True
    blocks: int | None = None

    def validate(self) -> list[str]:
        if self.blocks is not None and self.blocks < 1:
            return [f"ablation.blocks must be >= 1 (got {self.blocks})"]
        return []


SECTIONS = {
    "scene": SceneConfig, "signal": SignalConfig, "camera": CameraConfig, "render": RenderConfig,
    "split": SplitConfig, "model": NLDFConfig, "batch": BatchConfig, "train": TrainConfig,
    "ablation": AblationConfig, "output": OutputConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    seeds: dict = field(default_factory=dict)
    scene: SceneConfig = field(default_factory=SceneConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: NLDFConfig = field(default_factory=NLDFConfig)
    batch: BatchConfig = field(default_factory=BatchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str = "<defaults>"

    # ------------------------------------------------------------ seeds
    def stream_seed(self, stream: str) -> int:
        if stream in self.seeds:
            return int(self.seeds[stream])
        return sub_seed(self.seed, stream)

    def resolved(self) -> "RunConfig":
        """Copy with ablation flags and seed streams folded into the sections."""
        cfg = RunConfig.from_dict(self.to_dict(), self.source)
        cfg.train.distill = cfg.train.distill and cfg.ablation.distill
        cfg.train.pool = cfg.train.pool and cfg.ablation.pool
        if cfg.ablation.blocks is not None:
            cfg.model.blocks = cfg.ablation.blocks
        cfg.train.init_seed = cfg.stream_seed("init")
        cfg.batch.seed = cfg.stream_seed("batch")
        return cfg

    # ------------------------------------------------------- validation
    def validate(self) -> list[str]:
        errs = []
        for name in SECTIONS:
            errs += getattr(self, name).validate()
        for k in self.seeds:
            if k not in SEED_STREAMS:
                errs.append(f"seeds.{k}: unknown stream (expected one of {', '.join(SEED_STREAMS)})")
        if self.render.N % self.model.M:
            errs.append(f"model.M={self.model.M} must divide render.N={self.render.N}")
        if self.split.train_frames + self.split.heldout_frames > self.signal.frames:
            errs.append(f"split.train_frames + split.heldout_frames = "
                        f"{self.split.train_frames + self.split.heldout_frames} exceeds signal.frames = {self.signal.frames}")
        if self.scene.kind == "default" and self.scene.dim != self.signal.dim:
            errs.append(f"scene.dim={self.scene.dim} must equal signal.dim={self.signal.dim}")
        return [f"{self.source}: {e}" for e in errs]

    def check(self) -> "RunConfig":
        errs = self.validate()
        if errs:
            raise ConfigError("\n".join(errs))
        return self

    # ---------------------------------------------------- serialization
    def to_dict(self) -> dict:
        out = {"seed": self.seed, "seeds": dict(self.seeds)}
        for name in SECTIONS:
            out[name] = asdict(getattr(self, name))
        return out

    @classmethod
    def from_dict(cls, d: dict, source: str = "<dict>") -> "RunConfig":
        errs: list[str] = []
        kwargs: dict = {"source": source}
        for key, val in d.items():
            if key in ("seed",):
                if not isinstance(val, int) or isinstance(val, bool):
                    errs.append(f"{source}: seed must be an integer (got {val!r})")
                else:
                    kwargs["seed"] = val
            elif key == "seeds":
                if not isinstance(val, dict) or not all(isinstance(v, int) for v in val.values()):
                    errs.append(f"{source}: seeds must map stream names to integers")
                else:
                    kwargs["seeds"] = dict(val)
            elif key in SECTIONS:
                section, sec_errs = _build_section(SECTIONS[key], key, val)
                errs += [f"{source}: {e}" for e in sec_errs]
                if section is not None:
                    kwargs[key] = section
            else:
                errs.append(f"{source}: {key}: unknown section")
        cfg = cls(**kwargs)
        if errs:
            # keys that failed to parse kept their defaults; report the remaining violations too
            raise ConfigError("\n".join(errs + cfg.validate()))
        return cfg

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _build_section(cls, name: str, raw) -> tuple[object | None, list[str]]:
    if not isinstance(raw, dict):
        return None, [f"{name}: expected an object"]
    known = {f.name: f for f in fields(cls)}
    errs, kwargs = [], {}
    defaults = cls()
    for key, val in raw.items():
        if key not in known:
            errs.append(f"{name}.{key}: unknown key")
            continue
        default = getattr(defaults, key)
        if not _type_ok(default, val):
            errs.append(f"{name}.{key}: expected {type(default).__name__} (got {val!r})")
            continue
        kwargs[key] = float(val) if isinstance(default, float) and isinstance(val, int) else val
    return cls(**kwargs), errs


def _type_ok(default, val) -> bool:
    if val is None or default is None:
        return True
    if isinstance(default, bool):
        return isinstance(val, bool)
    if isinstance(default, int):
        return isinstance(val, int) and not isinstance(val, bool)
    if isinstance(default, float):
        return isinstance(val, (int, float)) and not isinstance(val, bool)
    if isinstance(default, str):
        return isinstance(val, str)
    if isinstance(default, list):
        return isinstance(val, list)
    return True


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(raw, str(path)).check()


# ----------------------------------------------------------------- builders


def build_scene(cfg: RunConfig, base_dir: Path | None = None) -> AnalyticScene:
    sc = cfg.scene
    if sc.kind == "default":
        return default_talking_scene(cfg.stream_seed("scene"), sc.dim)
    if sc.kind == "static":
        return static_scene(cfg.stream_seed("scene"))
    path = Path(sc.path)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return AnalyticScene.load(path)


def build_signal(cfg: RunConfig, base_dir: Path | None = None) -> DrivingSignal:
    s = cfg.signal
    if s.path:
        path = Path(s.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return DrivingSignal.load_csv(path)
    return generate_signal(s.kind, s.frames, s.dim, cfg.stream_seed("signal"), fps=s.fps)


def build_cameras(cfg: RunConfig, n_frames: int) -> list[Camera]:
    c = cfg.camera
    poses = orbit_poses(n_frames, c.radius, c.yaw_amplitude, c.pitch_amplitude)
    return [Camera.centered(p, c.focal, c.width, c.height) for p in poses]


def train_frames(cfg: RunConfig) -> list[int]:
    return list(range(cfg.split.train_frames))


def heldout_frames(cfg: RunConfig) -> list[int]:
    start = cfg.split.train_frames
    return list(range(start, start + cfg.split.heldout_frames))


def build_dataset(cfg: RunConfig, frames: list[int], scene=None, signal=None, threads: int = 1) -> Dataset:
    scene = scene if scene is not None else build_scene(cfg)
    signal = signal if signal is not None else build_signal(cfg)
    r = cfg.render
    return Dataset(scene, signal, build_cameras(cfg, signal.T), frames, N=r.N, M=cfg.model.M,
                   t_near=r.t_near, t_far=r.t_far, K=cfg.model.K, cache_targets=True, threads=threads)


def content_hash(cfg: RunConfig, scene: AnalyticScene, signal: DrivingSignal) -> str:
    """sha256 over the canonical config, scene and signal: identifies a run's inputs."""
    h = hashlib.sha256()
    h.update(cfg.canonical_json().encode())
    h.update(json.dumps(scene.to_dict(), sort_keys=True).encode())
    h.update(np.ascontiguousarray(signal.frames, dtype="<f8").tobytes())
    h.update(repr(float(signal.fps)).encode())
    return h.hexdigest()
