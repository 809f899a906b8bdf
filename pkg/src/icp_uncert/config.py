"""Run configuration for the command-line front-end, and deterministic output writers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import se3
from .covariance import NoiseParams
from .experiments import PRESETS, preset_covariance
from .icp import IcpConfig
from .scenes import Scene
from .se3 import Pose

METHODS = ("proposed", "censi", "monte-carlo")
DEFAULT_T_TRUE = se3.exp(np.array([0.0, 0.0, 0.05, 0.1, 0.05, -0.03])).to_list()  # small yaw and offset


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    trans_sigma: float  # meters
    rot_sigma: float  # degrees

    @classmethod
    def named(cls, name: str) -> ScenarioPreset:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        return cls(name, *PRESETS[name])

    def covariance(self) -> np.ndarray:
        return preset_covariance(self.name)


def resolve_q_ini(value) -> np.ndarray:
    """Preset name or 36 row-major numbers to a validated 6x6 covariance."""
    if isinstance(value, str):
        return ScenarioPreset.named(value).covariance()
    try:
        Q = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("q_ini must be a preset name or 36 numbers") from None
    if Q.size != 36 or not np.all(np.isfinite(Q)):
        raise ConfigError("q_ini must be a preset name or 36 finite numbers")
    Q = Q.reshape(6, 6)
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ConfigError("q_ini must be symmetric")
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise ConfigError("q_ini must be positive definite")
    return Q


@dataclass(frozen=True)
class DatasetSpec:
    """Clouds on disk.  A pair uses ``reading``/``reference``; a trajectory uses ``scans``/``poses``."""

    reading: str | None = None
    reference: str | None = None
    T_ini: list | None = None
    T_true: list | None = None
    scans: list | None = None
    poses: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class SweepSpec:
    scenes: dict = field(default_factory=dict)  # name -> Scene
    true: tuple = ("easy", "medium", "difficult")
    assumed: tuple = ("easy", "medium", "difficult")
    draws: int = 100
    init_per_draw: bool = True

    def to_dict(self) -> dict:
        return {
            "scenes": {k: v.to_dict() for k, v in self.scenes.items()},
            "true": list(self.true),
            "assumed": list(self.assumed),
            "draws": self.draws,
            "init_per_draw": self.init_per_draw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SweepSpec:
        d = dict(d)
        scenes = {k: Scene.from_dict(v) for k, v in d.pop("scenes", {}).items()}
        for key in ("true", "assumed"):
            if key in d:
                d[key] = tuple(d[key])
                for name in d[key]:
                    ScenarioPreset.named(name)
        return cls(scenes=scenes, **d)


@dataclass(frozen=True)
class TrajectorySpec:
    n_scans: int = 10
    step: float = 0.25
    lateral: float = 0.05
    yaw: float = 0.03

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class RunConfig:
    scene: Scene | None = None
    dataset: DatasetSpec | None = None
    icp: IcpConfig = IcpConfig()
    noise: NoiseParams = NoiseParams()
    q_ini: str | list = "easy"
    method: str = "proposed"
    samples: int = 65
    seed: int = 0
    out: str | None = None
    T_true: list = field(default_factory=lambda: list(DEFAULT_T_TRUE))
    trim: float = 0.1
    sweep: SweepSpec | None = None
    trajectory: TrajectorySpec | None = None

    def __post_init__(self):
        if (self.scene is None) == (self.dataset is None) and self.sweep is None:
            raise ConfigError("exactly one of 'scene' or 'dataset' must be given")
        if self.scene is not None and self.dataset is not None:
            raise ConfigError("'scene' and 'dataset' are mutually exclusive")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not 0 <= self.trim < 0.5:
            raise ConfigError("trim must lie in [0, 0.5)")
        resolve_q_ini(self.q_ini)
        try:
            Pose.from_list(self.T_true)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"T_true: {exc}") from None

    @property
    def Q_ini(self) -> np.ndarray:
        return resolve_q_ini(self.q_ini)

    @property
    def pose_true(self) -> Pose:
        return Pose.from_list(self.T_true)

    def with_overrides(self, **kw) -> RunConfig:
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_dict(self) -> dict:
        out = {
            "icp": self.icp.to_dict(),
            "noise": self.noise.to_dict(),
            "q_ini": self.q_ini if isinstance(self.q_ini, str) else [float(v) for v in np.ravel(self.q_ini)],
            "method": self.method,
            "samples": self.samples,
            "seed": self.seed,
            "out": self.out,
            "T_true": [float(v) for v in self.T_true],
            "trim": self.trim,
        }
        if self.scene is not None:
            out["scene"] = self.scene.to_dict()
        if self.dataset is not None:
            out["dataset"] = self.dataset.to_dict()
        if self.sweep is not None:
            out["sweep"] = self.sweep.to_dict()
        if self.trajectory is not None:
            out["trajectory"] = self.trajectory.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if d.get("scene") is not None:
                d["scene"] = Scene.from_dict(d["scene"])
            if d.get("dataset") is not None:
                d["dataset"] = DatasetSpec(**d["dataset"])
            if "icp" in d:
                d["icp"] = IcpConfig.from_dict(d["icp"])
            if "noise" in d:
                d["noise"] = NoiseParams(**d["noise"])
            if d.get("sweep") is not None:
                d["sweep"] = SweepSpec.from_dict(d["sweep"])
            if d.get("trajectory") is not None:
                d["trajectory"] = TrajectorySpec(**d["trajectory"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data)


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float at 17 significant digits, so output is byte-stable."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(np.asarray(obj).tolist()) if isinstance(obj, np.ndarray) else list(obj)
        if seq and all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        if not seq:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def csv_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path, header: list[str], rows) -> str:
    lines = [",".join(header)] + [",".join(csv_cell(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
