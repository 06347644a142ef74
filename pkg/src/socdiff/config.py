"""Run configuration: one JSON document with per-section overrides from flags.

Layout (every section and key optional)::

    {"robot": {...RobotModel.to_dict()...},
     "planner": {"K": 64, "T": 128, "guidance_target": "PredictedTau0", ...},
     "guidance": {"w": 0.1, "lam": 0.1, ...},
     "costs": {"iv_margins": [...], ...},
     "model": {"hidden_channels": 32, ..., "n_waypoints": 50, "T": 128, "schedule": "cosine"},
     "train": {"steps": 6000, ...},
     "data": {"n_train": 4096, "per_type": 50, "spread": 0.35, "min_separation": 0.5},
     "paths": {"suite": ..., "checkpoint": ..., "dataset": ..., "problem": ...},
     "seed": 0, "workers": 1, "out_dir": "out"}
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .costs import CostParams
from .denoiser import DenoiserSpec, TrainConfig
from .geometry import RobotModel
from .guidance import GuidanceConfig
from .planner import PlannerConfig


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


@dataclass(frozen=True)
class ModelConfig:
    spec: DenoiserSpec = DenoiserSpec()
    n_waypoints: int = 50
    T: int = 128
    schedule: str = "cosine"

    def __post_init__(self):
        if self.n_waypoints < 2:
            raise ConfigError("n_waypoints must be >= 2")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.schedule not in ("linear", "cosine"):
            raise ConfigError("schedule must be 'linear' or 'cosine'")


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 4096
    per_type: int = 50
    spread: float = 0.35
    min_separation: float = 0.5

    def __post_init__(self):
        if self.n_train < 1:
            raise ConfigError("n_train must be >= 1")
        if self.per_type < 1:
            raise ConfigError("per_type must be >= 1")
        if self.spread < 0 or not 0 <= self.min_separation < 1:
            raise ConfigError("spread must be >= 0 and min_separation in [0, 1)")


@dataclass(frozen=True)
class Paths:
    suite: str | None = None
    checkpoint: str | None = None
    dataset: str | None = None
    problem: str | None = None


# desk-scale training defaults; TrainConfig() itself keeps the reference values
DESK_TRAIN = TrainConfig(steps=6000, batch_size=128, learning_rate=2e-3)


@dataclass(frozen=True)
class RunConfig:
    robot: RobotModel = field(default_factory=RobotModel.point)
    planner: PlannerConfig = PlannerConfig()  # T None: taken from the checkpoint
    model: ModelConfig = ModelConfig()
    train: TrainConfig = DESK_TRAIN
    data: DataConfig = DataConfig()
    paths: Paths = Paths()
    seed: int = 0
    workers: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.planner.T is not None and self.planner.T != self.model.T:
            raise ConfigError(f"planner T={self.planner.T} differs from model T={self.model.T}")

    def to_dict(self) -> dict:
        p = self.planner
        planner = {k: v for k, v in asdict(p).items() if k not in ("guidance", "costs")}
        return {
            "robot": self.robot.to_dict(),
            "planner": planner,
            "guidance": asdict(p.guidance),
            "costs": p.costs.to_dict(),
            "model": {**asdict(self.model.spec), "n_waypoints": self.model.n_waypoints,
                      "T": self.model.T, "schedule": self.model.schedule},
            "train": asdict(self.train),
            "data": asdict(self.data),
            "paths": asdict(self.paths),
            "seed": self.seed,
            "workers": self.workers,
            "out_dir": self.out_dir,
        }


_TOP = {"robot", "planner", "guidance", "costs", "model", "train", "data", "paths", "seed", "workers", "out_dir"}


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _section(doc: dict, key: str, allowed: set[str]) -> dict:
    sec = doc.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {key!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {key!r}: {', '.join(sorted(unknown))}")
    return sec


def from_dict(doc: dict, base: RunConfig | None = None) -> RunConfig:
    """Merge ``doc`` over ``base`` (defaults when None); every value is validated."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    base = base or RunConfig()
    try:
        robot = base.robot
        if "robot" in doc:
            rdoc = {**base.robot.to_dict(), **_section(doc, "robot", {
                "kind", "link_lengths", "link_half_width", "base", "limits"})}
            if "limits" not in doc["robot"] and ("kind" in doc["robot"] or "link_lengths" in doc["robot"]):
                # the robot changed shape: use that robot's default limits
                rdoc["limits"] = None
            robot = RobotModel.from_dict(rdoc)
        guidance = replace(base.planner.guidance, **_section(doc, "guidance", _names(GuidanceConfig)))
        costs = replace(base.planner.costs, **_section(doc, "costs", _names(CostParams)))
        planner_keys = _names(PlannerConfig) - {"guidance", "costs"}
        planner = replace(base.planner, guidance=guidance, costs=costs,
                          **_section(doc, "planner", planner_keys))
        mdoc = dict(_section(doc, "model", _names(DenoiserSpec) | {"n_waypoints", "T", "schedule"}))
        model_top = {k: mdoc.pop(k) for k in ("n_waypoints", "T", "schedule") if k in mdoc}
        model = replace(base.model, spec=replace(base.model.spec, **mdoc), **model_top)
        train = replace(base.train, **_section(doc, "train", _names(TrainConfig)))
        data = replace(base.data, **_section(doc, "data", _names(DataConfig)))
        paths = replace(base.paths, **_section(doc, "paths", _names(Paths)))
        top = {k: doc[k] for k in ("seed", "workers", "out_dir") if k in doc}
        for k in ("seed", "workers"):
            if k in top and (not isinstance(top[k], int) or isinstance(top[k], bool)):
                raise ConfigError(f"{k} must be an integer")
        return replace(base, robot=robot, planner=planner, model=model, train=train, data=data,
                       paths=paths, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path) -> RunConfig:
    from .fileio import parse_json

    text = Path(path).read_text()
    try:
        doc = parse_json(text, str(path))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return from_dict(doc)
