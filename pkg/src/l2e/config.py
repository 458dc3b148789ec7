"""Experiment configuration as flat ``section.key = value`` text."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from .envs import ENV_IDS, EnvConfig
from .replay import parse_strategy
from .sac import LearnerConfig

METHODS = ("l2e", "her", "plan", "plan_im", "subgoal_rl")


@dataclass
class ExperimentSection:
    method: str = "l2e"
    env: str = "push"
    agents: int = 10
    eval_rollouts: int = 30
    eval_interval: int = 25_000
    total_steps: int = 1_000_000
    seed: int = 0
    warmup: int = 10_000
    update_ratio: float = 1.0
    buffer_capacity: int = 1_000_000


@dataclass
class ReplaySection:
    # l2e: "bias" or "uniform"
    strategy: str = "bias"
    n: int = 10
    m: int = 1000
    # HER-trained agents: "future_k" or "episode_k"
    her: str = "future_1"


@dataclass
class ShapingSection:
    sigma: float = 0.5
    # None keeps the planner's native waypoint count
    density: int | None = None


@dataclass
class BaselineSection:
    im_episodes: int = 400
    im_max_epochs: int = 50
    im_lr: float = 1e-3
    subgoal_distance: float = 0.3
    subgoal_tolerance: float = 0.1


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    replay: ReplaySection = field(default_factory=ReplaySection)
    shaping: ShapingSection = field(default_factory=ShapingSection)
    env: EnvConfig = field(default_factory=EnvConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    baseline: BaselineSection = field(default_factory=BaselineSection)

    SECTIONS = ("experiment", "replay", "shaping", "env", "learner", "baseline")

    def validate(self):
        exp = self.experiment
        if exp.method not in METHODS:
            raise ValueError(f"unknown method {exp.method!r}; expected one of {METHODS}")
        if exp.env not in ENV_IDS:
            raise ValueError(f"unknown env {exp.env!r}; expected one of {ENV_IDS}")
        if exp.method == "plan_im" and exp.env == "maze":
            raise ValueError("plan_im needs a pushing environment")
        if self.replay.strategy not in ("bias", "uniform"):
            raise ValueError("replay.strategy must be 'bias' or 'uniform'")
        if self.replay.strategy == "bias" and self.replay.n > self.replay.m:
            raise ValueError("biased replay needs n <= m")
        if exp.agents < 1 or exp.eval_rollouts < 1 or exp.eval_interval < 1:
            raise ValueError("agents, eval_rollouts and eval_interval must be positive")
        parse_strategy(self.replay.her)
        return self

    # -- text form -------------------------------------------------------------

    def items(self):
        for sec in self.SECTIONS:
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                yield f"{sec}.{f.name}", getattr(obj, f.name)

    def dumps(self) -> str:
        lines = []
        for key, value in self.items():
            lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def set(self, key: str, raw: str):
        sec, _, name = key.partition(".")
        if sec not in self.SECTIONS or not name:
            raise KeyError(f"unknown config key {key!r}")
        obj = getattr(self, sec)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if name not in fields:
            raise KeyError(f"unknown config key {key!r}")
        current = getattr(obj, name)
        setattr(obj, name, parse_value(raw, current, fields[name]))

    @classmethod
    def loads(cls, text: str, overrides: dict | None = None) -> "ExperimentConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, raw = (p.strip() for p in line.split("=", 1))
            cfg.set(key, raw)
        for key, raw in (overrides or {}).items():
            cfg.set(key, str(raw))
        # re-run dataclass validation after assignment
        cfg.env.__post_init__()
        cfg.learner.__post_init__()
        return cfg.validate()

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.loads(fh.read(), overrides)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def parse_value(raw: str, current, f: dataclasses.Field):
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    kind = type(current)
    if current is None:
        # optional fields: infer from annotation text
        ann = str(f.type)
        if "int" in ann:
            return int(raw)
        if "float" in ann:
            return float(raw)
        return raw
    if kind is bool:
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{f.name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if kind is int:
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if kind is float:
        return float(raw)
    if kind in (tuple, list):
        elem = type(current[0]) if len(current) else float
        return tuple(elem(v) for v in raw.split(",") if v.strip())
    return raw
