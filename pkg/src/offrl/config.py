"""Run configuration: nested YAML files plus dotted-path overrides.

Every command is driven by one RunConfig; validation failures carry the
exact field path (e.g. "algo.gamma") so sweeps fail loudly and precisely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import yaml

from .algos import AlgoConfig
from .analysis import ESTIMATORS
from .envs import TASKS
from .errors import ConfigError
from .nets import ARCHITECTURE_PRESETS


@dataclass
class EnvConfig:
    id: str = "pointmass2d"
    tasks: list = field(default_factory=lambda: ["reach-east", "reach-west",
                                                 "stand"])
    episodes: int = 100
    noise_std: float = 0.2
    horizon: int = 100

    def validate(self, prefix="env"):
        if self.id not in TASKS:
            raise ConfigError(f"{prefix}.id", f"unknown environment {self.id!r}")
        if not self.tasks:
            raise ConfigError(f"{prefix}.tasks", "must list at least one task")
        for i, task in enumerate(self.tasks):
            if task not in TASKS[self.id]:
                raise ConfigError(f"{prefix}.tasks[{i}]",
                                  f"unknown task {task!r} for {self.id}")
        if self.episodes < 1:
            raise ConfigError(f"{prefix}.episodes", "must be >= 1")
        if self.noise_std < 0:
            raise ConfigError(f"{prefix}.noise_std", "must be >= 0")
        if self.horizon < 1:
            raise ConfigError(f"{prefix}.horizon", "must be >= 1")


@dataclass
class EvalConfig:
    episodes: int = 20
    es: str = "off"  # off | on | both
    es_lam: float = 0.0

    def validate(self, prefix="eval"):
        if isinstance(self.es, bool):  # YAML reads bare on/off as booleans
            self.es = "on" if self.es else "off"
        if self.episodes < 1:
            raise ConfigError(f"{prefix}.episodes", "must be >= 1")
        if self.es not in ("off", "on", "both"):
            raise ConfigError(f"{prefix}.es", "must be off, on, or both")
        if self.es_lam < 0:
            raise ConfigError(f"{prefix}.es_lam", "must be >= 0")


@dataclass
class AnalyzeConfig:
    batch_sizes: list = field(default_factory=lambda: [16, 64, 256, 1024])
    trials: int = 1000
    estimators: list = field(default_factory=lambda: ["awac_wis", "asac_fresh"])
    fixture_rows: int = 0  # > 0 synthesizes the heavy-tailed fixture

    def validate(self, prefix="analyze"):
        if not self.batch_sizes or any(m < 1 for m in self.batch_sizes):
            raise ConfigError(f"{prefix}.batch_sizes",
                              "must be a non-empty list of positive sizes")
        if self.trials < 1000:
            raise ConfigError(f"{prefix}.trials", "must be >= 1000")
        for i, est in enumerate(self.estimators):
            if est not in ESTIMATORS:
                raise ConfigError(f"{prefix}.estimators[{i}]",
                                  f"must be one of {ESTIMATORS}")
        if self.fixture_rows < 0:
            raise ConfigError(f"{prefix}.fixture_rows", "must be >= 0")


@dataclass
class RunConfig:
    output_dir: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    dataset: str = ""
    checkpoint: str = ""
    preset: str = "simple-small"
    metrics_every: int = 1000
    workers: int = 1
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds", "must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "must be distinct")
        if self.preset not in ARCHITECTURE_PRESETS:
            raise ConfigError("preset",
                              f"must be one of {ARCHITECTURE_PRESETS}")
        if self.metrics_every < 1:
            raise ConfigError("metrics_every", "must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        try:
            self.algo.validate()
        except ValueError as exc:
            field_path, _, msg = str(exc).partition(": ")
            raise ConfigError(field_path, msg) from exc
        self.env.validate()
        self.eval.validate()
        self.analyze.validate()
        return self


_NESTED = {"algo": AlgoConfig, "env": EnvConfig, "eval": EvalConfig,
           "analyze": AnalyzeConfig}


def _build(cls, data, prefix):
    """Instantiate a config dataclass from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "config", "must be a mapping")
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{prefix}{key}", "unknown field")
        nested = _NESTED.get(key) if cls is RunConfig else None
        kwargs[key] = _build(nested, value, f"{prefix}{key}.") \
            if nested else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(prefix.rstrip(".") or "config", str(exc)) from exc


def apply_override(data: dict, assignment: str):
    """Set a leaf in the raw config dict from a KEY.PATH=VALUE string."""
    key, sep, raw_value = assignment.partition("=")
    if not sep:
        raise ConfigError(key, "override must look like path.to.field=value")
    path = key.strip().split(".")
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(key.strip(), "path crosses a non-mapping value")
    node[path[-1]] = yaml.safe_load(raw_value)


def load_config(path, overrides=()) -> RunConfig:
    """Parse a YAML config file, apply overrides, build and validate."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"unparseable YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    for assignment in overrides:
        apply_override(data, assignment)
    return _build(RunConfig, data, "").validate()
