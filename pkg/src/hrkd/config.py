"""Run configuration: defaults, YAML/JSON loading and flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .checkpoint import config_digest
from .exceptions import ConfigurationError
from .objective import MODES, check_ablations

FEW_SHOT_RATES = (0.02, 0.05, 0.10, 0.20)


@dataclass
class ModelShape:
    num_layers: int
    hidden: int
    heads: int = 2
    ffn_hidden: Optional[int] = None


@dataclass
class RunConfig:
    """Everything a run needs besides the data.

    Learning rates are retuned for desk-scale models trained from scratch;
    they are not the full-scale values.
    """

    teacher: ModelShape = field(default_factory=lambda: ModelShape(4, 64))
    student: ModelShape = field(default_factory=lambda: ModelShape(2, 32))
    max_len: int = 32
    graph_heads: int = 2
    graph_hidden: Optional[int] = None
    gamma: float = 1.0
    temperature: float = 1.0
    teacher_lr: float = 1e-3
    student_lr: float = 1e-3
    teacher_epochs: int = 3
    student_epochs: int = 10
    batch_size: int = 32
    warmup: float = 0.1
    seed: int = 0
    sample_rate: float = 1.0
    mode: str = "hrkd"
    ablations: List[str] = field(default_factory=list)
    detach_prototypes: bool = False
    min_freq: int = 2
    # synthetic corpus
    num_domains: int = 3
    classes: int = 2
    sharing: float = 0.5
    vocab_budget: int = 1024
    n_train: int = 2000
    n_dev: int = 300
    n_test: int = 300

    def __post_init__(self):
        if isinstance(self.teacher, dict):
            self.teacher = ModelShape(**self.teacher)
        if isinstance(self.student, dict):
            self.student = ModelShape(**self.student)
        self.ablations = list(check_ablations(self.ablations))
        if not 0.0 < self.sample_rate <= 1.0:
            raise ConfigurationError(f"sample_rate must lie in (0, 1], got {self.sample_rate}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.teacher.num_layers % self.student.num_layers:
            raise ConfigurationError(
                f"teacher layers ({self.teacher.num_layers}) must be a multiple of student layers ({self.student.num_layers})"
            )
        for role, shape in (("teacher", self.teacher), ("student", self.student)):
            if shape.hidden % shape.heads:
                raise ConfigurationError(f"{role} hidden {shape.hidden} not divisible by heads {shape.heads}")
        if self.batch_size < 1 or self.max_len < 2:
            raise ConfigurationError("batch_size must be >= 1 and max_len >= 2")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @property
    def digest(self) -> str:
        return config_digest(self.to_dict())

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {unknown}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> RunConfig:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw)

    def with_overrides(self, overrides: Dict[str, Any]) -> RunConfig:
        """Apply ``{"teacher.hidden": 32, "seed": 3, ...}``; ``None`` values are skipped."""
        raw = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            target = raw
            *path, leaf = key.split(".")
            for part in path:
                if part not in target or not isinstance(target[part], dict):
                    raise ConfigurationError(f"unknown config key {key!r}")
                target = target[part]
            if leaf not in target:
                raise ConfigurationError(f"unknown config key {key!r}")
            target[leaf] = value
        return RunConfig.from_dict(raw)


def flag_fields() -> List[tuple]:
    """``(dotted_key, type)`` for every scalar config field, nested shapes flattened."""
    out = []
    for f in dataclasses.fields(RunConfig):
        if f.name in ("teacher", "student"):
            for sub in dataclasses.fields(ModelShape):
                out.append((f"{f.name}.{sub.name}", int))
        elif f.name == "ablations":
            continue
        else:
            default = getattr(RunConfig(), f.name)
            kind = type(default) if default is not None else int
            out.append((f.name, kind))
    return out
