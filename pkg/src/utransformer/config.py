"""Run configuration: a single JSON document with every default materialised."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import ModelConfig
from .tasks import TASKS, VOCAB_SIZE, SplitSpec


@dataclass
class TaskConfig:
    name: str = "copy"
    train_len: int = 12
    eval_len: int = 24
    min_len: int = 1
    eval_min_len: Optional[int] = None
    max_offset: Optional[int] = None

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_len, self.eval_len, self.min_len, self.eval_min_len,
                         self.max_offset)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 64
    warmup: int = 400
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    label_smoothing: float = 0.0
    ponder_cost: float = 0.0
    max_grad_norm: Optional[float] = None
    log_every: int = 50
    eval_every: int = 500
    n_eval: int = 256
    eval_batch_size: int = 128


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out_dir: Optional[str] = None
    compare_seeds: list = field(default_factory=lambda: [0, 1, 2])

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def problems(self) -> list:
        out = [f"model.{p}" for p in self.model.problems()]
        if self.model.vocab_size != VOCAB_SIZE:
            out.append(f"model.vocab_size must be {VOCAB_SIZE} for the digit tasks, "
                       f"got {self.model.vocab_size}")
        if self.task.name not in TASKS:
            out.append(f"task.name must be one of {TASKS}, got {self.task.name!r}")
        out += [f"task.{p}" for p in self.task.split_spec().problems()]
        tc = self.train
        for name in ("batch_size", "warmup", "log_every", "n_eval", "eval_batch_size"):
            if getattr(tc, name) < 1:
                out.append(f"train.{name} must be >= 1, got {getattr(tc, name)}")
        if tc.steps < 0:
            out.append(f"train.steps must be >= 0, got {tc.steps}")
        if tc.eval_every < 0:
            out.append(f"train.eval_every must be >= 0, got {tc.eval_every}")
        if not 0.0 <= tc.label_smoothing < 1.0:
            out.append(f"train.label_smoothing must lie in [0, 1), got {tc.label_smoothing}")
        if tc.ponder_cost < 0:
            out.append(f"train.ponder_cost must be >= 0, got {tc.ponder_cost}")
        if not self.compare_seeds:
            out.append("compare_seeds must list at least one seed")
        return out

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


REQUIRED = (("task", "name"), ("train", "steps"))
_SECTIONS = {"model": ModelConfig, "task": TaskConfig, "train": TrainConfig}


def from_dict(data: dict) -> RunConfig:
    """Build and validate a RunConfig, reporting every problem at once."""
    problems = []
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for section, key in REQUIRED:
        if not isinstance(data.get(section), dict) or key not in data[section]:
            problems.append(f"missing required field {section}.{key}")
    top = {f.name for f in fields(RunConfig)}
    problems += [f"unknown field {k!r}" for k in sorted(set(data) - top)]
    parts = {}
    for section, cls in _SECTIONS.items():
        raw = data.get(section, {})
        if not isinstance(raw, dict):
            problems.append(f"{section} must be an object")
            continue
        known = {f.name for f in fields(cls)}
        problems += [f"unknown field {section}.{k}" for k in sorted(set(raw) - known)]
        try:
            parts[section] = cls(**{k: v for k, v in raw.items() if k in known})
        except (TypeError, ValueError) as exc:
            problems.append(f"{section}: {exc}")
    if problems:
        raise ConfigError(problems)
    kwargs = {k: data[k] for k in ("seed", "out_dir", "compare_seeds") if k in data}
    try:
        run = RunConfig(**parts, **kwargs)
        return run.validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)
