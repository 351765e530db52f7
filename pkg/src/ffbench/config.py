"""Declarative experiment configuration.

One JSON document fully describes a pretrain/probe/evaluate run: dataset,
task, trainer variant, architecture, optimization settings, seed, and output
location. The schema is versioned and validation errors name the offending
field, so a bad config fails loudly before any compute is spent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .ff import GOODNESS_MODES
from .tasks import TASK_NAMES

SCHEMA_VERSION = 1

TRAINERS = ("ff", "bp_ce", "bp_goodness_last", "bp_goodness_all", "ff_unsupervised")

FEATURE_LABEL_MODES = ("none", "neutral")


class ConfigValidationError(ValueError):
    """Invalid configuration; the message starts with the field path."""


@dataclass
class ExperimentConfig:
    dataset: str
    task: str
    trainer: str
    schema_version: int = SCHEMA_VERSION
    name: str | None = None  # run id; derived from dataset/task/trainer if unset
    class_subset: list[int] | None = None
    widths: list[int] = field(default_factory=lambda: [2000, 2000, 2000, 2000])
    goodness_mode: str = "mean_sq"
    theta: float = 2.0
    epochs: int = 60
    probe_epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.0001
    probe_learning_rate: float | None = None  # falls back to learning_rate
    seed: int = 0
    layer_set: list[int] | None = None  # eval layers; default all but the first
    train_limit: int | None = None  # use only the first N training samples
    feature_label_mode: str = "none"  # label slots at probe-feature time
    bp_normalize: bool = True  # keep inter-layer normalization in backprop nets
    output_dir: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def fail(fieldname: str, msg: str):
            raise ConfigValidationError(f"{fieldname}: {msg}")

        if self.schema_version != SCHEMA_VERSION:
            fail("schema_version", f"unsupported version {self.schema_version} (expected {SCHEMA_VERSION})")
        if not self.dataset or not isinstance(self.dataset, str):
            fail("dataset", "must be a non-empty string")
        if self.task not in TASK_NAMES:
            fail("task", f"unknown task {self.task!r}; known: {', '.join(TASK_NAMES)}")
        if self.trainer not in TRAINERS:
            fail("trainer", f"unknown trainer {self.trainer!r}; known: {', '.join(TRAINERS)}")
        if self.class_subset is not None:
            if not self.class_subset:
                fail("class_subset", "must be non-empty when given")
            if len(set(self.class_subset)) != len(self.class_subset):
                fail("class_subset", "contains duplicates")
            if any(not isinstance(c, int) or c < 0 for c in self.class_subset):
                fail("class_subset", "classes must be non-negative integers")
        if not self.widths:
            fail("widths", "must list at least one layer width")
        if any(not isinstance(w, int) or w < 1 for w in self.widths):
            fail("widths", "every width must be an integer >= 1")
        if self.goodness_mode not in GOODNESS_MODES:
            fail("goodness_mode", f"unknown mode {self.goodness_mode!r}; known: {', '.join(GOODNESS_MODES)}")
        if not self.theta > 0:
            fail("theta", "must be positive")
        if self.epochs < 0:
            fail("epochs", "must be >= 0")
        if self.probe_epochs < 0:
            fail("probe_epochs", "must be >= 0")
        if self.batch_size < 1:
            fail("batch_size", "must be >= 1")
        if not self.learning_rate > 0:
            fail("learning_rate", "must be positive")
        if self.probe_learning_rate is not None and not self.probe_learning_rate > 0:
            fail("probe_learning_rate", "must be positive when given")
        if not isinstance(self.seed, int) or self.seed < 0:
            fail("seed", "must be a non-negative integer")
        if self.layer_set is not None:
            if not self.layer_set:
                fail("layer_set", "must be non-empty when given")
            if len(set(self.layer_set)) != len(self.layer_set):
                fail("layer_set", "contains duplicates")
            bad = [i for i in self.layer_set if not isinstance(i, int) or not 0 <= i < len(self.widths)]
            if bad:
                fail("layer_set", f"layer indices {bad} outside [0, {len(self.widths)})")
        if self.train_limit is not None and self.train_limit < 1:
            fail("train_limit", "must be >= 1 when given")
        if self.feature_label_mode not in FEATURE_LABEL_MODES:
            fail(
                "feature_label_mode",
                f"unknown mode {self.feature_label_mode!r}; known: {', '.join(FEATURE_LABEL_MODES)}",
            )
        if not self.output_dir:
            fail("output_dir", "must be non-empty")

    @property
    def run_name(self) -> str:
        return self.name or f"{self.dataset}_{self.task}_{self.trainer}_seed{self.seed}"

    @property
    def probe_lr(self) -> float:
        return self.probe_learning_rate if self.probe_learning_rate is not None else self.learning_rate

    def eval_layer_set(self) -> list[int]:
        """Layers scored at eval time: all but the first, unless overridden."""
        if self.layer_set is not None:
            return list(self.layer_set)
        if len(self.widths) == 1:
            return [0]
        return list(range(1, len(self.widths)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigValidationError(f"{sorted(unknown)[0]}: unknown field")
        missing = [k for k in ("dataset", "task", "trainer") if k not in data]
        if missing:
            raise ConfigValidationError(f"{missing[0]}: required field missing")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path | str) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigValidationError(f"(file): not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigValidationError("(file): top level must be a JSON object")
        return cls.from_dict(data)
