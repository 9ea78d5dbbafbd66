"""Experiment configuration.

Config files are UTF-8 JSON documents whose keys are exactly the
TrainConfig field names; unknown keys are hard errors so a typo in a
regime name can never silently change an experiment. Numeric defaults
(lr, epochs, batch size, lambda) are toolkit choices, not published
values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .errors import ConfigError, ValidationError
from .losses import DistanceLossKind

REGIMES = ("baseline", "teacher_lr", "east_fitnet", "east_fitnet_linear",
           "east_dc", "east_dc_linear")
TASK_KINDS = ("multilabel", "singlelabel")


@dataclass
class TrainConfig:
    regime: str
    task_kind: str
    manifest: str
    out_dir: str
    teacher_store: Optional[str] = None
    student_store: Optional[str] = None
    lambda_distill: float = 1.0
    lr: float = 0.1
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    student_widths: list[int] = field(default_factory=lambda: [128, 64])
    distance_updates_transform: bool = False

    @property
    def has_distance_loss(self) -> bool:
        return self.regime in ("east_fitnet", "east_fitnet_linear",
                               "east_dc", "east_dc_linear")

    @property
    def has_compression(self) -> bool:
        return self.regime.endswith("_linear")

    @property
    def distance_kind(self) -> Optional[DistanceLossKind]:
        if self.regime.startswith("east_fitnet"):
            return DistanceLossKind.FITNET
        if self.regime.startswith("east_dc"):
            return DistanceLossKind.DISTANCE_CORRELATION
        return None

    @property
    def needs_teacher(self) -> bool:
        return self.regime != "baseline"

    @property
    def needs_student_inputs(self) -> bool:
        return self.regime != "teacher_lr"

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValidationError(f"unknown regime {self.regime!r}; "
                                  f"expected one of {REGIMES}")
        if self.task_kind not in TASK_KINDS:
            raise ValidationError(f"unknown task_kind {self.task_kind!r}; "
                                  f"expected one of {TASK_KINDS}")
        if self.lambda_distill < 0:
            raise ValidationError(f"lambda_distill must be >= 0; "
                                  f"got {self.lambda_distill}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValidationError("lr and weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1; got {self.batch_size}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0; got {self.epochs}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0; got {self.seed}")
        if not self.student_widths or any(int(w) < 1 for w in self.student_widths):
            raise ValidationError(f"student_widths must be positive; "
                                  f"got {self.student_widths}")
        if self.has_distance_loss and self.batch_size < 2:
            raise ConfigError("distance losses need batch_size >= 2")
        if self.needs_teacher and not self.teacher_store:
            raise ConfigError(f"regime {self.regime!r} requires teacher_store")
        if self.needs_student_inputs and not self.student_store:
            raise ConfigError(f"regime {self.regime!r} requires student_store")
        if self.distance_updates_transform and not self.has_compression:
            raise ConfigError("distance_updates_transform only applies to "
                              "compression regimes")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        required = {"regime", "task_kind", "manifest", "out_dir"}
        missing = required - set(raw)
        if missing:
            raise ValidationError(f"missing config keys: {sorted(missing)}")
        kwargs = dict(raw)
        for key in ("batch_size", "epochs", "seed"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        for key in ("lambda_distill", "lr", "weight_decay"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        if "student_widths" in kwargs:
            kwargs["student_widths"] = [int(w) for w in kwargs["student_widths"]]
        if "distance_updates_transform" in kwargs:
            if not isinstance(kwargs["distance_updates_transform"], bool):
                raise ValidationError("distance_updates_transform must be a boolean")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)
