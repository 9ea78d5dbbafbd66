"""Embedding compression: a trainable linear reduction of teacher embeddings.

The module maps teacher embeddings down to the student embedding width and
carries its own linear classification head. The head loss is the only loss
that may move the transform and head weights, which the trainer enforces
with gradient gates; conversely the distance loss sees a detached copy of
the compact embedding, so distillation cannot leak into the transform and
collapse the distance target. A config switch on the trainer can re-enable
that path for comparison runs.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError
from .losses import task_loss


class CompressionModule:

    def __init__(self, teacher_dim: int, student_dim: int, n_classes: int,
                 rng: np.random.Generator):
        if teacher_dim < 1 or student_dim < 1 or n_classes < 1:
            raise ConfigError(
                f"compression dims must be positive; got teacher={teacher_dim}, "
                f"student={student_dim}, classes={n_classes}")
        self.teacher_dim = teacher_dim
        self.student_dim = student_dim
        self.n_classes = n_classes
        bound = 1.0 / math.sqrt(teacher_dim)
        self.transform_weight = Parameter(
            rng.uniform(-bound, bound, size=(teacher_dim, student_dim)),
            tag="teacher_transform", name="transform_weight")
        self.transform_bias = Parameter(
            np.zeros((1, student_dim)), tag="teacher_transform", name="transform_bias")
        head_bound = 1.0 / math.sqrt(student_dim)
        self.head_weight = Parameter(
            rng.uniform(-head_bound, head_bound, size=(student_dim, n_classes)),
            tag="teacher_head", name="teacher_head_weight")
        self.head_bias = Parameter(
            np.zeros((1, n_classes)), tag="teacher_head", name="teacher_head_bias")

    def parameters(self) -> list[Parameter]:
        return [self.transform_weight, self.transform_bias,
                self.head_weight, self.head_bias]

    def compress(self, teacher: Tensor) -> Tensor:
        """Compact embedding: teacher @ W + b, differentiable."""
        if teacher.cols != self.teacher_dim:
            raise ConfigError(
                f"compress: teacher width {teacher.cols} does not match "
                f"module width {self.teacher_dim}")
        w = ad.param_tensor(teacher.tape, self.transform_weight)
        b = ad.param_tensor(teacher.tape, self.transform_bias)
        return ad.add(ad.matmul(teacher, w), b)

    def head(self, compact: Tensor) -> Tensor:
        """Classification logits of the compact embedding."""
        if compact.cols != self.student_dim:
            raise ConfigError(
                f"head: compact width {compact.cols} does not match "
                f"module width {self.student_dim}")
        w = ad.param_tensor(compact.tape, self.head_weight)
        b = ad.param_tensor(compact.tape, self.head_bias)
        return ad.add(ad.matmul(compact, w), b)

    def teacher_loss(self, compact: Tensor, labels, task_kind: str) -> Tensor:
        """Task loss of the compact embedding's own prediction head.

        Run its backward pass with gates {teacher_transform, teacher_head}
        so it moves only this module's parameters.
        """
        return task_loss(self.head(compact), labels, task_kind)

    def compact_for_distance(self, teacher: Tensor) -> Tensor:
        """Compact embedding with stop-gradient, for use as a distance target.

        Forward values are bit-identical to ``compress``; the distance
        loss's backward pass contributes nothing to the transform.
        """
        return ad.detach(self.compress(teacher))
