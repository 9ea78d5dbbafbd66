"""Task and distillation losses, all returning scalar tape tensors.

Two distance losses are supported: FitNet (mean squared difference of the
two embeddings, with an optional linear projection on the student side)
and distance correlation (one minus the dCor statistic of the two batches,
so that matching relational structure drives the loss to zero).
"""

from __future__ import annotations

import enum
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import (
    BatchTooSmallError,
    ConfigError,
    DimensionError,
    ValidationError,
)

# distance variance below this is treated as a constant batch
DVAR_EPSILON = 1e-12


class DistanceLossKind(enum.Enum):
    FITNET = "fitnet"
    DISTANCE_CORRELATION = "dcor"


class FitNetProjection:
    """Linear map from student embedding width to teacher embedding width.

    Only used when the raw teacher embedding is the distance target and the
    two widths differ. With compression active the compact embedding already
    matches the student width, so the projection is disabled. The projection
    trains together with the student (its parameters carry the student tag).
    """

    def __init__(self, student_dim: int, teacher_dim: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(student_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(student_dim, teacher_dim)),
                                tag="student", name="fitnet_proj_weight")
        self.bias = Parameter(np.zeros((1, teacher_dim)),
                              tag="student", name="fitnet_proj_bias")
        self.enabled = True

    @classmethod
    def disabled(cls) -> "FitNetProjection":
        obj = cls.__new__(cls)
        obj.weight = None
        obj.bias = None
        obj.enabled = False
        return obj

    def parameters(self) -> list[Parameter]:
        if not self.enabled:
            return []
        return [self.weight, self.bias]

    def apply(self, student: Tensor) -> Tensor:
        w = ad.param_tensor(student.tape, self.weight)
        b = ad.param_tensor(student.tape, self.bias)
        return ad.add(ad.matmul(student, w), b)


def fitnet_loss(student: Tensor, teacher: Tensor,
                proj: FitNetProjection | None = None) -> Tensor:
    """Mean squared difference between (projected) student and teacher embeddings.

    The mean runs over all n x d entries so the value is comparable across
    embedding widths.
    """
    if student.rows != teacher.rows:
        raise DimensionError(
            f"fitnet_loss: row counts differ: {student.shape} vs {teacher.shape}")
    if proj is not None and proj.enabled:
        student = proj.apply(student)
    if student.cols != teacher.cols:
        raise ConfigError(
            "fitnet_loss without an enabled projection needs matching widths; "
            f"got student {student.cols} vs teacher {teacher.cols}")
    diff = ad.sub(student, teacher)
    return ad.mean(ad.mul(diff, diff))


def dcov2(a_centered: Tensor, b_centered: Tensor) -> Tensor:
    """Squared distance covariance of two double-centered distance matrices.

    This is the biased V-statistic (1/n^2 normalization): nonnegative by
    construction up to rounding and well defined down to n = 2.
    """
    if a_centered.rows != a_centered.cols:
        raise DimensionError(f"dcov2 expects square inputs; got {a_centered.shape}")
    if a_centered.shape != b_centered.shape:
        raise DimensionError(
            f"dcov2: shapes differ: {a_centered.shape} vs {b_centered.shape}")
    n = a_centered.rows
    return ad.scale(ad.sum_all(ad.mul(a_centered, b_centered)), 1.0 / (n * n))


def dcor(x: Tensor, y: Tensor) -> Tensor:
    """Distance correlation between two batches of row vectors.

    Works for any pair of column counts. The value is clamped to [0, 1].
    A batch with (near-)zero distance variance carries no relational
    structure; dCor is defined as exactly 0 there instead of erroring,
    and no gradient flows in that case.
    """
    if x.rows != y.rows:
        raise DimensionError(f"dcor: row counts differ: {x.shape} vs {y.shape}")
    if x.rows < 2:
        raise BatchTooSmallError(f"dcor needs at least 2 samples; got {x.rows}")
    a = ad.double_center(ad.pairwise_euclidean(x))
    b = ad.double_center(ad.pairwise_euclidean(y))
    vab = dcov2(a, b)
    va = dcov2(a, a)
    vb = dcov2(b, b)
    if va.item() < DVAR_EPSILON or vb.item() < DVAR_EPSILON:
        return Tensor([[0.0]])
    return ad.clamp01(ad.div(vab, ad.sqrt(ad.mul(va, vb))))


def dcor_loss(student: Tensor, teacher: Tensor) -> Tensor:
    """1 - dcor(student, teacher); bounded in [0, 1]."""
    return ad.sub(Tensor([[1.0]]), dcor(student, teacher))


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy from raw logits, stable for large |z|.

    Per entry: max(z, 0) - z*t + log(1 + exp(-|z|)). Targets must be exactly
    0 or 1 and receive no gradient.
    """
    t = targets.data if isinstance(targets, Tensor) else _as_target_matrix(targets)
    z = logits.data
    if z.shape != t.shape:
        raise DimensionError(f"bce_with_logits: shapes differ: {z.shape} vs {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValidationError("bce_with_logits: targets must be binary (0 or 1)")
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    size = z.size

    def vjp(g: np.ndarray) -> np.ndarray:
        return g[0, 0] * (ad.stable_sigmoid(z) - t) / size

    return ad.record_op(np.array([[per.mean()]]), "bce_with_logits", [(logits, vjp)])


def _as_target_matrix(targets) -> np.ndarray:
    arr = np.asarray(targets, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"targets must be a 2-D matrix; got shape {arr.shape}")
    return arr


def cross_entropy(logits: Tensor, class_index) -> Tensor:
    """Mean negative log-softmax of the true class, via max-shifted log-sum-exp."""
    classes = np.asarray(class_index)
    z = logits.data
    n, c = z.shape
    if classes.ndim != 1 or classes.shape[0] != n:
        raise DimensionError(
            f"cross_entropy: need one class index per row; got {classes.shape} for {n} rows")
    if not np.issubdtype(classes.dtype, np.integer):
        raise ValidationError("cross_entropy: class indices must be integers")
    if classes.min() < 0 or classes.max() >= c:
        raise ValidationError(
            f"cross_entropy: class index out of range [0, {c}): "
            f"min={classes.min()}, max={classes.max()}")
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    lse = m[:, 0] + np.log(e.sum(axis=1))
    picked = z[np.arange(n), classes]
    val = np.array([[(lse - picked).mean()]])

    def vjp(g: np.ndarray) -> np.ndarray:
        p = e / e.sum(axis=1, keepdims=True)
        p = p.copy()
        p[np.arange(n), classes] -= 1.0
        return g[0, 0] * p / n

    return ad.record_op(val, "cross_entropy", [(logits, vjp)])


def task_loss(logits: Tensor, labels, task_kind: str) -> Tensor:
    """Dispatch to the task loss for the label layout."""
    if task_kind == "multilabel":
        target = labels if isinstance(labels, Tensor) else Tensor(labels)
        return bce_with_logits(logits, target)
    if task_kind == "singlelabel":
        return cross_entropy(logits, labels)
    raise ValidationError(f"unknown task kind {task_kind!r}")
