"""Student models and the SGD update.

The student is a small feed-forward network over precomputed input
features. It exposes both its penultimate feature map (the student
embedding, the tensor distance losses act on) and the task logits from one
forward pass. Hidden layers use relu; the final stack layer is linear so
the embedding is not sign-constrained.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, NumericError, ValidationError


class StudentModel:

    def __init__(self, in_dim: int, widths: Sequence[int], n_classes: int,
                 rng: np.random.Generator):
        widths = list(widths)
        if not widths or any(w < 1 for w in widths) or in_dim < 1 or n_classes < 1:
            raise ConfigError(
                f"student needs positive dims; got in={in_dim}, widths={widths}, "
                f"classes={n_classes}")
        self.in_dim = in_dim
        self.embed_dim = widths[-1]
        self.n_classes = n_classes
        dims = [in_dim] + widths
        self.layers: list[tuple[Parameter, Parameter, str]] = []
        for i in range(len(dims) - 1):
            bound = 1.0 / math.sqrt(dims[i])
            w = Parameter(rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])),
                          tag="student", name=f"layer{i}_weight")
            b = Parameter(np.zeros((1, dims[i + 1])), tag="student", name=f"layer{i}_bias")
            act = "relu" if i < len(dims) - 2 else "none"
            self.layers.append((w, b, act))
        bound = 1.0 / math.sqrt(self.embed_dim)
        self.head_weight = Parameter(
            rng.uniform(-bound, bound, size=(self.embed_dim, n_classes)),
            tag="student", name="head_weight")
        self.head_bias = Parameter(np.zeros((1, n_classes)), tag="student", name="head_bias")

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for w, b, _ in self.layers:
            params.extend((w, b))
        params.extend((self.head_weight, self.head_bias))
        return params

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (embedding, logits) from a single pass.

        The embedding is exactly the activation fed to the head.
        """
        if x.cols != self.in_dim:
            raise ConfigError(
                f"input width {x.cols} does not match model input width {self.in_dim}")
        h = x
        for w, b, act in self.layers:
            h = ad.add(ad.matmul(h, ad.param_tensor(x.tape, w)),
                       ad.param_tensor(x.tape, b))
            if act == "relu":
                h = ad.relu(h)
        logits = ad.add(ad.matmul(h, ad.param_tensor(x.tape, self.head_weight)),
                        ad.param_tensor(x.tape, self.head_bias))
        return h, logits


class LinearClassifier:
    """Single linear layer; used for logistic regression on teacher embeddings."""

    def __init__(self, in_dim: int, n_classes: int, rng: np.random.Generator):
        if in_dim < 1 or n_classes < 1:
            raise ConfigError(f"linear classifier needs positive dims; got "
                              f"in={in_dim}, classes={n_classes}")
        self.in_dim = in_dim
        self.n_classes = n_classes
        bound = 1.0 / math.sqrt(in_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_dim, n_classes)),
                                tag="student", name="linear_weight")
        self.bias = Parameter(np.zeros((1, n_classes)), tag="student", name="linear_bias")

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: Tensor) -> Tensor:
        if x.cols != self.in_dim:
            raise ConfigError(
                f"input width {x.cols} does not match model input width {self.in_dim}")
        return ad.add(ad.matmul(x, ad.param_tensor(x.tape, self.weight)),
                      ad.param_tensor(x.tape, self.bias))


def sgd_step(params: Iterable[Parameter], lr: float, weight_decay: float = 0.0,
             tags: Optional[Iterable[str]] = None, step: Optional[int] = None) -> None:
    """One SGD update: p <- p - lr * (grad + weight_decay * p), then zero grads.

    Only trainable parameters whose tag is in ``tags`` are touched
    (all tags when None). A non-finite gradient aborts before any update.
    """
    if lr < 0.0 or weight_decay < 0.0:
        raise ValidationError(
            f"lr and weight_decay must be nonnegative; got lr={lr}, wd={weight_decay}")
    tag_set = frozenset(tags) if tags is not None else None
    selected = [p for p in params
                if p.trainable and (tag_set is None or p.tag in tag_set)]
    for p in selected:
        if not np.isfinite(p.grad).all():
            raise NumericError(
                f"non-finite gradient in parameter {p.name!r} "
                f"(tag={p.tag}, step={step}, grad_norm={np.linalg.norm(p.grad)})")
    for p in selected:
        p.value -= lr * (p.grad + weight_decay * p.value)
        p.grad.fill(0.0)
