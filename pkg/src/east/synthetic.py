"""Synthetic dataset generator with a controllable irrelevant-knowledge knob.

Samples live in a k-dimensional latent space; tags are signs of fixed
random linear forms of the latent, so labels depend on the latent only.
The teacher embedding is an orthogonal lift of the latent into the first
d_t - r columns, padded with r columns of an independent nuisance latent:
r is the knob that controls how much of the teacher's geometry is
irrelevant to the task. Student inputs are a noisy random linear map of
the latent.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .store import ManifestEntry, write_manifest, write_store

TEACHER_FILE = "teacher.east"
STUDENT_FILE = "student_input.east"
MANIFEST_FILE = "manifest.csv"


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    latent_dim: int
    n_tags: int
    teacher_dim: int
    irrelevant_dims: int
    student_input_dim: int
    noise_std: float
    seed: int

    def validate(self) -> None:
        if min(self.n, self.latent_dim, self.n_tags, self.student_input_dim,
               self.teacher_dim) < 1:
            raise ValidationError(f"synthetic spec dims must be positive: {self}")
        if self.irrelevant_dims < 0:
            raise ValidationError(
                f"irrelevant_dims must be >= 0; got {self.irrelevant_dims}")
        if self.irrelevant_dims > self.teacher_dim - self.latent_dim:
            raise ValidationError(
                f"irrelevant_dims={self.irrelevant_dims} exceeds "
                f"teacher_dim - latent_dim = {self.teacher_dim - self.latent_dim}")
        if self.noise_std < 0:
            raise ValidationError(f"noise_std must be >= 0; got {self.noise_std}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0; got {self.seed}")

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown synthetic spec keys: {sorted(unknown)}")
        missing = known - set(raw)
        if missing:
            raise ValidationError(f"missing synthetic spec keys: {sorted(missing)}")
        return cls(n=int(raw["n"]), latent_dim=int(raw["latent_dim"]),
                   n_tags=int(raw["n_tags"]), teacher_dim=int(raw["teacher_dim"]),
                   irrelevant_dims=int(raw["irrelevant_dims"]),
                   student_input_dim=int(raw["student_input_dim"]),
                   noise_std=float(raw["noise_std"]), seed=int(raw["seed"]))


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    tag_names: list[str]
    latent: np.ndarray          # n x k
    labels: np.ndarray          # n x c binary
    teacher: np.ndarray         # n x d_t
    student_input: np.ndarray   # n x d_in
    tag_weights: np.ndarray     # k x c
    input_map: np.ndarray       # k x d_in
    entries: list[ManifestEntry]
    teacher_path: Optional[Path] = None
    student_path: Optional[Path] = None
    manifest_path: Optional[Path] = None


def _orthonormal_rows(rng: np.random.Generator, k: int, m: int) -> np.ndarray:
    """k x m matrix with orthonormal rows (k <= m), so right-multiplication
    by it is an isometry on row vectors."""
    q, _ = np.linalg.qr(rng.standard_normal((m, k)))
    return q.T


def generate_synthetic(spec: SyntheticSpec, out_dir=None, *,
                       tag_weights: Optional[np.ndarray] = None,
                       input_map: Optional[np.ndarray] = None,
                       nuisance_mean: float = 0.0,
                       tag_names: Optional[Sequence[str]] = None) -> SyntheticDataset:
    """Generate a dataset; optionally write stores and manifest under out_dir.

    All randomness comes from spec.seed, so a fixed spec yields
    byte-identical files. The keyword overrides exist to build a related
    dataset that shares tag definitions and the input feature map with an
    earlier one (for cross-dataset evaluation) while re-sampling everything
    else; overriding changes the draw sequence, so only compare runs made
    with identical arguments.
    """
    spec.validate()
    n, k, c = spec.n, spec.latent_dim, spec.n_tags
    d_t, r, d_in = spec.teacher_dim, spec.irrelevant_dims, spec.student_input_dim
    rng = np.random.default_rng(spec.seed)

    latent = rng.standard_normal((n, k))
    if tag_weights is None:
        tag_weights = rng.standard_normal((k, c))
    else:
        tag_weights = np.asarray(tag_weights, dtype=np.float64)
        if tag_weights.shape != (k, c):
            raise ValidationError(
                f"tag_weights must be {k}x{c}; got {tag_weights.shape}")
    lift = _orthonormal_rows(rng, k, d_t - r)
    relevant = latent @ lift
    if r > 0:
        nuisance = rng.standard_normal((n, r)) + nuisance_mean
        teacher = np.concatenate([relevant, nuisance @ _orthonormal_rows(rng, r, r)],
                                 axis=1)
    else:
        teacher = relevant
    if input_map is None:
        input_map = rng.standard_normal((k, d_in))
    else:
        input_map = np.asarray(input_map, dtype=np.float64)
        if input_map.shape != (k, d_in):
            raise ValidationError(f"input_map must be {k}x{d_in}; got {input_map.shape}")
    noise = rng.standard_normal((n, d_in))
    student_input = latent @ input_map + spec.noise_std * noise
    labels = (latent @ tag_weights > 0.0).astype(np.float64)

    if tag_names is None:
        tag_names = [f"tag{i}" for i in range(c)]
    else:
        tag_names = list(tag_names)
        if len(tag_names) != c:
            raise ValidationError(f"need {c} tag names; got {len(tag_names)}")

    perm = rng.permutation(n)
    n_train = int(0.7 * n)
    n_valid = int(0.1 * n)
    split_of = np.empty(n, dtype=object)
    split_of[perm[:n_train]] = "train"
    split_of[perm[n_train:n_train + n_valid]] = "valid"
    split_of[perm[n_train + n_valid:]] = "test"

    width = max(6, len(str(n - 1)))
    entries = [
        ManifestEntry(
            id=f"sample_{i:0{width}d}", row=i, split=split_of[i],
            labels=tuple(tag_names[j] for j in range(c) if labels[i, j] > 0))
        for i in range(n)
    ]

    ds = SyntheticDataset(spec=spec, tag_names=tag_names, latent=latent,
                          labels=labels, teacher=teacher,
                          student_input=student_input, tag_weights=tag_weights,
                          input_map=input_map, entries=entries)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ds.teacher_path = out / TEACHER_FILE
        ds.student_path = out / STUDENT_FILE
        ds.manifest_path = out / MANIFEST_FILE
        write_store(ds.teacher_path, teacher, dtype="f64")
        write_store(ds.student_path, student_input, dtype="f64")
        write_manifest(ds.manifest_path, entries)
    return ds
