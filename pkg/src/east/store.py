"""On-disk embedding stores, label manifests, and batching.

Store layout (little-endian, 20-byte header):

    offset 0   magic   4 bytes  "EAST"
    offset 4   version u16      1
    offset 6   dtype   u8       0 = float32, 1 = float64
    offset 7   reserved u8      0
    offset 8   n       u64      row count
    offset 16  d       u32      column count
    offset 20  payload n*d row-major floats

The file length must match the header exactly. Payloads round-trip
bit-exactly; float32 payloads are widened to float64 in memory.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import StoreFormatError, ValidationError

MAGIC = b"EAST"
VERSION = 1
_HEADER = struct.Struct("<4sHBBQI")

DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_NAMES = {0: "f32", 1: "f64"}
_CODE_NUMPY = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class StoreMeta:
    n: int
    d: int
    dtype: str


def write_store(path, matrix, dtype: str = "f64") -> None:
    """Write a matrix as an embedding store; byte layout is exact per header spec."""
    if isinstance(matrix, Tensor):
        matrix = matrix.data
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"store payload must be 2-D; got shape {arr.shape}")
    n, d = arr.shape
    if n < 1 or d < 1:
        raise ValidationError(f"store payload must be non-empty; got shape {arr.shape}")
    code = DTYPE_CODES.get(dtype)
    if code is None:
        raise ValidationError(f"unknown store dtype {dtype!r}; expected one of "
                              f"{sorted(DTYPE_CODES)}")
    header = _HEADER.pack(MAGIC, VERSION, code, 0, n, d)
    payload = np.ascontiguousarray(arr.astype(_CODE_NUMPY[code])).tobytes()
    Path(path).write_bytes(header + payload)


def read_store(path) -> tuple[np.ndarray, StoreMeta]:
    """Read and validate a store; returns (float64 matrix, metadata)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise StoreFormatError(
            f"{path}: truncated header: need {_HEADER.size} bytes, found {len(data)}")
    magic, version, code, _reserved, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise StoreFormatError(
            f"{path}: not an EAST store (bad magic {magic!r} at offset 0)")
    if version != VERSION:
        raise StoreFormatError(
            f"{path}: unsupported store version {version}; expected {VERSION}")
    if code not in _CODE_NUMPY:
        raise StoreFormatError(f"{path}: unknown dtype code {code}")
    if n < 1 or d < 1:
        raise StoreFormatError(f"{path}: empty store (n={n}, d={d})")
    np_dtype = _CODE_NUMPY[code]
    expected = _HEADER.size + n * d * np_dtype.itemsize
    if len(data) != expected:
        raise StoreFormatError(
            f"{path}: length mismatch: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype=np_dtype, count=n * d, offset=_HEADER.size)
    return flat.astype(np.float64).reshape(n, d), StoreMeta(n, d, _CODE_NAMES[code])


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    row: int
    split: str
    labels: tuple[str, ...]


MANIFEST_HEADER = ["id", "row", "split", "labels"]


class Manifest:
    """Binding of sample ids to store rows, splits, and label names."""

    def __init__(self, entries: Sequence[ManifestEntry]):
        self.entries = list(entries)
        self._by_split: dict[str, list[ManifestEntry]] = {s: [] for s in SPLITS}
        for e in self.entries:
            self._by_split[e.split].append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def entries_for(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}; expected one of {SPLITS}")
        return self._by_split[split]

    def rows(self, split: str) -> list[int]:
        return [e.row for e in self.entries_for(split)]


def read_manifest(path, n_rows: Optional[int] = None) -> Manifest:
    """Parse and validate a manifest CSV.

    Duplicate ids, out-of-range rows, and unknown splits each raise a
    distinct ValidationError. Row range is only checked when ``n_rows``
    is given.
    """
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: manifest is empty") from None
        if header != MANIFEST_HEADER:
            raise ValidationError(
                f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}; "
                f"got {','.join(header)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 4:
                raise ValidationError(
                    f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            sample_id, row_text, split, labels_text = rec
            if sample_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate id {sample_id!r}")
            seen.add(sample_id)
            try:
                row = int(row_text)
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: row must be an integer; got {row_text!r}") from None
            if row < 0 or (n_rows is not None and row >= n_rows):
                bound = f"store with {n_rows} rows" if n_rows is not None else "any store"
                raise ValidationError(
                    f"{path}:{lineno}: row index {row} out of range for "
                    f"{bound} (id {sample_id!r})")
            if split not in SPLITS:
                raise ValidationError(
                    f"{path}:{lineno}: unknown split {split!r}; expected one of {SPLITS}")
            labels = tuple(name for name in labels_text.split(";") if name)
            entries.append(ManifestEntry(sample_id, row, split, labels))
    return Manifest(entries)


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.id, e.row, e.split, ";".join(e.labels)])


# ---------------------------------------------------------------------------
# label spaces


@dataclass(frozen=True)
class LabelSpace:
    """Ordered class/tag names; ordering is sorted and therefore run-stable."""

    names: tuple[str, ...]
    kind: str  # "multilabel" or "singlelabel"

    def __post_init__(self):
        if self.kind not in ("multilabel", "singlelabel"):
            raise ValidationError(f"unknown label kind {self.kind!r}")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("label names must be unique")
        if not self.names:
            raise ValidationError("label space is empty")

    @classmethod
    def from_manifest(cls, manifest: Manifest, kind: str) -> "LabelSpace":
        if kind == "singlelabel":
            for e in manifest.entries:
                if len(e.labels) != 1:
                    raise ValidationError(
                        f"singlelabel task needs exactly one label per sample; "
                        f"id {e.id!r} has {len(e.labels)}")
        names = sorted({name for e in manifest.entries for name in e.labels})
        return cls(tuple(names), kind)

    @property
    def n_classes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown label name {name!r}") from None

    def label_matrix(self, entries: Sequence[ManifestEntry]) -> np.ndarray:
        """n x c binary matrix of tag memberships."""
        mat = np.zeros((len(entries), len(self.names)))
        for i, e in enumerate(entries):
            for name in e.labels:
                mat[i, self.index(name)] = 1.0
        return mat

    def class_indices(self, entries: Sequence[ManifestEntry]) -> np.ndarray:
        """Per-row class index for singlelabel tasks."""
        idx = np.empty(len(entries), dtype=np.int64)
        for i, e in enumerate(entries):
            if len(e.labels) != 1:
                raise ValidationError(
                    f"singlelabel task needs exactly one label per sample; "
                    f"id {e.id!r} has {len(e.labels)}")
            idx[i] = self.index(e.labels[0])
        return idx


# ---------------------------------------------------------------------------
# batching


def make_batches(manifest: Manifest, split: str, batch_size: int,
                 seed: int, epoch: int) -> list[list[int]]:
    """Deterministic shuffled row-index batches for (seed, epoch).

    The final batch may be short; the trainer keeps it for the task loss
    and skips the distance loss when it has fewer than 2 samples.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1; got {batch_size}")
    rows = manifest.rows(split)
    if not rows:
        raise ValidationError(f"split {split!r} is empty")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(rows))
    return [[rows[i] for i in order[start:start + batch_size]]
            for start in range(0, len(rows), batch_size)]
