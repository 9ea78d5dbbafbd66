"""Export embeddings produced by a user-supplied model hook.

The hook is any callable taking an input file path and returning either a
single vector or a sequence of per-segment vectors. Results are written as
an EAST embedding store plus a manifest CSV, byte-compatible with the
training toolkit's readers. The store writer and the verifier below are
deliberately independent implementations of that on-disk contract: header

    magic "EAST" | version u16=1 | dtype u8 (0=f32, 1=f64) | reserved u8=0
    | n u64 | d u32

followed by n*d row-major little-endian floats, file length exact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np


class ExporterError(Exception):
    """Base class for exporter failures."""


class ListingError(ExporterError):
    """The input listing is malformed."""


class HookOutputError(ExporterError):
    """The model hook returned something unusable."""


class StoreCheckError(ExporterError):
    """A store file failed verification."""


_HEADER = struct.Struct("<4sHBBQI")
_MAGIC = b"EAST"
_VERSION = 1
_DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_NAMES = {0: "f32", 1: "f64"}
_CODE_WIDTH = {0: 4, 1: 8}
_SPLITS = ("train", "valid", "test")

Hook = Callable[[str], object]


@dataclass(frozen=True)
class ListingEntry:
    id: str
    path: str
    split: str = "train"
    labels: str = ""


@dataclass
class ExportJob:
    entries: Sequence[ListingEntry]
    hook: Hook
    out_dir: Path
    dtype: str = "f64"
    pooling: str = "none"  # "mean" or "none"
    store_name: str = "embeddings.east"
    manifest_name: str = "manifest.csv"


@dataclass(frozen=True)
class VerifyReport:
    n: int
    d: int
    dtype: str


def read_listing(path) -> list[ListingEntry]:
    """Parse a listing CSV: header id,path with optional split and labels."""
    entries: list[ListingEntry] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "id" not in cols or "path" not in cols:
            raise ListingError(f"{path}: listing needs id and path columns; got {cols}")
        extra = set(cols) - {"id", "path", "split", "labels"}
        if extra:
            raise ListingError(f"{path}: unknown listing columns: {sorted(extra)}")
        for lineno, rec in enumerate(reader, start=2):
            sample_id = rec["id"]
            if not sample_id:
                raise ListingError(f"{path}:{lineno}: empty id")
            if sample_id in seen:
                raise ListingError(f"{path}:{lineno}: duplicate id {sample_id!r}")
            seen.add(sample_id)
            split = rec.get("split") or "train"
            if split not in _SPLITS:
                raise ListingError(f"{path}:{lineno}: unknown split {split!r}")
            entries.append(ListingEntry(sample_id, rec["path"], split,
                                        rec.get("labels") or ""))
    if not entries:
        raise ListingError(f"{path}: listing has no entries")
    return entries


def _pool(raw, sample_id: str, pooling: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 1:
        vec = arr
    elif arr.ndim == 2:
        if pooling == "mean":
            vec = arr.mean(axis=0)
        elif arr.shape[0] == 1:
            vec = arr[0]
        else:
            raise HookOutputError(
                f"hook returned {arr.shape[0]} segments for id {sample_id!r} "
                f"but pooling is 'none'")
    else:
        raise HookOutputError(
            f"hook returned a {arr.ndim}-D array for id {sample_id!r}")
    if vec.size == 0:
        raise HookOutputError(f"hook returned an empty vector for id {sample_id!r}")
    if not np.isfinite(vec).all():
        raise HookOutputError(f"hook returned non-finite values for id {sample_id!r}")
    return vec


def export(job: ExportJob) -> tuple[Path, Path]:
    """Run the hook over the listing and write (store, manifest)."""
    if job.pooling not in ("mean", "none"):
        raise ExporterError(f"unknown pooling {job.pooling!r}")
    if job.dtype not in _DTYPE_CODES:
        raise ExporterError(f"unknown dtype {job.dtype!r}; expected f32 or f64")
    rows: list[np.ndarray] = []
    dim: Optional[int] = None
    for entry in job.entries:
        vec = _pool(job.hook(entry.path), entry.id, job.pooling)
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise HookOutputError(
                f"inconsistent embedding width for id {entry.id!r}: "
                f"got {vec.size}, expected {dim}")
        rows.append(vec)

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store_path = out / job.store_name
    manifest_path = out / job.manifest_name
    write_store_bytes(store_path, np.vstack(rows), job.dtype)
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "row", "split", "labels"])
        for row, entry in enumerate(job.entries):
            writer.writerow([entry.id, row, entry.split, entry.labels])
    return store_path, manifest_path


def write_store_bytes(path, matrix: np.ndarray, dtype: str = "f64") -> None:
    """Independent writer for the EAST store byte layout."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ExporterError(f"store payload must be a non-empty matrix; "
                            f"got shape {arr.shape}")
    code = _DTYPE_CODES[dtype]
    n, d = arr.shape
    header = _HEADER.pack(_MAGIC, _VERSION, code, 0, n, d)
    np_dtype = np.dtype("<f4") if code == 0 else np.dtype("<f8")
    Path(path).write_bytes(header + np.ascontiguousarray(arr.astype(np_dtype)).tobytes())


def verify(path) -> VerifyReport:
    """Re-check a store file's header and exact length from scratch."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise StoreCheckError(
            f"{path}: truncated header: need {_HEADER.size} bytes, found {len(data)}")
    magic, version, code, _reserved, n, d = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise StoreCheckError(f"{path}: not an EAST store (bad magic {magic!r} "
                              f"at offset 0)")
    if version != _VERSION:
        raise StoreCheckError(f"{path}: unsupported store version {version}")
    if code not in _CODE_NAMES:
        raise StoreCheckError(f"{path}: unknown dtype code {code}")
    if n < 1 or d < 1:
        raise StoreCheckError(f"{path}: empty store (n={n}, d={d})")
    expected = _HEADER.size + n * d * _CODE_WIDTH[code]
    if len(data) != expected:
        raise StoreCheckError(f"{path}: length mismatch: expected {expected} "
                              f"bytes, found {len(data)}")
    return VerifyReport(n=n, d=d, dtype=_CODE_NAMES[code])


def file_vector_hook(path: str):
    """Default hook: load vectors from .npy or whitespace-separated text.

    A 2-D result is treated as per-segment vectors (combine with mean
    pooling); a 1-D result is a single embedding.
    """
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    return np.loadtxt(p, ndmin=1)
