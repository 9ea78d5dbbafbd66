"""Embedding exporter: bridge from embedding models to EAST store files."""

__version__ = "0.1.0"

from .exporter import (
    ExportJob,
    ExporterError,
    HookOutputError,
    ListingEntry,
    ListingError,
    StoreCheckError,
    VerifyReport,
    export,
    file_vector_hook,
    read_listing,
    verify,
    write_store_bytes,
)

__all__ = [
    "__version__",
    "ExportJob", "ExporterError", "HookOutputError", "ListingEntry",
    "ListingError", "StoreCheckError", "VerifyReport",
    "export", "file_vector_hook", "read_listing", "verify", "write_store_bytes",
]
