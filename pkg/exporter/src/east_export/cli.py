"""Command line for the embedding exporter.

Default mode runs a hook over a listing CSV and writes a store + manifest;
--verify re-checks an existing store file instead. Exit code 0 on success,
1 on any validation failure.
"""

from __future__ import annotations

import argparse
import importlib
import sys

from .exporter import (
    ExportJob,
    ExporterError,
    export,
    file_vector_hook,
    read_listing,
    verify,
)


def _resolve_hook(spec: str):
    """Import a hook given as 'package.module:attribute'."""
    module_name, _, attr = spec.partition(":")
    if not module_name or not attr:
        raise ExporterError(f"hook must look like module:function; got {spec!r}")
    try:
        module = importlib.import_module(module_name)
        hook = getattr(module, attr)
    except (ImportError, AttributeError) as exc:
        raise ExporterError(f"cannot load hook {spec!r}: {exc}") from None
    if not callable(hook):
        raise ExporterError(f"hook {spec!r} is not callable")
    return hook


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="east-export",
        description="Write embedding stores consumable by the east toolkit.")
    parser.add_argument("--listing", help="CSV with id,path[,split[,labels]] rows")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--pool", choices=["mean", "none"], default="none",
                        help="combine per-segment vectors (default: none)")
    parser.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    parser.add_argument("--hook", default=None,
                        help="module:function producing one embedding per file "
                             "(default: read .npy/text vectors)")
    parser.add_argument("--verify", metavar="STORE", default=None,
                        help="validate an existing store file and exit")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verify is not None:
            report = verify(args.verify)
            print(f"OK n={report.n} d={report.d} dtype={report.dtype}")
            return 0
        if not args.listing or not args.out:
            print("error: --listing and --out are required unless --verify is given",
                  file=sys.stderr)
            return 1
        hook = _resolve_hook(args.hook) if args.hook else file_vector_hook
        job = ExportJob(entries=read_listing(args.listing), hook=hook,
                        out_dir=args.out, dtype=args.dtype, pooling=args.pool)
        store_path, manifest_path = export(job)
        print(f"wrote {store_path} and {manifest_path}")
        return 0
    except (ExporterError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
