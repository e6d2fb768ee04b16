"""plots <kind> --in <glob> --out <dir>: figures from discomm run artifacts."""

from __future__ import annotations

import argparse
import glob as globlib
import sys
from pathlib import Path

from .render import (
    SchemaError,
    amplitude_figure,
    histogram_figure,
    protocol_figure,
    returns_figure,
    save_figure,
)

KINDS = ("returns", "amplitude", "histogram", "protocol")


def _expand(pattern: str) -> list[Path]:
    return [Path(p) for p in sorted(globlib.glob(pattern))]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots", description=__doc__)
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="pattern", required=True, help="glob over inputs")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    args = parser.parse_args(argv)

    matches = _expand(args.pattern)
    if not matches:
        print(f"error: glob {args.pattern!r} matched nothing", file=sys.stderr)
        return 1

    try:
        written = render(args.kind, matches, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def render(kind: str, matches: list[Path], out_dir: Path) -> list[Path]:
    written: list[Path] = []
    if kind == "returns":
        run_dirs = _run_dirs(matches)
        written += save_figure(returns_figure(run_dirs), out_dir, "returns")
    elif kind == "amplitude":
        run_dirs = _run_dirs(matches)
        written += save_figure(amplitude_figure(run_dirs), out_dir, "amplitude")
    elif kind == "histogram":
        for path in matches:
            if path.suffix != ".json":
                raise SchemaError(f"{path}: histogram inputs are the CLI's JSON files")
            written += save_figure(histogram_figure(path), out_dir, f"histogram_{path.stem}")
    else:  # protocol
        for run in _run_dirs(matches):
            stem = f"protocol_{run.parent.name}_{run.name}" if run.parent.name else "protocol"
            written += save_figure(protocol_figure(run), out_dir, stem)
    return written


def _run_dirs(matches: list[Path]) -> list[Path]:
    dirs = [p for p in matches if p.is_dir()]
    if not dirs:
        raise SchemaError("the glob must match run directories (…/<method>/<seed>)")
    return dirs


if __name__ == "__main__":
    sys.exit(main())
