"""Command-line entry point: render figures from spec files."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .render import render
from .spec import load_spec


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="rgbsim-plots",
        description="Render figures from rgbsim CSV outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure from a TOML spec")
    p.add_argument("--spec", required=True, help="figure spec (TOML)")
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        out = render(load_spec(args.spec))
    except Exception as exc:
        print(f"rgbsim-plots: error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
