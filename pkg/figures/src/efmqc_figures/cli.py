"""Command-line interface: ``efmqc-figures plot <figure-spec-file>``."""

import argparse
import sys

from efmqc_figures.plots import render
from efmqc_figures.spec import FigureSpec, ValidationError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="efmqc-figures",
        description="render figures from dynamics-run CSV outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("plot", help="render one figure spec file")
    p.add_argument("spec", help="flat key = value figure spec")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        out = render(FigureSpec.from_file(args.spec))
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
