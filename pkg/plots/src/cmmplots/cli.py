"""Command line for figure generation from harness CSVs."""
from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cmmplot", description="plot figures from experiment epoch CSVs")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--inputs", required=True, nargs="+",
                        help="one epoch CSV per series")
    parser.add_argument("--out", required=True, help="output image (.svg or .png)")
    parser.add_argument("--labels", nargs="*", default=[],
                        help="series labels, defaults to file stems")
    parser.add_argument("--vehicle", type=int, default=0,
                        help="vehicle id for error/covariance traces")
    parser.add_argument("--satellite", type=int, default=1,
                        help="satellite index for the bias-error figure")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, inputs=list(args.inputs),
                          output=args.out, labels=list(args.labels),
                          vehicle_id=args.vehicle, satellite=args.satellite)
        path = render(spec)
    except (SchemaError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
