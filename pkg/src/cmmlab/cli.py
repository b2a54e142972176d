"""Command-line entry points: run experiments, summarize outputs, export the
default lane map."""
from __future__ import annotations

import argparse
import sys

from .exceptions import ConfigurationError
from .harness import load_config, run_experiment, summarize
from .lanemap import save_lane_map
from .scenario import intersection_lane_map


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cmmlab",
                                     description="Cooperative map matching lab")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment cell")
    run_p.add_argument("--config", required=True, help="key = value config file")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--method", help="override the config method")
    run_p.add_argument("--noise-model", help="override the config noise model")
    run_p.add_argument("--out", default="out", help="output directory")
    run_p.add_argument("--dump-truth", action="store_true",
                       help="also write ground-truth CSVs")

    sum_p = sub.add_parser("summarize", help="aggregate runs in a directory")
    sum_p.add_argument("--out", default="out", help="directory holding epochs_*.csv")

    map_p = sub.add_parser("write-map", help="export the default intersection map")
    map_p.add_argument("--out", default="intersection_map.txt")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.method is not None:
                overrides["method"] = args.method
            if args.noise_model is not None:
                overrides["noise_model"] = args.noise_model
            cfg = load_config(args.config, **overrides)
            result = run_experiment(cfg, args.out, dump_truth=args.dump_truth)
            status = "FAILED" if result.failed else "ok"
            print(f"{cfg.tag()}: {status} rms={result.run_rms:.3f} m "
                  f"median_cov_det={result.median_cov_det:.3e} m^4")
            print(f"wrote {result.epoch_csv} and {result.summary_csv}")
            return 1 if result.failed else 0
        if args.command == "summarize":
            path = summarize(args.out)
            print(path.read_text().rstrip())
            print(f"wrote {path}")
            return 0
        if args.command == "write-map":
            save_lane_map(intersection_lane_map(), args.out)
            print(f"wrote {args.out}")
            return 0
    except (ConfigurationError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
