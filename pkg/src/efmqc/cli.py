"""Command-line interface.

``efmqc run <config>`` executes a trajectory-ensemble or grid-exact run
described by a flat ``key = value`` config file and writes a CSV plus a JSON
manifest next to it.  ``efmqc inspect-model <config>`` prints the adiabatic
surfaces and couplings of the configured model as CSV.
"""

import argparse
import sys

from efmqc.ensemble import ConfigurationError, RunConfig, inspect_model, run


def build_parser():
    parser = argparse.ArgumentParser(
        prog="efmqc",
        description="exact-factorization mixed quantum-classical dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured run")
    p_run.add_argument("config", help="flat key = value config file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--out", default=None,
                       help="override the output CSV path")
    p_run.add_argument("--workers", type=int, default=None,
                       help="override the worker count (output is identical "
                            "for any value)")

    p_ins = sub.add_parser("inspect-model",
                           help="print model surfaces and couplings as CSV")
    p_ins.add_argument("config", help="flat key = value config file")
    p_ins.add_argument("--points", type=int, default=400,
                       help="number of grid points (default 400)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config)
        if args.command == "run":
            for key in ("seed", "out", "workers"):
                value = getattr(args, key)
                if value is not None:
                    config.values[key] = value
            config.validate()
            csv_path, manifest_path, invariants = run(config)
            print(f"wrote {csv_path} and {manifest_path}")
            if invariants["failed"]:
                print(f"run failed: {invariants['n_quarantined']} trajectories "
                      "quarantined (over 1% of the ensemble)", file=sys.stderr)
                return 1
            if invariants["n_quarantined"]:
                print(f"warning: {invariants['n_quarantined']} trajectories "
                      "quarantined", file=sys.stderr)
            return 0
        sys.stdout.write(inspect_model(config, n_points=args.points))
        return 0
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
