"""Command line entry point: ``heavysep <task> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, DomainError, NumericalError
from .harness import TASKS, resolve_config, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--N", type=int, help="lattice size (bulk is 1..N-1)")
    g.add_argument("--gamma", type=float, help="tail exponent in (0, 2), not 1")
    g.add_argument("--theta", type=float, help="reservoir strength exponent")
    g.add_argument("--kappa", type=float, help="reservoir intensity")
    g.add_argument("--alpha", type=float, help="left reservoir density")
    g.add_argument("--beta", type=float, help="right reservoir density")
    g.add_argument("--variant", choices=["full", "one-site", "diffusive-bulk"])
    r = common.add_argument_group("run")
    r.add_argument("--T", type=float, help="macroscopic horizon")
    r.add_argument("--times", type=int, help="number of sample intervals on [0, T]")
    r.add_argument("--replicas", type=int)
    r.add_argument("--seed", type=int, help="base seed; replica k derives its stream from (seed, k)")
    r.add_argument("--initial", type=float, help="constant initial density")
    r.add_argument("--workers", type=int, help="worker processes for replicas")
    r.add_argument("--config", help="YAML or JSON file with flat key-value settings")
    r.add_argument("--out", help="output directory (results.csv, summary.json, run_meta.json)")
    q = common.add_argument_group("diagnostics")
    q.add_argument("--epsilon", type=float, help="Taylor cutoff radius of the singular quadratures")
    q.add_argument("--panels", type=int)
    q.add_argument("--N-grid", dest="N_grid", help="lattice sizes for verify-operator, e.g. 128,256,512")
    q.add_argument("--gamma-grid", dest="gamma_grid", help="gamma values for sweep")
    q.add_argument("--theta-grid", dest="theta_grid", help="theta values for sweep")
    q.add_argument("--test-function", dest="test_function", help="poly4 | u | u2 | sin")
    q.add_argument("--regime-override", dest="regime_override", help="also evaluate this regime's functional")

    parser = argparse.ArgumentParser(prog="heavysep", description=__doc__)
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        sub.add_parser(task, parents=[common])
    return parser


def main(argv=None, environ=None):
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    task = args.pop("task")
    config_path = args.pop("config")
    try:
        cfg = resolve_config(args, config_path, environ, task=task)
        record = run(cfg)
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, default=str), file=sys.stderr)
        return EXIT_NUMERICAL
    summary = {"task": record.task, "config_hash": record.config_hash, "payload": record.payload}
    if record.files:
        summary["files"] = record.files
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK
