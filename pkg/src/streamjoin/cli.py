"""Experiment command line: run, sweep, oracle-check, plot.

Exit codes: 0 success, 1 invariant violation, 2 configuration error.
Output directory defaults to $STREAMJOIN_OUTDIR, then ./out.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .config import RunConfig, apply_overrides, load_config
from .errors import ConfigError, StreamJoinError
from .runner import Scenario, run_simulation, run_socket, run_sweep

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2


def _outdir(args) -> str:
    return args.outdir or os.environ.get("STREAMJOIN_OUTDIR", "out")


def _load(args) -> RunConfig:
    return load_config(args.config, args.override or ())


def _add_common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("-o", "--override", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--outdir", help="artifact directory (default $STREAMJOIN_OUTDIR or ./out)")


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.backend == "socket":
        art = run_socket(cfg, record_trace=args.oracle)
    else:
        art = run_simulation(cfg, outdir=_outdir(args), record_trace=args.oracle,
                             trace_in=args.trace_in, trace_out=args.trace_out,
                             scenario=args.name, run_name=args.name)
    m = art.metrics
    print(f"accepted={m.counters.get('accepted', '-')} results={m.total_results} "
          f"avg_delay_ms={m.avg_delay_ms} moves={m.moves} "
          f"activates={m.activates} deactivates={m.deactivates}")
    for k, p in art.paths.items():
        print(f"{k}: {p}")
    if args.oracle:
        print(f"oracle: expected={art.oracle_expected} got={m.total_results} "
              f"duplicates={art.duplicates} match={art.oracle_ok}")
        if not art.oracle_ok:
            return EXIT_INVARIANT
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = []
    for raw in args.values.split(","):
        raw = raw.strip()
        values.append(int(raw) if raw.isdigit() else float(raw))
    scenario = Scenario(cfg, sweep_axis=args.axis, sweep_values=values, name=args.name)
    paths = run_sweep(scenario, _outdir(args))
    print(f"summary: {paths['summary']}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    cfg = _load(args)
    if not args.config and not args.override:
        # small-scale defaults suited to an exact check
        apply_overrides(cfg, [
            "lambda=50", "w_minutes=0.2", "key_domain=500", "n_slaves=2",
            "t_d_sec=0.5", "t_r_sec=2", "duration_sec=30",
            "warmup_sec=0", "measure_sec=30", "force_moves=1",
        ])
        cfg.validate()
    art = run_simulation(cfg, record_trace=True)
    print(f"expected={art.oracle_expected} got={art.metrics.total_results} "
          f"duplicates={art.duplicates} match={art.oracle_ok}")
    return EXIT_OK if art.oracle_ok else EXIT_INVARIANT


def cmd_plot(args) -> int:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; install the [plot] extra", file=sys.stderr)
        return EXIT_CONFIG
    with open(args.results) as fh:
        rows = list(csv.DictReader(fh))
    series: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        if not row.get(args.y):
            continue
        label = row.get(args.series, "") if args.series else ""
        series.setdefault(label, []).append((float(row[args.x]), float(row[args.y])))
    fig, ax = plt.subplots()
    for label, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                marker="o", label=str(label) or None)
    ax.set_xlabel(args.x)
    ax.set_ylabel(args.y)
    if args.series:
        ax.legend(title=args.series)
    fig.savefig(args.out, dpi=120, bbox_inches="tight")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamjoin",
                                description="Distributed sliding-window join experiments")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration")
    _add_common(run)
    run.add_argument("--backend", choices=["sim", "socket"], default="sim")
    run.add_argument("--oracle", action="store_true",
                     help="record the arrival trace and verify against brute force")
    run.add_argument("--trace-in", help="replay a recorded workload trace")
    run.add_argument("--trace-out", help="dump the generated workload trace")
    run.add_argument("--name", default="run")
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="run a parameter sweep")
    _add_common(sweep)
    sweep.add_argument("--axis", required=True, choices=["lambda", "n_slaves", "t_d", "n_g"])
    sweep.add_argument("--values", required=True, help="comma-separated sweep values")
    sweep.add_argument("--name", default="sweep")
    sweep.set_defaults(fn=cmd_sweep)

    oc = sub.add_parser("oracle-check", help="exact equivalence check at small scale")
    _add_common(oc)
    oc.set_defaults(fn=cmd_oracle_check)

    plot = sub.add_parser("plot", help="plot columns of a results/summary CSV")
    plot.add_argument("--results", required=True)
    plot.add_argument("--x", default="lambda_tps")
    plot.add_argument("--y", default="avg_delay_ms")
    plot.add_argument("--series", help="column to split lines by (e.g. n_slaves)")
    plot.add_argument("--out", default="plot.png")
    plot.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StreamJoinError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
