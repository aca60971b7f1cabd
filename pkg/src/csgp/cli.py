"""Command-line entry point: ``csgp run | plot-data | validate | describe``."""

import argparse
import json
import logging
import os
import sys
import time

from csgp.config import ExperimentConfig, apply_overrides, load_config, parse_config
from csgp.errors import ConfigError
from csgp.harness import atomic_write, curves_from_trace, read_trace, run_experiment, write_json, write_trace
from csgp.policies import POLICY_NAMES
from csgp.validation import SUITES, format_table, run_suite

log = logging.getLogger("csgp")


def _configure_logging(args):
    level = logging.INFO
    if getattr(args, "quiet", False):
        level = logging.WARNING
    elif getattr(args, "verbose", False):
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)


def _resolve_config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"experiment.base_seed={args.seed}")
    if args.config:
        return load_config(args.config, overrides)
    return parse_config(apply_overrides({}, overrides))


def cmd_run(args):
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = args.out or "."
    n_eps = cfg.experiment.replications * len(cfg.policies)
    log.info("running %d episodes (%s, T=%d)", n_eps, cfg.env.type, cfg.experiment.T)
    t0 = time.perf_counter()

    def progress(results):
        for e in results:
            status = "ok" if e.ok else f"FAILED ({e.error})"
            final = e.rows[-1][7] if e.rows else float("nan")
            log.info("replication %d %-9s R_T=%.3f %s", e.replication, e.policy, final, status)

    rows, summary = run_experiment(cfg, jobs=max(1, args.jobs), progress=progress)
    try:
        write_trace(os.path.join(out, cfg.output.trace), rows)
        write_json(os.path.join(out, cfg.output.summary), summary)
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return 1
    log.info("done in %.1f s", time.perf_counter() - t0)
    for name, entry in summary["policies"].items():
        if entry.get("replications"):
            log.info("%-9s mean R_T %.3f (SE %.3f)", name, entry["mean_cum_regret"][-1], entry["se_cum_regret"][-1])
    if summary["failures"]:
        print(f"{len(summary['failures'])} episode(s) failed; see the summary file", file=sys.stderr)
        return 2
    return 0


def cmd_plot_data(args):
    try:
        rows = read_trace(args.trace)
    except (OSError, ValueError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return 1
    curves = curves_from_trace(rows)
    wanted = args.policy or sorted(curves)
    missing = [p for p in wanted if p not in curves]
    if missing:
        print(f"policies not in trace: {', '.join(missing)}", file=sys.stderr)
        return 1
    out = args.out or "."
    for pol in wanted:
        t, mean, se = curves[pol]
        lines = ["t,mean_cum_regret,se_cum_regret"]
        lines += [f"{ti},{format(float(m), '.17g')},{format(float(s), '.17g')}" for ti, m, s in zip(t, mean, se)]
        atomic_write(os.path.join(out, f"curve_{pol}.csv"), "\n".join(lines) + "\n")
        log.info("wrote curve_%s.csv (%d rows)", pol, len(t))
    return 0


def cmd_validate(args):
    t0 = time.perf_counter()
    results = run_suite(args.suite)
    print(format_table(results))
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed in {time.perf_counter() - t0:.1f} s")
    return 0 if n_fail == 0 else 1


def cmd_describe(args):
    try:
        cfg = _resolve_config(args) if (args.config or args.set or args.seed is not None) else ExperimentConfig()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    info = {"resolved_config": cfg.to_dict(), "policies": list(POLICY_NAMES), "validate_suites": list(SUITES)}
    print(json.dumps(info, indent=2))
    return 0


def _add_config_flags(p):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
    p.add_argument("--seed", type=int, help="override experiment.base_seed")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--quiet", action="store_true", help="warnings and errors only")
    verb.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="csgp", description="Concave spline GP contextual bandits")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run an experiment and write trace + summary")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (default: current)")
    p.add_argument("--jobs", type=int, default=1, help="parallel replications")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plot-data", parents=[common], help="per-policy mean/SE curves from a trace")
    p.add_argument("trace", help="trace CSV written by `run`")
    p.add_argument("--out", help="output directory (default: current)")
    p.add_argument("--policy", action="append", help="restrict to these policies")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("validate", parents=[common], help="run built-in invariant suites")
    p.add_argument("suite", nargs="?", default="all", choices=[*SUITES, "all"])
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("describe", parents=[common], help="print the resolved config and available names")
    _add_config_flags(p)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
