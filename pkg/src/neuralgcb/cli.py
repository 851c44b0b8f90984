"""``bandit`` command line: run experiments, plot regret, run checks, preprocess UCI data."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import verify
from .bandit_env import load_uci
from .experiment import ConfigError, load_config, run_experiment
from .plotting import PlotError, read_regret_csvs, render_svg

__all__ = ["main", "build_parser", "run_check"]

CHECKS = ("ntk", "krr", "coverage", "concentration", "dual")
UCI_SOURCES = {
    "mushroom": "https://archive.ics.uci.edu/ml/datasets/mushroom (agaricus-lepiota.data)",
    "statlog": "https://archive.ics.uci.edu/ml/datasets/Statlog+(Shuttle) (shuttle.trn)",
}


class _KrrSummary:
    """Median gaps per width for the trained-net vs kernel-regression check."""

    def __init__(self, reports):
        self.reports = reports
        by_m = {}
        for r in reports:
            by_m.setdefault(r.m, []).append(r.gap)
        self.medians = {m: sorted(v)[len(v) // 2] for m, v in sorted(by_m.items())}

    def passed(self):
        med = self.medians
        return med[2048] < verify.TOLERANCES["krr_max_gap"] and med[4096] <= med[1024]

    def rows(self):
        out = [(f"gap[m={r.m},seed={r.seed}]", r.gap) for r in self.reports]
        out += [(f"median_gap[m={m}]", v) for m, v in self.medians.items()]
        return out + [("passed", int(self.passed()))]


def run_check(name):
    """Run one named check with its frozen settings; returns (passed, rows)."""
    if name == "ntk":
        rep = verify.check_ntk_convergence()
    elif name == "krr":
        summary = _KrrSummary(
            [verify.check_krr_equivalence(m=m, seed=s) for m in (1024, 2048, 4096) for s in range(3)]
        )
        return summary.passed(), summary.rows()
    elif name == "coverage":
        rep = verify.check_coverage()
    elif name == "concentration":
        rep = verify.check_concentration()
    elif name == "dual":
        rep = verify.check_dual()
    else:
        raise ValueError(f"unknown check {name!r}")
    return rep.passed(), verify.report_rows(rep)


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
        finals = run_experiment(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # dataset problems from load_uci and friends
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for label, vals in finals.items():
        mean = sum(vals) / len(vals)
        print(f"{label}: mean final regret {mean:.3f} over {len(vals)} seeds")
    print(f"wrote {cfg.output}")
    return 0


def _cmd_plot(args):
    try:
        svg = render_svg(read_regret_csvs(args.csv), title=args.title)
    except (PlotError, OSError) as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return 1
    Path(args.output).write_text(svg)
    return 0


def _cmd_verify(args):
    passed, rows = run_check(args.check)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["check", "metric", "value"])
        for metric, value in rows:
            w.writerow([args.check, metric, repr(value) if isinstance(value, float) else value])
    finally:
        if args.output:
            out.close()
    if not passed:
        print(f"verify {args.check}: FAILED", file=sys.stderr)
        return 1
    print(f"verify {args.check}: ok", file=sys.stderr)
    return 0


def _cmd_data_fetch(args):
    src = Path(args.path)
    if not src.exists():
        print(
            f"{src} not found; download it manually from {UCI_SOURCES[args.kind]} "
            "(no network access is attempted)",
            file=sys.stderr,
        )
        return 1
    try:
        X, y = load_uci(src, args.kind, args.per_class, args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.output) if args.output else src.with_name(f"{args.kind}_processed.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"x{j}" for j in range(X.shape[1])])
        for label, row in zip(y, X):
            w.writerow([int(label)] + [repr(float(v)) for v in row])
    print(f"{args.kind}: {len(y)} rows, {X.shape[1]} features -> {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bandit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo experiment from an INI config")
    run.add_argument("config")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: BANDIT_THREADS or 1)")
    run.set_defaults(func=_cmd_run)

    plot = sub.add_parser("plot", help="render regret CSVs to SVG")
    plot.add_argument("csv", nargs="+")
    plot.add_argument("-o", "--output", required=True)
    plot.add_argument("--title", default="Cumulative regret")
    plot.set_defaults(func=_cmd_plot)

    ver = sub.add_parser("verify", help="run a numerical check")
    ver.add_argument("check", choices=CHECKS)
    ver.add_argument("-o", "--output", help="write the report CSV here instead of stdout")
    ver.set_defaults(func=_cmd_verify)

    data = sub.add_parser("data", help="dataset utilities")
    dsub = data.add_subparsers(dest="data_command", required=True)
    fetch = dsub.add_parser("fetch", help="preprocess a pre-downloaded UCI file")
    fetch.add_argument("kind", choices=sorted(UCI_SOURCES))
    fetch.add_argument("path")
    fetch.add_argument("-o", "--output")
    fetch.add_argument("--per-class", type=int, default=1000)
    fetch.add_argument("--seed", type=int, default=0)
    fetch.set_defaults(func=_cmd_data_fetch)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
