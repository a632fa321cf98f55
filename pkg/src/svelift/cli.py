"""Command-line entry point ``svelift``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as C
from .errors import SveliftError
from .io import read_ensemble, write_rows
from .lawdist import energy_distance_paths, marginal_distance


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML or JSON experiment config")
    p.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the master seed")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for path blocks")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="svelift", parents=[common], description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_, out_default):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--out", default=out_default, help=f"output file (default {out_default})")
        return sp

    add("kernel-info", "R_m and eps_m tables, kernel values and the balance verdict", "kernel_info.csv")
    add("discretize", "node and weight table of the lift grid", "grid.csv")
    add("kernel-error", "relative error of the discretized kernel", "kernel_error.csv")
    sp = add("simulate-lift", "ensemble from the lifted scheme", "ensemble.csv")
    sp.add_argument("--dump-state", action="store_true", help="add node values Y_j_k per row")
    add("simulate-direct", "ensemble from the direct convolution scheme", "ensemble.csv")
    sp = add("demo-regularization", "branches, perturbed paths and noisy ensembles", "demo.csv")
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--beta", type=float, default=None)
    add("cnr-run", "coupled run: per-path table plus an aggregate block", "cnr.csv")
    add("schedule", "truncation and mollification schedule table", "schedule.csv")
    sp = add("compare-laws", "KS and Wasserstein distance of two ensembles at one time", "report.csv")
    sp.add_argument("--a", required=True, help="first ensemble CSV")
    sp.add_argument("--b", required=True, help="second ensemble CSV")
    sp.add_argument("--t", type=float, required=True, help="comparison time")
    sp.add_argument("--component", type=int, default=0)
    sub.add_parser("run", parents=[common], help="run the config's experiment with a manifest")
    return ap


def _load(args) -> C.ExperimentConfig:
    if getattr(args, "config", None) is None:
        if args.command == "demo-regularization":
            cfg = C.validate({"experiment": "demo-regularization"})
        else:
            raise SveliftError(f"{args.command} needs --config")
    else:
        cfg = C.load_config(args.config)
    return cfg.with_overrides(getattr(args, "seed", None), getattr(args, "threads", None))


def _out(args, name: str) -> Path:
    out = Path(name)
    base = getattr(args, "out_dir", None)
    return Path(base) / out if base and not out.is_absolute() else out


def _compare(args) -> list[Path]:
    a, b = read_ensemble(args.a), read_ensemble(args.b)
    rep = marginal_distance(a, b, args.t, args.component)
    rows = [("t", rep.t), ("component", rep.component), ("n_a", rep.n_a), ("n_b", rep.n_b), ("ks", rep.ks),
            ("ks_pvalue", rep.ks_pvalue), ("ks_critical_1pct", rep.ks_critical), ("wasserstein", rep.wasserstein)]
    if a.X.shape[1] == b.X.shape[1] and a.n_paths * b.n_paths <= 4_000_000:
        rows.append(("energy_distance_paths", energy_distance_paths(a, b)))
    return [write_rows(_out(args, args.out), ("key", "value"), rows)]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare-laws":
            files = _compare(args)
        elif args.command == "run":
            cfg = _load(args)
            out_dir = Path(getattr(args, "out_dir", None) or "out")
            C.run_experiment(cfg, out_dir)
            files = [out_dir / "manifest.json"]
        else:
            cfg = _load(args)
            stage = "cnr" if args.command == "cnr-run" else args.command
            kw = {}
            if args.command == "simulate-lift":
                kw["dump_state"] = args.dump_state
            elif args.command == "demo-regularization":
                kw = {"alpha": args.alpha, "beta": args.beta}
            files = C.run_stage(cfg, stage, _out(args, args.out), **kw)
    except (SveliftError, ValueError, OSError) as exc:
        print(f"svelift: error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
