"""Command-line front end: ``detumble {run,suite,field-compare,rank-sweep}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .controllability import rank_sweep
from .geomag import compare_models, comparison_csv, load_igrf
from .sim import CONTROLLERS, TRUTH_MODELS, ConfigError, RunConfig, load_config, run_suite, summary_csv

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--plot", action="store_true", help="also write SVG plots")
    p.add_argument("--truth-model", choices=TRUTH_MODELS, help="override the plant field model")
    p.add_argument("--controller", choices=CONTROLLERS, help="run only this controller")
    p.add_argument("--max-minutes", type=float, help="override the simulated time limit")
    p.add_argument("--workers", type=int, default=None, help="parallel processes (default: CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="detumble", description="Magnetic detumbling simulation: B-dot vs. NMPC.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one case config")
    p.add_argument("config", type=Path)
    _common(p)

    p = sub.add_parser("suite", help="run a directory or list of case configs")
    p.add_argument("configs", nargs="+", type=Path)
    _common(p)

    p = sub.add_parser("field-compare", help="dipole vs. IGRF over one orbit")
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--step", type=float, default=10.0, help="sample spacing [s]")
    p.add_argument("--frame", choices=("body", "orbital", "inertial"), default="body")

    p = sub.add_parser("rank-sweep", help="controllability rank over one orbit")
    p.add_argument("config", type=Path)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--samples", type=int, default=360)
    p.add_argument("--at-rest", action="store_true", help="evaluate at omega = 0 instead of the case's initial rate")
    return ap


def _expand(paths: list[Path]) -> list[Path]:
    out: list[Path] = []
    for p in paths:
        if p.is_dir():
            found = sorted([*p.glob("*.yaml"), *p.glob("*.yml")])
            if not found:
                raise ConfigError(f"no *.yaml configs in {p}")
            out.extend(found)
        else:
            out.append(p)
    return out


def _overrides(cfgs: list[RunConfig], args) -> list[RunConfig]:
    out = []
    for c in cfgs:
        if args.controller and c.controller != args.controller:
            continue
        kw = {}
        if args.truth_model:
            kw["truth_model"] = args.truth_model
        if args.max_minutes is not None:
            kw["max_duration"] = 60.0 * args.max_minutes
        out.append(replace(c, **kw) if kw else c)
    if args.controller and not out:
        # the config did not list this controller; run it anyway on the case's settings
        out = [replace(cfgs[0], controller=args.controller)]
        return _overrides(out, argparse.Namespace(**{**vars(args), "controller": None}))
    return out


def _cmd_runs(args) -> int:
    paths = _expand([args.config] if args.cmd == "run" else args.configs)
    cfgs: list[RunConfig] = []
    for p in paths:
        cfgs.extend(_overrides(load_config(p), args))
    results, code = run_suite(cfgs, args.out, args.plot, args.workers)
    sys.stdout.write(summary_csv(cfgs, results))
    for r in results:
        if r.status != "ok":
            print(f"FAILED {r.name}/{r.controller}: {r.message}", file=sys.stderr)
    return code


def _cmd_field_compare(args) -> int:
    cfg = load_config(args.config)[0]
    coeffs = load_igrf(cfg.igrf_path, cfg.igrf_degree)
    cmp = compare_models(cfg.orbit, coeffs, step=args.step, epoch_year=cfg.epoch_year, frame=args.frame, q=np.array(cfg.q0))
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{cfg.name}_field_compare.csv"
    path.write_text(comparison_csv(cmp))
    print(path)
    return EXIT_OK


def _cmd_rank_sweep(args) -> int:
    cfg = load_config(args.config)[0]
    omega = np.zeros(3) if args.at_rest else np.radians(cfg.omega0_dps)
    rep = rank_sweep(cfg.inertia, cfg.orbit, n_samples=args.samples, omega=omega)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{cfg.name}_rank_sweep.csv"
    path.write_text(rep.to_csv())
    print(rep.summary())
    print(path)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": _cmd_runs, "suite": _cmd_runs, "field-compare": _cmd_field_compare, "rank-sweep": _cmd_rank_sweep}
    try:
        return handlers[args.cmd](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"detumble: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"detumble: error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
