"""Command-line entry point: ``adtopo run | check-grad | bench | export``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import driver
from .mesh import build_grid


def _run(args) -> int:
    cfg = driver.load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rho, history = driver.run_optimization(cfg)
    mesh = build_grid(cfg.nelx, cfg.nely, cfg.kind)
    phys = driver.build_problem(cfg).setup.pipeline.physical_values(rho)
    driver.export_density(phys, mesh, out / "design.pgm", history, out / "history.csv")
    driver.save_state(out / "state.npz", cfg, rho, history)
    diag = driver.final_diagnostics(cfg, rho)
    print(f"{history.termination} after {len(history)} iterations")
    for key, value in diag.items():
        print(f"  {key:<16} {value:.6g}")
    infeasible = [k for k in history.constraint_names if diag[k] > 5e-3 / cfg.vf]
    if infeasible:
        print(f"constraint violated at final iterate: {', '.join(infeasible)}", file=sys.stderr)
        return 1
    return 0


def _check_grad(args) -> int:
    cfg = driver.load_config(args.config)
    report = driver.gradient_check(cfg, args.probes, seed=args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _bench(args) -> int:
    cfg = driver.load_config(args.config)
    text, rows = driver.timing_harness(cfg, args.csv)
    if args.csv is None:
        print(text, end="")
    return 0 if rows or cfg.max_iter == 0 else 1


def _export(args) -> int:
    state = driver.load_state(args.state)
    mesh = build_grid(int(state["nelx"]), int(state["nely"]), str(state["kind"]))
    field = state["physical"] if "physical" in state else state["rho"]
    driver.export_density(np.asarray(field), mesh, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adtopo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="optimize a design from a TOML config")
    r.add_argument("config")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.set_defaults(func=_run)

    g = sub.add_parser("check-grad", help="audit AD gradients against FD and hand-derived oracles")
    g.add_argument("config")
    g.add_argument("--probes", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_check_grad)

    b = sub.add_parser("bench", help="per-iteration timing of AD vs manual sensitivities")
    b.add_argument("config")
    b.add_argument("--csv", default=None, help="write CSV here instead of stdout")
    b.set_defaults(func=_bench)

    e = sub.add_parser("export", help="write a PGM image from a saved state.npz")
    e.add_argument("state")
    e.add_argument("out")
    e.set_defaults(func=_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, driver.RunError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"adtopo {args.command}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
