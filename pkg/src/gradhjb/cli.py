"""Command-line entry point: solve, sweep, verify, mc-check.

Every command reads one config file, writes its outputs (CSV plus a text
report and PNG figures) into --out, and returns a documented exit status:
0 success, 1 config error, 2 solver failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .control import SimConfig, policy_from_solution, simulate_cost
from .grid import read_solution_csv, write_solution_csv
from .solver import NonConvergence, SingularLinearSystem, solve
from .verify import run_verification, uniform_bound_sweep

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVE = 2
EXIT_VERIFY = 3


def _add_common(sp):
    sp.add_argument("--config", required=True, help="path to the run config file")
    sp.add_argument("--out", default="out", help="output directory (default ./out)")
    sp.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep cells")
    sp.add_argument("--seed", type=int, default=None, help="override the Monte Carlo seed")
    sp.add_argument("--override-wellposedness", action="store_true",
                    help="accept f <= 0 or H(0) >= 0, asserting a subsolution certificate")
    sp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradhjb",
        description="Penalty solver and verification suite for gradient-constrained "
                    "elliptic equations max{F(D2u,x)-f(x), H(Du)} = 0.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "run the continuation solve and write the solution"),
        ("sweep", "solve across eps and grid refinements; write bound tables"),
        ("verify", "run residual/violation/comparison and structural checks"),
        ("mc-check", "Monte Carlo one-sided bound at the configured start points"),
    ):
        sp = sub.add_parser(name, help=help_)
        _add_common(sp)
        if name == "verify":
            sp.add_argument("--solution", default=None,
                            help="verify this solution CSV instead of re-solving")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, override_wellposedness=args.override_wellposedness)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        handler = {"solve": _cmd_solve, "sweep": _cmd_sweep,
                   "verify": _cmd_verify, "mc-check": _cmd_mc}[args.command]
        return handler(cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, SingularLinearSystem) as exc:
        print(f"solve error: {exc}", file=sys.stderr)
        return EXIT_SOLVE


def _write_report(out: Path, command: str, cfg: RunConfig, lines) -> None:
    with open(out / "report.txt", "w") as fh:
        fh.write(f"gradhjb {command}: {cfg.name}\n")
        fh.write(f"schedule: {', '.join(f'{e:g}' for e in cfg.schedule)} family: {cfg.family}\n")
        for line in lines:
            fh.write(line + "\n")


def _write_diag_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "key1", "key2", "value"])
        for row in rows:
            w.writerow(row)


def _stage_rows(stages):
    for s in stages:
        for name in ("newton_iters", "residual_sup", "constraint_sup",
                     "penalty_sup", "lower_gap", "upper_gap"):
            yield ("stage", f"{s.eps:.17g}", name, f"{getattr(s, name):.17g}")


def _cmd_solve(cfg: RunConfig, args, out: Path) -> int:
    p = cfg.problem_for()
    rep = solve(p, cfg.schedule, family=cfg.family,
                newton_tol=cfg.newton_tol, max_iters=cfg.max_iters)
    write_solution_csv(rep.u, out / "solution.csv")
    _write_diag_csv(out / "diagnostics.csv", _stage_rows(rep.stages))
    _write_report(out, "solve", cfg, rep.summary_lines())
    if not args.no_figures:
        from .plots import save_solution_figure

        save_solution_figure(rep, p, out / "solution.png")
    print(f"solved {cfg.name}: {len(rep.stages)} stages, "
          f"final residual {rep.final_stage.residual_sup:.3e}, outputs in {out}")
    return EXIT_OK


def _sweep_cell(payload):
    cfg, m = payload
    p = cfg.problem_for((m,) * cfg.dim)
    return m, uniform_bound_sweep(p, cfg.schedule, cfg.margins,
                                  growth_factor=cfg.growth_factor,
                                  family=cfg.family, newton_tol=cfg.newton_tol)


def _cmd_sweep(cfg: RunConfig, args, out: Path) -> int:
    cells = [(cfg, m) for m in cfg.refinements]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    diags = dict(results)
    rows, lines, failed = [], [], False
    for m, diag in diags.items():
        for row in diag.csv_rows():
            rows.append((f"m{m}_{row[0]}",) + row[1:])
        for line in diag.summary_lines():
            lines.append(f"m={m} {line}")
        failed |= not diag.passed
    _write_diag_csv(out / "diagnostics.csv", rows)
    _write_report(out, "sweep", cfg, lines)
    if not args.no_figures:
        from .plots import save_sweep_figure

        save_sweep_figure(diags, out / "sweep.png")
    print(f"sweep {cfg.name}: refinements {list(diags)} -> "
          f"{'FAIL' if failed else 'PASS'}, outputs in {out}")
    return EXIT_VERIFY if failed else EXIT_OK


def _cmd_verify(cfg: RunConfig, args, out: Path) -> int:
    p = cfg.problem_for()
    u = None
    if args.solution is not None:
        u = read_solution_csv(p.grid, args.solution)
    diag = run_verification(p, cfg.schedule, margins=cfg.margins, family=cfg.family,
                            newton_tol=cfg.newton_tol, u=u)
    rows = list(diag.csv_rows()) + list(_stage_rows(diag.stages))
    _write_diag_csv(out / "diagnostics.csv", rows)
    _write_report(out, "verify", cfg, diag.summary_lines())
    if not args.no_figures:
        from .plots import save_residual_figure
        from .solver import solve_unconstrained

        target = u
        if target is None:
            rep = solve(p, cfg.schedule, family=cfg.family, newton_tol=cfg.newton_tol)
            target = rep.u
        save_residual_figure(target, p, out / "residual.png")
    status = "PASS" if diag.passed else "FAIL"
    print(f"verify {cfg.name}: {status}, outputs in {out}")
    return EXIT_OK if diag.passed else EXIT_VERIFY


def _cmd_mc(cfg: RunConfig, args, out: Path) -> int:
    p = cfg.problem_for()
    rep = solve(p, cfg.schedule, family=cfg.family,
                newton_tol=cfg.newton_tol, max_iters=cfg.max_iters)
    pol = policy_from_solution(p, rep.u, cfg.resolved_active_tol())
    seed = args.seed if args.seed is not None else cfg.mc.seed
    sim = SimConfig(dt=cfg.mc.dt, paths=cfg.mc.paths, max_steps=cfg.mc.max_steps, seed=seed)
    starts = cfg.mc.x0 or [[0.5 * (lo + hi) for lo, hi in cfg.bounds]]
    rows, lines, fig_rows, failed = [], [], [], False
    for x0 in starts:
        sample = simulate_cost(p, pol, x0, sim)
        u0 = float(rep.u.interp(np.atleast_2d(np.asarray(x0, dtype=float)))[0])
        bound = sample.mean + 3 * sample.std_error + cfg.mc.slack
        ok = bound >= u0
        failed |= not ok
        label = ", ".join(f"{v:g}" for v in np.atleast_1d(x0))
        rows += [("mc", label, "mean", f"{sample.mean:.17g}"),
                 ("mc", label, "std_error", f"{sample.std_error:.17g}"),
                 ("mc", label, "truncated_fraction", f"{sample.truncated_fraction:.17g}"),
                 ("mc", label, "u_value", f"{u0:.17g}")]
        lines.append(f"{'PASS' if ok else 'FAIL'} mc_bound x0=({label}) "
                     f"mean={sample.mean:.6f} se={sample.std_error:.2e} "
                     f"trunc={sample.truncated_fraction:.3%} u={u0:.6f}")
        fig_rows.append((label, sample.mean, sample.std_error, u0))
    _write_diag_csv(out / "diagnostics.csv", rows)
    _write_report(out, "mc-check", cfg, lines)
    if not args.no_figures:
        from .plots import save_mc_figure

        save_mc_figure(fig_rows, out / "mc.png")
    print(f"mc-check {cfg.name}: {'FAIL' if failed else 'PASS'}, outputs in {out}")
    return EXIT_VERIFY if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
