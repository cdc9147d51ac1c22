"""Command-line front end: ``robust-dsm <command> [options]``.

Commands write CSV (header row, 12 significant digits) and JSON files into
``--out``. Exit codes: 0 success, 1 solver failure, 2 configuration error,
3 oracle mismatch. ``DSM_THREADS`` caps the number of worker processes used
across population sizes (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DsmError
from .game import SolverConfig, naive_config, solve
from .oracles import MAX_USERS, run_oracle_check
from .realtime import monte_carlo_compare
from .scenario import Scenario, ScenarioSpec, build_scenario

log = logging.getLogger("robust_dsm")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG, EXIT_ORACLE = 0, 1, 2, 3
DEFAULT_USERS = (20, 50, 100)


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _user_list(text: str | None):
    if text is None:
        return None
    try:
        users = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--users must be a comma-separated list of integers: {text!r}") \
            from exc
    if not users:
        raise ConfigurationError("--users is empty")
    return users


def threads() -> int:
    raw = os.environ.get("DSM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"DSM_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def solver_config(args) -> SolverConfig:
    kw = {}
    for name in ("tau", "outer_tol", "inner_tol", "max_outer", "ne_tol"):
        value = getattr(args, name, None)
        if value is not None:
            kw[name] = value
    if getattr(args, "sweep", None):
        kw["sweep_mode"] = args.sweep
    if getattr(args, "naive", False):
        kw["robust"] = False
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def scenario_for(args, users: int | None = None) -> Scenario:
    if args.scenario:
        sc = Scenario.load(args.scenario)
        if users is not None and users != sc.user_count:
            raise ConfigurationError("--users conflicts with the loaded scenario")
    else:
        spec = ScenarioSpec(user_count=users or DEFAULT_USERS[0], rng_seed=args.seed)
        if args.beta_m is not None:
            spec = spec.replace(beta_m=args.beta_m)
        sc = build_scenario(spec)
    if args.beta_m is not None and args.scenario:
        sc = sc.with_params(beta_m=args.beta_m)
    return sc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from exc
    return out


def result_document(result, scenario) -> dict:
    return {
        "users": scenario.user_count,
        "slots": scenario.grid.slot_count,
        "robust": result.robust,
        "converged": result.converged,
        "outer_iterations": result.outer_iterations,
        "tau": result.tau,
        "ne_certificate": result.ne_certificate,
        "total_cost": result.total_cost(scenario.params),
        "loads": result.loads.tolist(),
        "errors": result.errors.tolist(),
        "lambdas": result.lambdas.tolist(),
        "robust_aggregate": result.robust_aggregate.tolist(),
        "contraction_q": result.contraction_q.tolist(),
        "contraction_certified": result.contraction_certified.tolist(),
        "clamped": result.clamped,
        "convergence_trace": [t.relative_change for t in result.trace],
    }


def _trace_rows(result, timing=False):
    for t in result.trace:
        row = [t.iteration, t.relative_change, t.delta_residual, t.max_change, t.inner_iterations]
        yield row + [t.wall_clock_ms] if timing else row


TRACE_HEADER = ["iteration", "relative_change", "delta_residual", "max_change",
                "inner_iterations"]


def _solve(scenario, config):
    result = solve(scenario, config)
    if not result.converged:
        log.warning("solver did not converge")
    if not np.all(result.contraction_certified):
        log.warning("contraction not certified at %d slot(s)",
                    int(np.sum(~result.contraction_certified)))
    return result


def cmd_solve(args) -> int:
    out = _out_dir(args)
    users = _user_list(args.users)
    scenario = scenario_for(args, users[0] if users else None)
    result = _solve(scenario, solver_config(args))
    (out / "equilibrium.json").write_text(
        json.dumps(result_document(result, scenario), indent=2, sort_keys=True) + "\n")
    write_csv(out / "trace.csv", TRACE_HEADER, _trace_rows(result))
    p = scenario.params
    write_csv(out / "prices.csv", ["h", "K_h", "L", "L_robust", "lambda_h"],
              zip(scenario.grid.slot_indices, p.k, result.aggregate, result.robust_aggregate,
                  result.lambdas))
    print(f"users={scenario.user_count} converged={result.converged} "
          f"iterations={result.outer_iterations} cost={result.total_cost(p):.6f}")
    return EXIT_OK if result.converged else EXIT_SOLVER


def cmd_convergence_trace(args) -> int:
    out = _out_dir(args)
    users = _user_list(args.users)
    scenario = scenario_for(args, users[0] if users else None)
    result = _solve(scenario, solver_config(args))
    header = TRACE_HEADER + (["wall_clock_ms"] if args.timing else [])
    write_csv(out / "trace.csv", header, _trace_rows(result, args.timing))
    print(f"iterations={result.outer_iterations} "
          f"final_relative_change={result.trace[-1].relative_change:.3e}")
    return EXIT_OK if result.converged else EXIT_SOLVER


def _robust_and_naive(users, seed, beta_m, config):
    spec = ScenarioSpec(user_count=users, rng_seed=seed)
    if beta_m is not None:
        spec = spec.replace(beta_m=beta_m)
    sc = build_scenario(spec)
    return sc, solve(sc, config), solve(sc, naive_config(config))


def _gain_row(job):
    users, seed, beta_m, config = job
    sc, robust, naive = _robust_and_naive(users, seed, beta_m, config)
    r, n = robust.total_cost(sc.params), naive.total_cost(sc.params)
    ok = robust.converged and naive.converged
    return [users, r, n, 100.0 * (n - r) / n, robust.outer_iterations,
            naive.outer_iterations], ok


def _realtime_row(job):
    users, seed, beta_m, config, runs = job
    sc, robust, naive = _robust_and_naive(users, seed, beta_m, config)
    mc = monte_carlo_compare(robust, naive, sc.params, runs, seed)
    row = [users, mc.mean_robust, mc.mean_nonrobust, mc.mean_relative_gain, mc.gain_stderr]
    return row, robust.converged and naive.converged


def _map(fn, jobs):
    n = min(threads(), len(jobs))
    if n <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))


def _population_args(args):
    if args.scenario:
        raise ConfigurationError("this command builds its own scenarios; use --users/--seed")
    users = _user_list(args.users) or list(DEFAULT_USERS)
    if any(u < 2 for u in users):
        raise ConfigurationError("every population needs at least 2 users")
    config = solver_config(args)
    if not config.robust:
        raise ConfigurationError("--naive is implied by this command")
    return users, config


def cmd_sweep_users(args) -> int:
    out = _out_dir(args)
    users, config = _population_args(args)
    results = _map(_gain_row, [(u, args.seed, args.beta_m, config) for u in users])
    write_csv(out / "gains.csv", ["users", "robust_total_cost", "naive_total_cost", "gain_pct",
                                  "outer_iters_robust", "outer_iters_naive"],
              [row for row, _ in results])
    for row, _ in results:
        print(f"users={row[0]} gain_pct={row[3]:.3f}")
    return EXIT_OK if all(ok for _, ok in results) else EXIT_SOLVER


def cmd_realtime_compare(args) -> int:
    out = _out_dir(args)
    users, config = _population_args(args)
    if args.runs < 1:
        raise ConfigurationError("--runs must be at least 1")
    results = _map(_realtime_row, [(u, args.seed, args.beta_m, config, args.runs) for u in users])
    write_csv(out / "realtime.csv", ["users", "mean_robust_cost", "mean_nonrobust_cost",
                                     "gain_pct", "stderr"], [row for row, _ in results])
    for row, _ in results:
        print(f"users={row[0]} gain_pct={row[3]:.3f} stderr={row[4]:.3f}")
    return EXIT_OK if all(ok for _, ok in results) else EXIT_SOLVER


def cmd_oracle_check(args) -> int:
    users = _user_list(args.users)
    if users and max(users) > MAX_USERS:
        raise ConfigurationError(f"oracle instances are capped at {MAX_USERS} users")
    report = run_oracle_check()
    print(report.table())
    if args.out:
        out = _out_dir(args)
        write_csv(out / "oracle.csv", ["check", "instance", "discrepancy", "tolerance", "passed"],
                  [(r.check, r.instance, r.discrepancy, r.tolerance, r.passed)
                   for r in report.rows])
    print("oracle check " + ("passed" if report.passed else "FAILED"))
    return EXIT_OK if report.passed else EXIT_ORACLE


COMMANDS = {
    "solve": cmd_solve,
    "sweep-users": cmd_sweep_users,
    "realtime-compare": cmd_realtime_compare,
    "convergence-trace": cmd_convergence_trace,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-dsm",
                                     description="Robust demand-side management experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", help="scenario JSON file (default: built from --users/--seed)")
        p.add_argument("--out", default=None if name == "oracle-check" else "results",
                       help="output directory")
        p.add_argument("--users", help="comma-separated population sizes")
        p.add_argument("--runs", type=int, default=100, help="Monte Carlo runs")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tau", type=float)
        p.add_argument("--outer-tol", type=float)
        p.add_argument("--inner-tol", type=float)
        p.add_argument("--ne-tol", type=float)
        p.add_argument("--max-outer", type=int)
        p.add_argument("--sweep", choices=["gauss-seidel", "jacobi"])
        p.add_argument("--naive", action="store_true", help="solve the naive (error-blind) game")
        p.add_argument("--beta-m", type=float)
        if name == "convergence-trace":
            p.add_argument("--timing", action="store_true",
                           help="add wall-clock time to trace.csv (breaks byte-identical reruns)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DsmError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
