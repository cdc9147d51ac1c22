"""Robust day-ahead equilibrium: proximal best-response sweeps over the active
users alternated with the worst-case error solve, plus equilibrium and
monotonicity diagnostics.

One outer iteration is a full sweep of proximal best responses followed by a
fresh worst-case solve on the new loads. Each sweep solves the regularized
game inexactly (one pass) and the proximal centroids then move to the new
loads, so the proximal term acts as damping on the best-response dynamics.
The run stops once the relative change ``||l^i - l^{i-1}|| / ||l^i||`` is
below ``outer_tol`` and no user can lower its cost by more than a fraction
``10 * ne_tol`` by deviating alone.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MaxOuterIterations
from .model import aggregate_load, total_grid_cost, user_costs, user_sum
from .scenario import Scenario
from .users import best_response
from .worstcase import (SlotErrorProblem, contraction_constant, inner_hessian_eigenvalues,
                        initial_errors, solve_errors, strong_monotonicity_threshold)

log = logging.getLogger(__name__)


class SweepMode(str, enum.Enum):
    GAUSS_SEIDEL = "gauss-seidel"
    JACOBI = "jacobi"


@dataclass(frozen=True)
class SolverConfig:
    tau: float | None = None
    outer_tol: float = 1e-2
    inner_tol: float = 1e-8
    max_outer: int = 500
    sweep_mode: SweepMode = SweepMode.GAUSS_SEIDEL
    ne_tol: float = 1e-6
    robust: bool = True
    inner_max_iter: int = 200

    def __post_init__(self):
        object.__setattr__(self, "sweep_mode", SweepMode(self.sweep_mode))
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if min(self.outer_tol, self.inner_tol, self.ne_tol) <= 0 or self.max_outer < 1:
            raise ValueError("tolerances must be positive and max_outer >= 1")

    def resolved_tau(self, scenario: Scenario) -> float:
        """Explicit ``tau``, else ``K_max * N`` for Jacobi sweeps and
        ``K_max * max(1, N**(2/3) / 3)`` for Gauss-Seidel, with ``N`` the
        number of active users. The Gauss-Seidel scaling is empirical: it
        keeps the sweep count near its minimum from 10 to 500 active users."""
        if self.tau is not None:
            return self.tau
        k_max = float(scenario.params.k.max())
        active = max(1, len(scenario.active))
        if self.sweep_mode is SweepMode.JACOBI:
            return k_max * active
        return k_max * max(1.0, active ** (2.0 / 3.0) / 3.0)


@dataclass
class TraceRecord:
    iteration: int
    relative_change: float
    delta_residual: float
    wall_clock_ms: float
    max_change: float = 0.0
    inner_iterations: int = 0


@dataclass
class EquilibriumResult:
    loads: np.ndarray
    errors: np.ndarray
    lambdas: np.ndarray
    outer_iterations: int
    trace: list
    converged: bool
    ne_certificate: float
    tau: float
    robust: bool = True
    contraction_q: np.ndarray | None = None
    schedules: list = field(default_factory=list)
    clamped: bool = False

    @property
    def robust_aggregate(self) -> np.ndarray:
        """``sum_m l_m(h) + delta_m(h)`` per slot."""
        return user_sum(self.loads) + user_sum(self.errors)

    @property
    def aggregate(self) -> np.ndarray:
        return user_sum(self.loads)

    @property
    def contraction_certified(self) -> np.ndarray | None:
        return None if self.contraction_q is None else self.contraction_q < 1.0

    def user_costs(self, params) -> np.ndarray:
        return user_costs(self.loads, self.errors, params)

    def total_cost(self, params) -> float:
        return total_grid_cost(self.loads, self.errors, params) \
            + params.beta_m * float(np.sum(self.errors**2))


def _sweep(scenario, loads, errors, centroid, tau, mode, warm):
    params = scenario.params
    new = loads.copy()
    err_total = user_sum(errors)
    total = user_sum(loads)
    for n in scenario.active:
        basis = new if mode is SweepMode.GAUSS_SEIDEL else loads
        others = (total - loads[n]) if mode is SweepMode.JACOBI else (total - new[n])
        br = best_response(n, basis, errors, centroid[n], tau, params, scenario.users[n],
                           others_total=others, error_total=err_total, x0=warm.get(n))
        warm[n] = br.x
        if mode is SweepMode.GAUSS_SEIDEL:
            total += br.load - new[n]
        new[n] = br.load
    return new


def worst_case(loads, params, *, tol=1e-8, max_iter=200, delta0=None):
    """Worst-case errors and dual prices for fixed loads (checks ``L(h) > 0``)."""
    aggregate_load(loads)
    return solve_errors(loads, params.alpha, params.k, params.beta_m, tol=tol,
                        max_iter=max_iter, delta0=delta0)


def contraction_constants(loads, alpha) -> np.ndarray:
    return np.array([contraction_constant(SlotErrorProblem.from_loads(loads, h, alpha[h]))
                     for h in range(loads.shape[1])])


def solve(scenario: Scenario, config: SolverConfig = SolverConfig(), *,
          strict: bool = False, callback=None) -> EquilibriumResult:
    """Compute the robust (or, with ``config.robust=False``, naive) equilibrium.

    Naive users optimize against zero errors; the worst case is then priced
    once on their final loads. Running out of outer iterations returns the
    last iterate with ``converged=False`` unless ``strict`` is set, in which
    case :class:`MaxOuterIterations` carries it.
    """
    params = scenario.params
    D = scenario.user_count
    tau = config.resolved_tau(scenario)
    loads = scenario.base_demand.copy()
    aggregate_load(loads)
    errors = initial_errors(D, params.alpha) if config.robust else np.zeros_like(loads)
    warm: dict = {}
    trace = []
    converged = False
    t0 = time.perf_counter()
    inner_iters = 0
    residual = 0.0

    if not scenario.active:
        ws = worst_case(loads, params, tol=config.inner_tol, max_iter=config.inner_max_iter)
        trace.append(TraceRecord(1, 0.0, ws.residual, 1e3 * (time.perf_counter() - t0), 0.0,
                                 ws.iterations))
        return EquilibriumResult(loads, ws.delta, ws.lambdas, 1, trace, True, 0.0, tau,
                                 config.robust, contraction_constants(loads, params.alpha),
                                 clamped=ws.clamped)

    gap = np.inf
    gap_at = None
    last_check = 0
    for i in range(1, config.max_outer + 1):
        new = _sweep(scenario, loads, errors, loads, tau, config.sweep_mode, warm)
        aggregate_load(new)
        diff = new - loads
        max_change = float(np.abs(diff).max())
        rel = float(np.linalg.norm(diff) / np.linalg.norm(new))
        loads = new
        if config.robust:
            ws = worst_case(loads, params, tol=config.inner_tol, max_iter=config.inner_max_iter,
                            delta0=errors)
            errors, residual, inner_iters = ws.delta, ws.residual, ws.iterations
        trace.append(TraceRecord(i, rel, residual, 1e3 * (time.perf_counter() - t0),
                                 max_change, inner_iters))
        if callback is not None:
            callback(trace[-1])
        # The gap costs one more sweep of best responses, so it is checked on
        # a sparse schedule once the loads have settled.
        if rel <= config.outer_tol and i - last_check >= max(1, i // 10):
            last_check = i
            gap, gap_at = equilibrium_gap(scenario, loads, errors), i
            if gap <= 10.0 * config.ne_tol:
                converged = True
                break

    if gap_at != len(trace):
        gap = equilibrium_gap(scenario, loads, errors)
    ws = worst_case(loads, params, tol=config.inner_tol, max_iter=config.inner_max_iter,
                    delta0=errors if config.robust else None)
    errors, lambdas, clamped = ws.delta, ws.lambdas, ws.clamped
    schedules = [scenario.users[n].polytope.schedule(warm[n]) if n in warm else None
                 for n in range(D)]
    result = EquilibriumResult(loads, errors, lambdas, len(trace), trace, converged, gap,
                               tau, config.robust, contraction_constants(loads, params.alpha),
                               schedules, clamped)
    if not converged:
        log.warning("no equilibrium within %d outer iterations (last relative change %.3e, "
                    "equilibrium gap %.3e)", config.max_outer, trace[-1].relative_change, gap)
        if strict:
            raise MaxOuterIterations(result)
    uncertified = np.flatnonzero(~result.contraction_certified)
    if uncertified.size:
        log.warning("contraction not certified (q >= 1) at slots %s", uncertified.tolist())
    return result


def naive_config(config: SolverConfig) -> SolverConfig:
    return replace(config, robust=False)


def equilibrium_gap(scenario: Scenario, loads: np.ndarray, errors: np.ndarray) -> float:
    """Largest relative cost reduction any active user could obtain by
    deviating alone from ``loads`` with ``errors`` held fixed.

    The improvement is relative to the user's cost magnitude, floored at the
    population's mean cost magnitude so that users with near-zero bills do
    not blow up the ratio.
    """
    params = scenario.params
    costs = user_costs(loads, errors, params)
    floor = float(np.mean(np.abs(costs)))
    total = user_sum(loads)
    err_total = user_sum(errors)
    worst = 0.0
    for n in scenario.active:
        br = best_response(n, loads, errors, loads[n], 0.0, params, scenario.users[n],
                           others_total=total - loads[n], error_total=err_total)
        gain = (costs[n] - br.objective) / max(abs(costs[n]), floor)
        worst = max(worst, float(gain))
    return worst


def cost_disagreement(a: np.ndarray, b: np.ndarray) -> float:
    """Largest per-user difference between two cost vectors, relative to each
    user's cost magnitude floored at the population's mean magnitude (the
    same normalization as ``equilibrium_gap``)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    floor = float(np.mean(np.abs(b)))
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def verify_equilibrium(result: EquilibriumResult, scenario: Scenario) -> float:
    """Equilibrium gap of ``result`` (best responses with ``tau = 0``).

    The errors stay fixed at the result's values, which for a naive result
    are zero.
    """
    errors = result.errors if result.robust else np.zeros_like(result.loads)
    return equilibrium_gap(scenario, result.loads, errors)


@dataclass
class MonotonicityReport:
    day_ahead_min_eigenvalue: float
    inner_max_eigenvalue: np.ndarray
    inner_thresholds: np.ndarray
    strongly_monotone: np.ndarray
    user_count: int

    @property
    def day_ahead_monotone(self) -> bool:
        return self.day_ahead_min_eigenvalue >= 0


def monotonicity_diagnostics(scenario: Scenario, at: EquilibriumResult) -> MonotonicityReport:
    """Spectra of the day-ahead game Jacobian ``diag(K) kron (I + 11')`` and
    of the inner-game Hessian ``(K + 2 beta - 2 lam) I + K 11'`` per slot."""
    params = scenario.params
    D = scenario.user_count
    k = params.k
    day_min = float(min(k.min(), (k * (D + 1)).min()))
    big, small = inner_hessian_eigenvalues(k, params.beta_m, at.lambdas, D)
    inner_max = np.maximum(big, small)
    thresholds = strong_monotonicity_threshold(k, params.beta_m, D)
    return MonotonicityReport(day_min, inner_max, thresholds, at.lambdas > thresholds, D)
