"""Brute-force reference computations for tiny instances.

These deliberately avoid the production code paths: the coupling matrix is
assembled densely, the best response is found by exhaustive grid search and
spectra come from a dense symmetric eigensolver. Instance sizes are capped at
three users and two slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .errors import ConfigurationError, DsmError
from .game import monotonicity_diagnostics
from .model import GridCostParams, TimeGrid
from .scenario import Scenario
from .users import UserKind, UserModel, best_response
from .worstcase import SlotErrorProblem, solve_slot_errors

MAX_USERS = 3
MAX_SLOTS = 2

SLOT_ERROR_TOL = 1e-3
BEST_RESPONSE_TOL = 1e-2
SPECTRUM_TOL = 1e-9


def check_size(users: int, slots: int) -> None:
    if users > MAX_USERS or slots > MAX_SLOTS:
        raise ConfigurationError(f"oracle instances are capped at {MAX_USERS} users and "
                                 f"{MAX_SLOTS} slots, got {users} x {slots}")


def slot_error_oracle(a, alpha: float, step: float = 1e-6) -> np.ndarray:
    """Two-user fixed point on the quarter circle of radius ``sqrt(alpha)``.

    Scans the direction angle ``theta`` and returns the point whose coupled
    direction ``a + (11' - I) delta(theta)`` points back along ``theta``.
    """
    a = np.asarray(a, dtype=float)
    check_size(a.size, 1)
    if a.size != 2:
        raise ConfigurationError("the angular oracle needs exactly two users")
    coupling = np.ones((2, 2)) - np.eye(2)
    theta = np.arange(0.0, np.pi / 2 + step, step)
    pts = np.sqrt(alpha) * np.stack([np.cos(theta), np.sin(theta)])
    v = a[:, None] + coupling @ pts
    mismatch = np.abs(np.arctan2(v[1], v[0]) - theta)
    best = int(np.argmin(mismatch))
    return pts[:, best]


def gen_only_objective(g, demand, others, k, tau, centroid, gen_error=None):
    """Day-ahead cost plus proximal term of a generate-only user, evaluated on
    a stack of generation schedules ``g`` with shape ``(..., H)``."""
    l = demand - g
    own = 0.0 if gen_error is None else gen_error
    cost = np.sum(k * (others + l) * (l + own), axis=-1)
    return cost + 0.5 * tau * np.sum((l - centroid) ** 2, axis=-1)


def best_response_oracle(demand, others, k, gen_cap_hour, gen_cap_day, tau, centroid,
                         step: float = 1e-3):
    """Grid search over generation ``0 <= g(h) <= gen_cap_hour``,
    ``sum g <= gen_cap_day`` (errors zero). Returns ``(g, objective)``."""
    demand = np.asarray(demand, dtype=float)
    check_size(1, demand.size)
    axis = np.arange(0.0, gen_cap_hour + step / 2, step)
    grids = np.meshgrid(*([axis] * demand.size), indexing="ij")
    g = np.stack([x.ravel() for x in grids], axis=-1)
    g = g[g.sum(axis=1) <= gen_cap_day + 1e-12]
    obj = gen_only_objective(g, demand, np.asarray(others, float), np.asarray(k, float), tau,
                             np.asarray(centroid, float))
    i = int(np.argmin(obj))
    return g[i], float(obj[i])


def day_ahead_jacobian(k, users: int) -> np.ndarray:
    """Dense game Jacobian: ``2 K`` on the own-user diagonal blocks, ``K`` off it."""
    k = np.asarray(k, dtype=float)
    H = k.size
    J = np.zeros((users * H, users * H))
    for n in range(users):
        for m in range(users):
            J[n * H:(n + 1) * H, m * H:(m + 1) * H] = np.diag((2.0 if n == m else 1.0) * k)
    return J


def inner_hessian(k_h: float, beta_m: float, lam: float, users: int) -> np.ndarray:
    return (k_h + 2 * beta_m - 2 * lam) * np.eye(users) + k_h * np.ones((users, users))


@dataclass
class OracleRow:
    check: str
    instance: str
    discrepancy: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.discrepancy <= self.tolerance)


@dataclass
class OracleReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def max_discrepancy(self, check: str) -> float:
        return max((r.discrepancy for r in self.rows if r.check == check), default=0.0)

    def table(self) -> str:
        lines = [f"{'check':<14} {'instance':<34} {'discrepancy':>12} {'tol':>8}  ok"]
        for r in self.rows:
            lines.append(f"{r.check:<14} {r.instance:<34} {r.discrepancy:12.3e} "
                         f"{r.tolerance:8.0e}  {'yes' if r.passed else 'NO'}")
        return "\n".join(lines)


# Micro-instances: (a, alpha) for the slot-error game.
SLOT_INSTANCES = [((5.0, 4.0), 0.25), ((2.0, 1.0), 1.0), ((0.5, 0.1), 4.0)]

# (demand, others, k, gen_cap_hour, gen_cap_day, tau)
BEST_RESPONSE_INSTANCES = [
    ((2.0, 2.0), (2.0, 2.0), (1.0, 1.0), 1.0, 1.0, 0.01),
    ((1.0, 3.0), (2.0, 0.5), (1.0, 1.5), 1.0, 1.2, 0.1),
    ((1.5,), (1.0,), (2.0,), 0.8, 0.8, 0.0),
]

# (k per slot, beta_m, lambda per slot, users)
SPECTRUM_INSTANCES = [
    ((1.0, 1.5), 0.001, (7.501, 2.0), 3),
    ((0.3,), 0.0, (0.9,), 2),
    ((2.0, 0.5), 0.01, (2.01, 3.0), 3),
]


def _fmt(values) -> str:
    return "(" + ", ".join(f"{float(v):g}" for v in values) + ")"


def _slot_rows(instances):
    rows = []
    for a, alpha in instances:
        label = f"a={_fmt(a)} alpha={alpha:g}"
        try:
            ref = slot_error_oracle(a, alpha)
            got = solve_slot_errors(SlotErrorProblem(a, alpha), 1.0, 0.0).delta
            gap = float(np.abs(got - ref).max())
        except DsmError:
            gap = np.inf
        rows.append(OracleRow("slot-error", label, gap, SLOT_ERROR_TOL))
    return rows


def _best_response_rows(instances):
    rows = []
    for demand, others, k, cap_h, cap_d, tau in instances:
        check_size(2, len(demand))
        H = len(demand)
        demand, others, k = (np.asarray(v, dtype=float) for v in (demand, others, k))
        _, ref = best_response_oracle(demand, others, k, cap_h, cap_d, tau, demand)
        user = UserModel(user_id=0, kind=UserKind.GEN_ONLY, base_demand=demand,
                         gen_cap_hour=cap_h, gen_cap_day=cap_d)
        params = GridCostParams(k=k, alpha=np.ones(H))
        loads = np.vstack([demand, others])
        got = best_response(0, loads, np.zeros_like(loads), demand, tau, params, user).objective
        rows.append(OracleRow("best-response", f"e={_fmt(demand)} tau={tau:g}",
                              abs(got - ref), BEST_RESPONSE_TOL))
    return rows


def _spectrum_rows(instances):
    rows = []
    for k, beta_m, lam, users in instances:
        check_size(users, len(k))
        k, lam = np.asarray(k, dtype=float), np.asarray(lam, dtype=float)
        H = k.size
        passive = tuple(UserModel(user_id=n, kind=UserKind.PASSIVE, base_demand=np.ones(H))
                        for n in range(users))
        scenario = Scenario(passive, GridCostParams(k=k, alpha=np.ones(H), beta_m=beta_m),
                            TimeGrid(H))
        report = monotonicity_diagnostics(scenario, SimpleNamespace(lambdas=lam))
        dense_min = np.linalg.eigvalsh(day_ahead_jacobian(k, users)).min()
        dense_max = np.array([np.linalg.eigvalsh(inner_hessian(k[h], beta_m, lam[h], users)).max()
                              for h in range(H)])
        gap = max(abs(report.day_ahead_min_eigenvalue - dense_min),
                  float(np.abs(report.inner_max_eigenvalue - dense_max).max()))
        rows.append(OracleRow("spectrum", f"k={_fmt(k)} D={users}", gap, SPECTRUM_TOL))
    return rows


def run_oracle_check(slot_instances=None, best_response_instances=None,
                     spectrum_instances=None) -> OracleReport:
    """Compare the production solvers with the brute-force references on the
    bundled (or given) micro-instances."""
    slot_instances = SLOT_INSTANCES if slot_instances is None else slot_instances
    for a, _ in slot_instances:
        check_size(len(a), 1)
    report = OracleReport()
    report.rows += _slot_rows(slot_instances)
    report.rows += _best_response_rows(BEST_RESPONSE_INSTANCES if best_response_instances is None
                                       else best_response_instances)
    report.rows += _spectrum_rows(SPECTRUM_INSTANCES if spectrum_instances is None
                                  else spectrum_instances)
    return report
