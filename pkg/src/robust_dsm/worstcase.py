"""Worst-case error terms for fixed loads.

For each slot the users' errors ``delta(h)`` form the equilibrium of the
inner maximization game, found as the fixed point of the normalized map::

    T(delta) = P_X( sqrt(alpha) * (a + A delta) / ||a + A delta|| )

with ``a_n = L(h) + l_n(h)``, ``A = 11' - I`` and ``P_X`` the closed-form
shift onto the halfspace ``X = {x >= 0 : 1'x + 1'a/(D-1) - sqrt(alpha D) >= 0}``.
The shared dual price of the error ball then follows in closed form.

Slots are independent; :func:`solve_errors` iterates all of them at once on
``(users, slots)`` arrays and stops on the summed step norm
``sum_h ||delta^{k+1}(h) - delta^k(h)||``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateDirection, DimensionMismatch, MaxIterationsExceeded
from .model import user_sum

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class SlotErrorProblem:
    """Inner game data of one slot: ``a_n = L(h) + l_n(h)`` and the ball
    radius-squared ``alpha``."""

    a: np.ndarray
    alpha: float
    h: int | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise DimensionMismatch("a must be a nonempty vector")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def from_loads(cls, loads: np.ndarray, h: int, alpha_h: float) -> "SlotErrorProblem":
        col = np.asarray(loads, dtype=float)[:, h]
        return cls(a=user_sum(col[:, None])[0] + col, alpha=alpha_h, h=h)

    @property
    def user_count(self) -> int:
        return self.a.size

    @property
    def offset(self) -> float:
        """``1'a/(D-1) - sqrt(alpha D)``: X is ``1'x + offset >= 0`` on ``x >= 0``."""
        D = self.user_count
        if D < 2:
            raise ValueError("the halfspace X is only defined for two or more users")
        return float(self.a.sum() / (D - 1) - np.sqrt(self.alpha * D))


def _couple(delta):
    """``A @ delta`` for ``A = 11' - I`` along the user axis."""
    return delta.sum(axis=0) - delta


def halfspace_contains(x, prob: SlotErrorProblem, tol: float = 1e-12) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != prob.a.shape:
        raise DimensionMismatch(f"x has shape {x.shape}, expected {prob.a.shape}")
    return bool(np.all(x >= -tol) and x.sum() + prob.offset >= -tol)


def _shift_onto_hyperplane(x, a, alpha):
    # x + (sqrt(alpha) - (A^{-1} a + x)' 1/||1||) 1/||1||, with A^{-1} = 11'/(D-1) - I
    D = x.shape[0]
    root_d = np.sqrt(D)
    inv_a = a.sum(axis=0) / (D - 1) - a
    step = np.sqrt(alpha) - (inv_a + x).sum(axis=0) / root_d
    return x + step / root_d


def _outside(x, a, alpha):
    D = x.shape[0]
    offset = a.sum(axis=0) / (D - 1) - np.sqrt(alpha * D)
    return np.any(x < 0, axis=0) | (x.sum(axis=0) + offset < 0)


def project_halfspace(x, prob: SlotErrorProblem) -> np.ndarray:
    """Closed-form projection used by the fixed-point map.

    Points of X are returned unchanged; any other point is shifted along
    ``1`` onto the bounding hyperplane. The nonnegativity part of X is not
    enforced here (see :func:`solve_errors` for the post-hoc clamp).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != prob.a.shape:
        raise DimensionMismatch(f"x has shape {x.shape}, expected {prob.a.shape}")
    if halfspace_contains(x, prob):
        return x.copy()
    return _shift_onto_hyperplane(x, prob.a, prob.alpha)


def _normalized(delta, a, alpha):
    v = a + _couple(delta)
    norm = np.sqrt(np.sum(v * v, axis=0))
    if np.any(norm < DEGENERATE_NORM):
        raise DegenerateDirection(f"||a + A delta|| = {norm.min():.3e} below {DEGENERATE_NORM:g}")
    return np.sqrt(alpha) * v / norm, v, norm


def _apply_map(delta, a, alpha):
    y = _normalized(delta, a, alpha)[0]
    out = _outside(y, a, alpha)
    if np.any(out):
        y = np.where(out, _shift_onto_hyperplane(y, a, alpha), y)
    return y


def fixed_point_map(delta, prob: SlotErrorProblem, *, unprojected: bool = False) -> np.ndarray:
    """One application of the worst-case map to ``delta``.

    ``delta`` is one error vector of shape ``(D,)`` or a batch of them as the
    columns of a ``(D, m)`` array. With ``unprojected=True`` the normalized
    vector (norm ``sqrt(alpha)``) is returned before the halfspace projection.
    """
    delta = np.asarray(delta, dtype=float)
    if delta.ndim not in (1, 2) or delta.shape[0] != prob.user_count:
        raise DimensionMismatch(f"delta has shape {delta.shape}, expected ({prob.user_count},) "
                                f"or ({prob.user_count}, m)")
    if prob.user_count < 2:
        raise ValueError("the fixed-point map needs at least two users")
    cols = delta.reshape(prob.user_count, -1)
    a = np.broadcast_to(prob.a[:, None], cols.shape)
    if unprojected:
        out = _normalized(cols, a, prob.alpha)[0]
    else:
        out = _apply_map(cols, a, prob.alpha)
    return out.reshape(delta.shape)


def stationarity_residual(delta, prob: SlotErrorProblem) -> float:
    """Largest deviation of ``delta`` from the closed-form stationarity
    equations ``delta_n = sqrt(alpha) (a + A delta)_n / ||a + A delta||``."""
    delta = np.asarray(delta, dtype=float)
    target = _normalized(delta, prob.a, prob.alpha)[0]
    return float(np.max(np.abs(delta - target)))


def lambda_from_delta(delta, prob: SlotErrorProblem, k_h: float, beta_m: float) -> float:
    """Shared dual price of the slot's error ball (positive root)."""
    v = prob.a + _couple(np.asarray(delta, dtype=float))
    return float(k_h + beta_m + k_h * np.linalg.norm(v) / (2.0 * np.sqrt(prob.alpha)))


def kkt_residual(delta, prob: SlotErrorProblem, k_h: float, beta_m: float, lam: float) -> float:
    """Residual of the per-user first-order conditions
    ``K (a + A delta)_n + 2 (K + beta_m - lam) delta_n = 0``."""
    delta = np.asarray(delta, dtype=float)
    v = prob.a + _couple(delta)
    return float(np.max(np.abs(k_h * v + 2.0 * (k_h + beta_m - lam) * delta)))


def inner_payoff(n: int, delta, prob: SlotErrorProblem, l_n: float, L: float,
                 k_h: float, beta_m: float, lam: float) -> float:
    """Slot term of user ``n``'s penalized payoff in the inner game."""
    delta = np.asarray(delta, dtype=float)
    return float((beta_m - lam) * delta[n] ** 2 + k_h * (L + delta.sum()) * (l_n + delta[n]))


def inner_hessian_eigenvalues(k_h: float, beta_m: float, lam: float, user_count: int):
    """The two distinct eigenvalues of ``(K + 2 beta - 2 lam) I + K 11'``."""
    base = k_h + 2.0 * beta_m - 2.0 * lam
    return base + k_h * user_count, base


def strong_monotonicity_threshold(k_h: float, beta_m: float, user_count: int) -> float:
    return 0.5 * k_h * (user_count + 1) + beta_m


def _project_simplex(y, s):
    """Euclidean projection of ``y`` onto ``{x >= 0, sum(x) = s}``."""
    if s <= 0:
        return np.zeros_like(y)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - s
    idx = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


def min_coupled_norm(prob: SlotErrorProblem) -> float:
    """``gamma = min_{x in X} ||a + A x||``.

    On the slice ``1'x = s`` the objective is the distance from ``a + s 1``
    to the scaled simplex, so the convex problem reduces to a bounded
    one-dimensional minimization over ``s``.
    """
    a = prob.a
    D = prob.user_count
    sum_a = float(a.sum())
    s_min = max(0.0, -prob.offset)

    def dist(s):
        y = a + s
        return float(np.linalg.norm(y - _project_simplex(y, s)))

    g0 = dist(s_min)
    # ||r|| >= |1'r|/sqrt(D) with 1'r = 1'a + (D-1)s bounds the useful range of s
    s_max = (g0 * np.sqrt(D) - sum_a) / (D - 1)
    if s_max <= s_min:
        return g0
    res = minimize_scalar(dist, bounds=(s_min, s_max), method="bounded",
                          options={"xatol": 1e-12 * max(1.0, s_max)})
    return float(min(g0, res.fun, dist(s_max)))


def contraction_constant(prob: SlotErrorProblem) -> float:
    """Lipschitz bound ``q = sqrt(alpha) (D - 1) / gamma`` of the map on X.

    ``q < 1`` certifies a contraction; larger values are returned as-is.
    """
    gamma = min_coupled_norm(prob)
    if gamma <= 0:
        return float("inf")
    return float(np.sqrt(prob.alpha) * (prob.user_count - 1) / gamma)


@dataclass
class SlotErrorSolution:
    delta: np.ndarray
    lam: float
    residual: float
    iterations: int
    clamped: bool = False


@dataclass
class ErrorSolve:
    """Worst-case errors for all slots."""

    delta: np.ndarray
    lambdas: np.ndarray
    residual: float
    iterations: int
    residual_trace: list = field(default_factory=list)
    clamped: bool = False


def initial_errors(user_count: int, alpha) -> np.ndarray:
    """Symmetric start ``sqrt(alpha(h)/D)`` for every user."""
    alpha = np.asarray(alpha, dtype=float)
    return np.tile(np.sqrt(alpha / user_count), (user_count, 1))


def _single_user(a, alpha):
    if np.any(a == 0):
        raise DegenerateDirection("single user with zero load: error direction undefined")
    return np.sqrt(alpha) * np.sign(a)


def solve_errors(loads: np.ndarray, alpha, k, beta_m: float, *, tol: float = 1e-8,
                 max_iter: int = 200, delta0: np.ndarray | None = None) -> ErrorSolve:
    """Fixed-point iteration on every slot until
    ``sum_h ||delta^{k+1}(h) - delta^k(h)|| <= tol``."""
    loads = np.asarray(loads, dtype=float)
    return _iterate(user_sum(loads) + loads, alpha, k, beta_m, tol, max_iter, delta0)


def _iterate(a, alpha, k, beta_m, tol, max_iter, delta0):
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), a.shape[1:])
    k = np.broadcast_to(np.asarray(k, dtype=float), a.shape[1:])
    D = a.shape[0]
    if D == 1:
        delta = _single_user(a, alpha)
        lam = k + beta_m + k * np.abs(a[0]) / (2.0 * np.sqrt(alpha))
        return ErrorSolve(delta, lam, 0.0, 0, [0.0])
    if delta0 is None:
        delta = initial_errors(D, alpha)
    else:
        delta = np.array(delta0, dtype=float)
        if delta.shape != a.shape:
            raise DimensionMismatch(f"delta0 shape {delta.shape} != problem shape {a.shape}")
        out = _outside(delta, a, alpha)
        if np.any(out):
            delta = np.where(out, _shift_onto_hyperplane(delta, a, alpha), delta)
    trace = []
    for it in range(1, max_iter + 1):
        new = _apply_map(delta, a, alpha)
        step = float(np.sum(np.sqrt(np.sum((new - delta) ** 2, axis=0))))
        delta = new
        trace.append(step)
        if step <= tol:
            break
    else:
        raise MaxIterationsExceeded(
            f"worst-case iteration did not converge in {max_iter} iterations "
            f"(last step {step:.3e})", residual=step, iterations=max_iter)
    clamped = bool(np.any(delta < 0))
    if clamped:
        log.warning("worst-case errors had negative components (min %.3e); clamped to zero",
                    delta.min())
        delta = np.maximum(delta, 0.0)
    v = a + _couple(delta)
    lam = k + beta_m + k * np.sqrt(np.sum(v * v, axis=0)) / (2.0 * np.sqrt(alpha))
    return ErrorSolve(delta, lam, step, it, trace, clamped)


def solve_slot_errors(prob: SlotErrorProblem, k_h: float, beta_m: float, *, tol: float = 1e-8,
                      max_iter: int = 200, delta0=None) -> SlotErrorSolution:
    """Single-slot version of :func:`solve_errors`, started from the symmetric
    point unless ``delta0`` is given."""
    start = None if delta0 is None else np.asarray(delta0, dtype=float)[:, None]
    sol = _iterate(prob.a[:, None], prob.alpha, k_h, beta_m, tol, max_iter, start)
    return SlotErrorSolution(sol.delta[:, 0], float(sol.lambdas[0]), sol.residual,
                             sol.iterations, sol.clamped)
