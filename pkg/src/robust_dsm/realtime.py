"""Real-time settlement: the robust bill with its dead-band penalty, the
non-robust comparison bill, and a Monte Carlo harness drawing Gaussian
consumption deviations around the day-ahead schedules.

Slots are 0-based; the night slots carrying the low under-consumption weight
are the first third of the day.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .model import GridCostParams, user_sum


@dataclass(frozen=True)
class PenaltyParams:
    """Per-slot penalty weights: ``nu`` charges under-consumption, ``upsilon``
    over-consumption; both sum to ``kappa`` slot by slot."""

    nu: np.ndarray
    upsilon: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        arrs = [np.array(v, dtype=float) for v in (self.nu, self.upsilon, self.kappa)]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise DimensionMismatch("nu, upsilon and kappa must be per-slot vectors of equal size")
        if np.any(arrs[0] < 0) or np.any(arrs[1] < 0) or np.any(arrs[2] <= 0):
            raise ValueError("penalty weights must be nonnegative and kappa positive")
        if not np.allclose(arrs[0] + arrs[1], arrs[2], rtol=1e-12, atol=0.0):
            raise ValueError("nu + upsilon must equal kappa in every slot")
        for name, a in zip(("nu", "upsilon", "kappa"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_budget(cls, alpha, user_count: int, night_share: float = 0.2,
                    day_share: float = 0.8) -> "PenaltyParams":
        """``kappa = sqrt(D / alpha(h))``; ``nu`` is ``night_share * kappa`` on
        the first third of the day and ``day_share * kappa`` after it."""
        alpha = np.asarray(alpha, dtype=float)
        kappa = np.sqrt(user_count / alpha)
        share = np.full(alpha.size, day_share)
        share[: alpha.size // 3] = night_share
        nu = share * kappa
        return cls(nu, kappa - nu, kappa)


def penalty_psi(l_n, delta_n, l_rt_n, nu, upsilon):
    """Dead-band penalty: zero on ``[l - delta, l + delta]``, linear outside
    with slope ``nu`` below and ``upsilon`` above. Broadcasts."""
    below = np.maximum(np.subtract(l_n, delta_n) - l_rt_n, 0.0)
    above = np.maximum(np.subtract(l_rt_n, l_n) - delta_n, 0.0)
    return np.multiply(nu, below) + np.multiply(upsilon, above)


def _check(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatch(f"profile shapes disagree: {sorted(shapes)}")


def robust_rt_costs(loads, errors, rt_loads, params: GridCostParams,
                    p: PenaltyParams) -> np.ndarray:
    """Real-time bill of every user under the robust price ``K (L + sum delta)``
    with the dead-band penalty, plus ``beta_m ||delta_n||**2``."""
    loads, errors, rt_loads = (np.asarray(a, dtype=float) for a in (loads, errors, rt_loads))
    _check(loads, errors, rt_loads)
    price = params.k * (user_sum(loads) + user_sum(errors))
    psi = penalty_psi(loads, errors, rt_loads, p.nu, p.upsilon)
    return (rt_loads + psi) @ price + params.beta_m * np.sum(errors**2, axis=1)


def robust_rt_cost(n: int, loads, errors, rt_loads, params: GridCostParams,
                   p: PenaltyParams) -> float:
    return float(robust_rt_costs(loads, errors, rt_loads, params, p)[n])


def nonrobust_rt_costs(loads, rt_loads, worst_aggregate, params: GridCostParams,
                       p: PenaltyParams) -> np.ndarray:
    """Real-time bill without a dead band: any deviation from the day-ahead
    load is penalized, at the price ``K * worst_aggregate``."""
    loads, rt_loads = np.asarray(loads, dtype=float), np.asarray(rt_loads, dtype=float)
    _check(loads, rt_loads)
    price = params.k * np.asarray(worst_aggregate, dtype=float)
    psi = penalty_psi(loads, 0.0, rt_loads, p.nu, p.upsilon)
    return (rt_loads + psi) @ price


def nonrobust_rt_cost(n: int, loads, rt_loads, worst_aggregate, params: GridCostParams,
                      p: PenaltyParams) -> float:
    return float(nonrobust_rt_costs(loads, rt_loads, worst_aggregate, params, p)[n])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_rt_deviations(loads, alpha, seed) -> np.ndarray:
    """``loads + eps`` with ``eps_n(h) ~ Normal(0, alpha(h) / D)`` i.i.d."""
    loads = np.asarray(loads, dtype=float)
    std = np.sqrt(np.asarray(alpha, dtype=float) / loads.shape[0])
    return loads + _rng(seed).standard_normal(loads.shape) * std


@dataclass
class RealTimeOutcome:
    """Monte Carlo comparison of the two settlement models.

    ``robust_costs``/``nonrobust_costs`` are ``(runs, users)``;
    ``mean_relative_gain`` and ``gain_stderr`` are in percent, computed on the
    per-run population totals.
    """

    rt_loads: np.ndarray
    robust_costs: np.ndarray
    nonrobust_costs: np.ndarray
    mean_relative_gain: float
    gain_stderr: float

    @property
    def runs(self) -> int:
        return self.robust_costs.shape[0]

    @property
    def mean_robust(self) -> float:
        return float(self.robust_costs.sum(axis=1).mean())

    @property
    def mean_nonrobust(self) -> float:
        return float(self.nonrobust_costs.sum(axis=1).mean())

    @property
    def run_gains(self) -> np.ndarray:
        r, nr = self.robust_costs.sum(axis=1), self.nonrobust_costs.sum(axis=1)
        return 100.0 * (nr - r) / nr

    def records(self):
        """``(run_id, user_id, robust_cost, nonrobust_cost)`` rows."""
        for r in range(self.runs):
            for n in range(self.robust_costs.shape[1]):
                yield r, n, float(self.robust_costs[r, n]), float(self.nonrobust_costs[r, n])


def monte_carlo_compare(robust_result, naive_result, params: GridCostParams, runs: int = 100,
                        seed=0, *, penalty: PenaltyParams | None = None,
                        beta_m: float | None = 0.0, noise_scale: float = 1.0) -> RealTimeOutcome:
    """Settle both equilibria against ``runs`` sampled real-time profiles.

    Run ``r`` draws one standard-normal matrix from the ``r``-th child of
    ``SeedSequence(seed)`` and applies it to both models (common random
    numbers). ``beta_m=0`` drops the local-deviation charge for a like-for-like
    comparison; ``None`` keeps ``params.beta_m``. ``noise_scale`` multiplies
    the sampling deviation only (0 gives the deterministic comparison at the
    day-ahead loads).
    """
    if runs < 1:
        raise ValueError("runs must be positive")
    D, H = robust_result.loads.shape
    if naive_result.loads.shape != (D, H):
        raise DimensionMismatch("robust and naive results have different shapes")
    if penalty is None:
        penalty = PenaltyParams.from_budget(params.alpha, D)
    if beta_m is not None:
        params = params.replace(beta_m=beta_m)
    std = noise_scale * np.sqrt(params.alpha / D)
    worst = naive_result.robust_aggregate
    children = np.random.SeedSequence(seed).spawn(runs)
    rt = np.empty((runs, D, H))
    rob = np.empty((runs, D))
    nonrob = np.empty((runs, D))
    for r, child in enumerate(children):
        eps = np.random.default_rng(child).standard_normal((D, H)) * std
        rt[r] = robust_result.loads + eps
        rob[r] = robust_rt_costs(robust_result.loads, robust_result.errors, rt[r], params, penalty)
        nonrob[r] = nonrobust_rt_costs(naive_result.loads, naive_result.loads + eps, worst,
                                       params, penalty)
    out = RealTimeOutcome(rt, rob, nonrob, 0.0, 0.0)
    gains = out.run_gains
    out.mean_relative_gain = float(100.0 * (out.mean_nonrobust - out.mean_robust)
                                   / out.mean_nonrobust)
    out.gain_stderr = float(gains.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
    return out
