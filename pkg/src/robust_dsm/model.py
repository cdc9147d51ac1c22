"""Grid cost primitives: aggregate load, grid cost and per-user day-ahead cost.

Energies are in kWh and money in GBP, stored as float64. Load and error
profiles are handled as ``(users, slots)`` arrays; :class:`LoadProfile` and
:class:`ErrorProfile` exist for callers that prefer named records. Slots are
0-based in the API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, EmptyUserSet, NonPositiveAggregateLoad


@dataclass(frozen=True)
class TimeGrid:
    slot_count: int = 24

    def __post_init__(self):
        if int(self.slot_count) != self.slot_count or self.slot_count < 1:
            raise ValueError(f"slot_count must be a positive integer, got {self.slot_count!r}")

    @property
    def slot_indices(self) -> range:
        """1-based slot labels, as used in output files."""
        return range(1, self.slot_count + 1)

    @property
    def night_slots(self) -> np.ndarray:
        """0-based indices of the low-price slots (the first third of the day)."""
        return np.arange(self.slot_count // 3)


def _frozen_array(values, name, ndim=1) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridCostParams:
    """Per-slot cost coefficients ``k``, error budgets ``alpha`` and the
    local-deviation penalty weight ``beta_m``."""

    k: np.ndarray
    alpha: np.ndarray
    beta_m: float = 0.0

    def __post_init__(self):
        k = _frozen_array(self.k, "k")
        alpha = _frozen_array(self.alpha, "alpha")
        if k.shape != alpha.shape:
            raise DimensionMismatch(f"k has {k.size} slots but alpha has {alpha.size}")
        if np.any(k <= 0):
            raise ValueError("cost coefficients k must be strictly positive")
        if np.any(alpha <= 0):
            raise ValueError("error budgets alpha must be strictly positive")
        if not self.beta_m >= 0:
            raise ValueError(f"beta_m must be nonnegative, got {self.beta_m!r}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta_m", float(self.beta_m))

    @property
    def slot_count(self) -> int:
        return self.k.size

    def replace(self, **changes) -> "GridCostParams":
        kw = {"k": self.k, "alpha": self.alpha, "beta_m": self.beta_m}
        kw.update(changes)
        return GridCostParams(**kw)


@dataclass(frozen=True)
class LoadProfile:
    user_id: int
    l: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "l", _frozen_array(self.l, "l"))


@dataclass(frozen=True)
class ErrorProfile:
    user_id: int
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", _frozen_array(self.delta, "delta"))


@dataclass(frozen=True)
class AggregateState:
    total_load: np.ndarray
    total_error: np.ndarray = field(default=None)


Profiles = Union[np.ndarray, Sequence[LoadProfile], Sequence[ErrorProfile]]


def as_matrix(profiles: Profiles, slot_count: int | None = None) -> np.ndarray:
    """Stack profiles into a ``(users, slots)`` float array."""
    if isinstance(profiles, np.ndarray):
        mat = np.asarray(profiles, dtype=float)
    else:
        rows = []
        for p in profiles:
            if isinstance(p, LoadProfile):
                rows.append(p.l)
            elif isinstance(p, ErrorProfile):
                rows.append(p.delta)
            else:
                rows.append(np.asarray(p, dtype=float))
        if not rows:
            raise EmptyUserSet("no user profiles given")
        lengths = {r.size for r in rows}
        if len(lengths) != 1:
            raise DimensionMismatch(f"profiles have differing lengths {sorted(lengths)}")
        mat = np.vstack(rows)
    if mat.ndim != 2:
        raise DimensionMismatch(f"expected a (users, slots) array, got shape {mat.shape}")
    if mat.shape[0] == 0:
        raise EmptyUserSet("no user profiles given")
    if slot_count is not None and mat.shape[1] != slot_count:
        raise DimensionMismatch(f"profiles have {mat.shape[1]} slots, expected {slot_count}")
    return mat


def user_sum(mat: np.ndarray) -> np.ndarray:
    """Sum rows in user-index order.

    An explicit left fold keeps the result bit-stable regardless of how numpy
    would otherwise block the reduction.
    """
    total = mat[0].copy()
    for row in mat[1:]:
        total += row
    return total


def aggregate_load(profiles: Profiles, errors: Profiles | None = None) -> AggregateState:
    """Per-slot aggregate load ``L(h) = sum_n l_n(h)``.

    Raises :class:`NonPositiveAggregateLoad` for the first slot whose
    aggregate is not strictly positive.
    """
    loads = as_matrix(profiles)
    total = user_sum(loads)
    bad = np.flatnonzero(total <= 0)
    if bad.size:
        raise NonPositiveAggregateLoad(int(bad[0]), float(total[bad[0]]))
    total_error = None
    if errors is not None:
        err = as_matrix(errors, loads.shape[1])
        if err.shape != loads.shape:
            raise DimensionMismatch(f"errors shape {err.shape} != loads shape {loads.shape}")
        total_error = user_sum(err)
    return AggregateState(total_load=total, total_error=total_error)


def grid_cost(h: int, L_h: float, delta_sum_h: float, params: GridCostParams) -> float:
    """Production cost of slot ``h``: ``K_h (L(h) + sum_n delta_n(h))**2``."""
    return float(params.k[h] * (L_h + delta_sum_h) ** 2)


def total_grid_cost(loads: Profiles, errors: Profiles | None, params: GridCostParams) -> float:
    loads = as_matrix(loads, params.slot_count)
    shifted = user_sum(loads)
    if errors is not None:
        shifted = shifted + user_sum(as_matrix(errors, params.slot_count))
    return float(np.sum(params.k * shifted**2))


def user_costs(loads: Profiles, errors: Profiles | None, params: GridCostParams) -> np.ndarray:
    """Day-ahead cost of every user (proportional split of the grid cost plus
    ``beta_m * ||delta_n||**2``)."""
    loads = as_matrix(loads, params.slot_count)
    if errors is None:
        errors = np.zeros_like(loads)
    errors = as_matrix(errors, params.slot_count)
    if errors.shape != loads.shape:
        raise DimensionMismatch(f"errors shape {errors.shape} != loads shape {loads.shape}")
    price = params.k * (user_sum(loads) + user_sum(errors))
    return (loads + errors) @ price + params.beta_m * np.sum(errors**2, axis=1)


def user_day_ahead_cost(n: int, loads: Profiles, errors: Profiles | None,
                        params: GridCostParams) -> float:
    """Cumulative day-ahead cost ``f_n`` of user ``n``."""
    loads = as_matrix(loads, params.slot_count)
    if errors is None:
        errors = np.zeros_like(loads)
    errors = as_matrix(errors, params.slot_count)
    if errors.shape != loads.shape:
        raise DimensionMismatch(f"errors shape {errors.shape} != loads shape {loads.shape}")
    price = params.k * (user_sum(loads) + user_sum(errors))
    return float(price @ (loads[n] + errors[n]) + params.beta_m * errors[n] @ errors[n])
