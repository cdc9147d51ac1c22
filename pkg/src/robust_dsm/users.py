"""User devices, the feasible load set they induce, and the per-user
proximal best response.

An active user's load is ``l_n = e_n - g + s_plus - s_minus`` where ``g`` is
dispatchable generation and ``s_plus``/``s_minus`` are battery charge and
discharge. The battery follows the lossy linear model::

    q(h) = a_leak * q(h-1) + eff_plus * s_plus(h) - eff_minus * s_minus(h)

with ``0 <= q(h) <= c_n`` and the terminal condition ``q(|H|) = q0 + eps_n``.
Device variables are stacked as ``x = [g, s_plus, s_minus]`` (absent devices
are dropped), so the feasible set is a polytope in ``x`` mapped linearly
onto load space.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import quadprog

from .errors import DimensionMismatch, InfeasibleUserModel, MaxIterationsExceeded
from .model import GridCostParams, user_sum

FEAS_TOL = 1e-9


class UserKind(str, enum.Enum):
    PASSIVE = "Passive"
    GEN_ONLY = "GenOnly"
    STORE_ONLY = "StoreOnly"
    GEN_STORE = "GenStore"

    @property
    def generates(self) -> bool:
        return self in (UserKind.GEN_ONLY, UserKind.GEN_STORE)

    @property
    def stores(self) -> bool:
        return self in (UserKind.STORE_ONLY, UserKind.GEN_STORE)


@dataclass(frozen=True)
class UserModel:
    user_id: int
    kind: UserKind
    base_demand: np.ndarray
    gen_cap_hour: float = 0.0
    gen_cap_day: float = 0.0
    storage_capacity: float = 0.0
    charge_rate_max: float = 0.0
    leak_rate: float = 1.0
    charge_eff: float = 1.0
    discharge_eff: float = 1.0
    initial_charge: float = 0.0
    end_of_day_delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", UserKind(self.kind))
        e = np.array(self.base_demand, dtype=float)
        if e.ndim != 1 or e.size == 0:
            raise DimensionMismatch("base_demand must be a nonempty vector")
        if np.any(e < 0):
            raise ValueError(f"user {self.user_id}: base demand must be nonnegative")
        e.setflags(write=False)
        object.__setattr__(self, "base_demand", e)
        H = e.size
        if self.kind.generates:
            if self.gen_cap_hour < 0 or self.gen_cap_day < 0:
                raise ValueError(f"user {self.user_id}: generation caps must be nonnegative")
            if self.gen_cap_day > H * self.gen_cap_hour + 1e-12:
                raise ValueError(f"user {self.user_id}: gen_cap_day exceeds |H| * gen_cap_hour")
        if self.kind.stores:
            if self.storage_capacity < 0 or self.charge_rate_max < 0:
                raise ValueError(f"user {self.user_id}: storage sizes must be nonnegative")
            if not 0 < self.leak_rate <= 1:
                raise ValueError(f"user {self.user_id}: leak_rate must lie in (0, 1]")
            if not 0 < self.charge_eff <= 1:
                raise ValueError(f"user {self.user_id}: charge_eff must lie in (0, 1]")
            if not self.discharge_eff >= 1:
                raise ValueError(f"user {self.user_id}: discharge_eff must be >= 1")
            if not 0 <= self.initial_charge <= self.storage_capacity:
                raise ValueError(f"user {self.user_id}: initial_charge outside [0, capacity]")

    @property
    def slot_count(self) -> int:
        return self.base_demand.size

    @property
    def is_active(self) -> bool:
        return self.kind is not UserKind.PASSIVE

    def zero_schedule(self) -> "DeviceSchedule":
        z = np.zeros(self.slot_count)
        return DeviceSchedule(z, z.copy(), z.copy())

    @cached_property
    def polytope(self) -> "DevicePolytope":
        return DevicePolytope.from_model(self)


@dataclass(frozen=True)
class DeviceSchedule:
    g: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray

    def load(self, m: UserModel) -> np.ndarray:
        return m.base_demand - self.g + self.s_plus - self.s_minus

    def soc(self, m: UserModel) -> np.ndarray:
        """Battery state of charge at the end of each slot."""
        q = np.empty(m.slot_count)
        prev = m.initial_charge
        for h in range(m.slot_count):
            prev = m.leak_rate * prev + m.charge_eff * self.s_plus[h] - m.discharge_eff * self.s_minus[h]
            q[h] = prev
        return q


class Violation(NamedTuple):
    constraint: str
    slot: int | None
    amount: float


def feasible_region_check(m: UserModel, d: DeviceSchedule, tol: float = FEAS_TOL):
    """Check a device schedule against every constraint of ``m``.

    Returns ``(ok, violations)``; each violation names the constraint, the
    0-based slot (``None`` for daily constraints) and the excess.
    """
    H = m.slot_count
    for name in ("g", "s_plus", "s_minus"):
        if np.shape(getattr(d, name)) != (H,):
            raise DimensionMismatch(f"schedule field {name} must have {H} slots")
    out: list[Violation] = []

    def bound(name, values, lo, hi):
        for h, v in enumerate(values):
            if v < lo - tol:
                out.append(Violation(f"{name}_lower", h, lo - v))
            elif v > hi + tol:
                out.append(Violation(name, h, v - hi))

    if m.kind.generates:
        bound("gen_cap_hour", d.g, 0.0, m.gen_cap_hour)
        total = float(np.sum(d.g))
        if total > m.gen_cap_day + tol:
            out.append(Violation("gen_cap_day", None, total - m.gen_cap_day))
    elif np.any(np.abs(d.g) > tol):
        out.append(Violation("no_generator", None, float(np.max(np.abs(d.g)))))

    if m.kind.stores:
        bound("charge_rate", d.s_plus, 0.0, m.charge_rate_max)
        bound("discharge_rate", d.s_minus, 0.0, m.charge_rate_max)
        q = d.soc(m)
        for h, v in enumerate(q):
            if v < -tol:
                out.append(Violation("soc_lower", h, -v))
            elif v > m.storage_capacity + tol:
                out.append(Violation("soc_upper", h, v - m.storage_capacity))
        target = m.initial_charge + m.end_of_day_delta
        if abs(q[-1] - target) > tol:
            out.append(Violation("soc_terminal", H - 1, abs(q[-1] - target)))
    elif np.any(np.abs(d.s_plus) > tol) or np.any(np.abs(d.s_minus) > tol):
        out.append(Violation("no_storage", None,
                             float(max(np.max(np.abs(d.s_plus)), np.max(np.abs(d.s_minus))))))
    return not out, out


@dataclass(frozen=True)
class DevicePolytope:
    """``{x : C.T @ x >= b}`` with the first ``meq`` rows as equalities, and
    the load map ``l = e + M @ x``."""

    e: np.ndarray
    M: np.ndarray
    C: np.ndarray
    b: np.ndarray
    meq: int
    blocks: tuple

    @classmethod
    def from_model(cls, m: UserModel) -> "DevicePolytope":
        H = m.slot_count
        blocks = []
        if m.kind.generates:
            blocks.append("g")
        if m.kind.stores:
            blocks += ["s_plus", "s_minus"]
        n = H * len(blocks)
        sign = {"g": -1.0, "s_plus": 1.0, "s_minus": -1.0}
        M = np.hstack([sign[b] * np.eye(H) for b in blocks]) if blocks else np.zeros((H, 0))

        eq_rows, eq_rhs, rows, rhs = [], [], [], []
        if n:
            ub = []
            for blk in blocks:
                ub.append(np.full(H, m.gen_cap_hour if blk == "g" else m.charge_rate_max))
            rows += [np.eye(n), -np.eye(n)]
            rhs += [np.zeros(n), -np.concatenate(ub)]
        if m.kind.generates:
            row = np.zeros(n)
            row[:H] = -1.0
            rows.append(row[None, :])
            rhs.append(np.array([-m.gen_cap_day]))
        if m.kind.stores:
            off = H if m.kind.generates else 0
            h_idx = np.arange(H)
            decay = np.where(h_idx[:, None] >= h_idx[None, :],
                             m.leak_rate ** (h_idx[:, None] - h_idx[None, :]).clip(min=0), 0.0)
            Bq = np.zeros((H, n))
            Bq[:, off:off + H] = m.charge_eff * decay
            Bq[:, off + H:off + 2 * H] = -m.discharge_eff * decay
            free = m.initial_charge * m.leak_rate ** (h_idx + 1.0)
            eq_rows.append(Bq[-1:])
            eq_rhs.append(np.array([m.initial_charge + m.end_of_day_delta - free[-1]]))
            rows += [Bq[:-1], -Bq[:-1]]
            rhs += [-free[:-1], free[:-1] - m.storage_capacity]
        all_rows = eq_rows + rows
        C = np.vstack(all_rows).T if all_rows else np.zeros((n, 0))
        b = np.concatenate(eq_rhs + rhs) if all_rows else np.zeros(0)
        return cls(e=m.base_demand, M=M, C=np.ascontiguousarray(C), b=b,
                   meq=sum(r.shape[0] for r in eq_rows), blocks=tuple(blocks))

    @property
    def dim(self) -> int:
        return self.M.shape[1]

    def schedule(self, x: np.ndarray) -> DeviceSchedule:
        H = self.e.size
        parts = {blk: x[i * H:(i + 1) * H] for i, blk in enumerate(self.blocks)}
        z = np.zeros(H)
        return DeviceSchedule(parts.get("g", z).copy(), parts.get("s_plus", z).copy(),
                              parts.get("s_minus", z).copy())

    def vector(self, d: DeviceSchedule) -> np.ndarray:
        return np.concatenate([np.asarray(getattr(d, blk), dtype=float) for blk in self.blocks]) \
            if self.blocks else np.zeros(0)

    def load(self, x: np.ndarray) -> np.ndarray:
        return self.e + self.M @ x

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint violation of ``x``."""
        if not self.b.size:
            return 0.0
        slack = self.C.T @ x - self.b
        eq = np.abs(slack[:self.meq]).max(initial=0.0)
        ineq = (-slack[self.meq:]).max(initial=0.0)
        return float(max(eq, ineq))

    def project(self, y: np.ndarray) -> np.ndarray:
        """Euclidean projection of ``y`` onto the polytope."""
        if not self.dim:
            return np.zeros(0)
        return _solve_qp(np.eye(self.dim), np.asarray(y, dtype=float), self)[0]


def _solve_qp(G, a, poly: DevicePolytope):
    # quadprog: minimize 1/2 x'Gx - a'x  s.t.  C'x >= b (first meq equalities)
    try:
        sol = quadprog.solve_qp(G, a, poly.C, poly.b, poly.meq)
    except ValueError as exc:
        if "inconsistent" in str(exc):
            raise InfeasibleUserModel(str(exc)) from exc
        raise
    return sol[0], sol[4]


@dataclass
class BestResponse:
    load: np.ndarray
    schedule: DeviceSchedule
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    objective_trace: list = field(default_factory=list)


def best_response_objective(l_n, n, loads, errors, centroid, tau, params: GridCostParams):
    """``f_n(l_n, l_-n, delta) + tau/2 ||l_n - centroid||**2``."""
    others = user_sum(loads) - loads[n]
    err_total = user_sum(errors)
    price = params.k * (others + l_n + err_total)
    value = price @ (l_n + errors[n]) + params.beta_m * errors[n] @ errors[n]
    if tau:
        value += 0.5 * tau * np.sum((l_n - centroid) ** 2)
    return float(value)


def best_response(n: int, loads: np.ndarray, errors: np.ndarray, centroid: np.ndarray,
                  tau: float, params: GridCostParams, m: UserModel, *,
                  others_total: np.ndarray | None = None, error_total: np.ndarray | None = None,
                  x0: np.ndarray | None = None, tol: float = 1e-8, max_iter: int = 50,
                  ridge: float = 1e-6) -> BestResponse:
    """Minimize user ``n``'s proximally regularized day-ahead cost over its
    feasible set, with the other users' loads and all errors held fixed.

    ``loads`` and ``errors`` are ``(users, slots)`` arrays; row ``n`` of
    ``loads`` is ignored. ``others_total``/``error_total`` may be passed to
    skip recomputing the aggregates.

    The objective is a separable quadratic in ``l_n`` but only positive
    semidefinite in the device variables, so the QP is solved as a short
    proximal-point sequence of strictly convex QPs (dual active-set). The
    returned KKT residual is measured on the unregularized problem, scaled so
    the largest curvature in load space is 1, and taken relative to the size
    of the linear term once that exceeds 1.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    poly = m.polytope
    H = m.slot_count
    if others_total is None:
        others_total = user_sum(loads) - loads[n]
    if error_total is None:
        error_total = user_sum(errors)
    delta_n = errors[n]
    k = params.k

    w = 2.0 * k + tau
    lin_l = k * (others_total + error_total + delta_n) - tau * centroid
    const = float(k @ (delta_n * (others_total + error_total)) + params.beta_m * delta_n @ delta_n
                  + 0.5 * tau * centroid @ centroid)

    def objective(l):
        return float(0.5 * w @ l**2 + lin_l @ l + const)

    if not m.is_active or poly.dim == 0:
        l = m.base_demand.copy()
        return BestResponse(l, m.zero_schedule(), np.zeros(0), objective(l), 0.0, 0, [objective(l)])

    scale = float(w.max())
    Hn = (poly.M.T * (w / scale)) @ poly.M
    qn = poly.M.T @ ((w * poly.e + lin_l) / scale)
    G = Hn + ridge * np.eye(poly.dim)
    size = max(1.0, float(np.abs(qn).max()))

    x = np.zeros(poly.dim) if x0 is None else np.array(x0, dtype=float)
    trace = []
    kkt = np.inf
    for it in range(1, max_iter + 1):
        x_new, mult = _solve_qp(G, ridge * x - qn, poly)
        slack = poly.C.T @ x_new - poly.b
        stat = np.abs(Hn @ x_new + qn - poly.C @ mult).max()
        comp = np.abs(mult[poly.meq:] * slack[poly.meq:]).max(initial=0.0)
        kkt = max(stat, comp) / size + poly.violation(x_new)
        x = x_new
        trace.append(objective(poly.load(x)))
        if kkt <= tol:
            break
    else:
        raise MaxIterationsExceeded(
            f"best response of user {n} did not reach KKT tolerance {tol:g}",
            residual=kkt, iterations=max_iter)
    l = poly.load(x)
    return BestResponse(l, poly.schedule(x), x, objective(l), float(kkt), it, trace)
