"""Experiment scenarios: population mix, demand curves, prices and error budgets.

A scenario with ``D`` users has ``floor(D/2)`` active users split into
generate-and-store, generate-only and store-only groups (the latter two of
size ``floor(N/3)`` each); the rest are passive. Users are ordered
GenStore, GenOnly, StoreOnly, Passive.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import GridCostParams, TimeGrid, user_sum
from .users import UserKind, UserModel

# Hourly shape of a residential day (00:00-01:00 first): low overnight,
# morning shoulder, flat midday, 19:00-22:00 evening peak. Peak/trough = 3.
TYPICAL_DAY = np.array([
    0.60, 0.55, 0.50, 0.50, 0.50, 0.55, 0.75, 1.00,
    1.10, 0.95, 0.90, 0.90, 0.95, 0.90, 0.85, 0.90,
    1.05, 1.25, 1.40, 1.50, 1.50, 1.45, 1.20, 0.85,
])


def day_template(slot_count: int, template=TYPICAL_DAY) -> np.ndarray:
    """Template resampled to ``slot_count`` slots, normalized to sum 1."""
    template = np.asarray(template, dtype=float)
    if slot_count != template.size:
        src = (np.arange(template.size) + 0.5) / template.size
        dst = (np.arange(slot_count) + 0.5) / slot_count
        template = np.interp(dst, src, template, period=1.0)
    return template / template.sum()


@dataclass(frozen=True)
class ScenarioSpec:
    user_count: int = 20
    slot_count: int = 24
    mean_daily_demand: float = 4.5
    demand_noise_std: float = 0.01875
    target_avg_price: float = 0.1412
    day_night_ratio: float = 1.5
    alpha_fraction: float = 0.10
    beta_m: float = 0.001
    rng_seed: int = 0
    gen_cap_hour: float = 0.4
    gen_day_fraction: float = 0.8
    gen_day_per_slot: bool = True
    storage_capacity: float = 4.0
    template: tuple | None = None

    def __post_init__(self):
        if self.user_count < 2:
            raise ConfigurationError(f"a scenario needs at least 2 users, got {self.user_count}")
        if self.slot_count < 1:
            raise ConfigurationError("slot_count must be positive")
        if self.mean_daily_demand <= 0 or self.target_avg_price <= 0:
            raise ConfigurationError("demand and target price must be positive")
        if self.demand_noise_std < 0 or self.alpha_fraction <= 0 or self.beta_m < 0:
            raise ConfigurationError("invalid noise, alpha_fraction or beta_m")
        if self.day_night_ratio <= 0:
            raise ConfigurationError("day_night_ratio must be positive")

    @property
    def population(self) -> dict:
        active = self.user_count // 2
        third = active // 3
        return {"GenStore": active - 2 * third, "GenOnly": third, "StoreOnly": third,
                "Passive": self.user_count - active}

    def replace(self, **changes) -> "ScenarioSpec":
        kw = asdict(self)
        kw.update(changes)
        return ScenarioSpec(**kw)


@dataclass(frozen=True)
class Scenario:
    users: tuple
    params: GridCostParams
    grid: TimeGrid
    spec: ScenarioSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def user_count(self) -> int:
        return len(self.users)

    @property
    def base_demand(self) -> np.ndarray:
        return np.vstack([u.base_demand for u in self.users])

    @property
    def active(self) -> list:
        return [i for i, u in enumerate(self.users) if u.is_active]

    def with_params(self, **changes) -> "Scenario":
        return Scenario(self.users, self.params.replace(**changes), self.grid, self.spec, self.meta)

    def to_dict(self) -> dict:
        users = []
        for u in self.users:
            rec = {f.name: getattr(u, f.name) for f in fields(UserModel)}
            rec["kind"] = u.kind.value
            rec["base_demand"] = u.base_demand.tolist()
            users.append(rec)
        meta = dict(self.meta)
        if self.spec is not None:
            meta.setdefault("seed", self.spec.rng_seed)
            meta["spec"] = asdict(self.spec)
        return {
            "grid": {"slot_count": self.grid.slot_count, "k": self.params.k.tolist(),
                     "alpha": self.params.alpha.tolist(), "beta_m": self.params.beta_m},
            "users": users,
            "meta": meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        try:
            g = doc["grid"]
            grid = TimeGrid(int(g["slot_count"]))
            params = GridCostParams(k=g["k"], alpha=g["alpha"], beta_m=g.get("beta_m", 0.0))
            users = tuple(UserModel(**rec) for rec in doc["users"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed scenario document: {exc}") from exc
        if params.slot_count != grid.slot_count or any(u.slot_count != grid.slot_count for u in users):
            raise ConfigurationError("slot counts in scenario document disagree")
        meta = dict(doc.get("meta", {}))
        spec = None
        if isinstance(meta.get("spec"), dict):
            s = dict(meta["spec"])
            if s.get("template") is not None:
                s["template"] = tuple(s["template"])
            spec = ScenarioSpec(**s)
        return cls(users, params, grid, spec, meta)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_dict(doc)


def calibrate_prices(demands, day_night_ratio: float, target_avg_price: float) -> np.ndarray:
    """Per-slot cost coefficients giving ``target_avg_price`` at the loads
    ``demands`` (aggregate per slot).

    Night slots (first third of the day) get ``K_night``, the rest
    ``day_night_ratio * K_night``. The average price
    ``sum_h K_h L(h)**2 / sum_h L(h)`` is linear in ``K_night``.
    """
    L = np.asarray(demands, dtype=float)
    if L.ndim != 1 or L.size == 0:
        raise ValueError("demands must be a nonempty per-slot vector")
    if target_avg_price <= 0:
        raise ValueError("target_avg_price must be positive")
    total = L.sum()
    if total <= 0:
        raise ValueError("total demand must be positive")
    shape = np.full(L.size, float(day_night_ratio))
    shape[: L.size // 3] = 1.0
    k_night = target_avg_price * total / float(shape @ L**2)
    return k_night * shape


def average_price(loads, k) -> float:
    L = np.asarray(loads, dtype=float)
    return float(np.asarray(k) @ L**2 / L.sum())


def build_scenario(spec: ScenarioSpec) -> Scenario:
    H = spec.slot_count
    rng = np.random.default_rng(spec.rng_seed)
    shape = day_template(H, TYPICAL_DAY if spec.template is None else spec.template)
    profile = spec.mean_daily_demand * shape
    D = spec.user_count
    noise = rng.normal(0.0, spec.demand_noise_std, size=(D, H)) if spec.demand_noise_std else 0.0
    demand = np.clip(np.broadcast_to(profile + noise, (D, H)), 0.0, None)

    g_max = spec.gen_cap_hour
    gamma_max = spec.gen_day_fraction * g_max * (H if spec.gen_day_per_slot else 1)
    c = spec.storage_capacity
    storage = dict(storage_capacity=c, charge_rate_max=0.125 * c, leak_rate=0.9 ** (1 / 24),
                   charge_eff=0.9, discharge_eff=1.1, initial_charge=0.25 * c, end_of_day_delta=0.0)
    gen = dict(gen_cap_hour=g_max, gen_cap_day=gamma_max)

    kinds = []
    for kind, count in spec.population.items():
        kinds += [UserKind(kind)] * count
    users = []
    for n, kind in enumerate(kinds):
        kw = {}
        if kind.generates:
            kw.update(gen)
        if kind.stores:
            kw.update(storage)
        users.append(UserModel(user_id=n, kind=kind, base_demand=demand[n], **kw))

    total = user_sum(demand)
    if np.any(total <= 0):
        raise ConfigurationError("generated demand has a slot with zero total load")
    k = calibrate_prices(total, spec.day_night_ratio, spec.target_avg_price)
    params = GridCostParams(k=k, alpha=spec.alpha_fraction * total, beta_m=spec.beta_m)
    return Scenario(tuple(users), params, TimeGrid(H), spec, {"seed": spec.rng_seed})
