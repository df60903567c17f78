"""
Cooperative energy-storage scheduling and the coalitional values it induces.

Each prosumer owns a battery and has a net demand per hourly interval
(negative when its renewable generation exceeds its load). A coalition
schedules its batteries jointly, buys its positive aggregate net load at
the buy price and sells the negative part at the sell price. The value of
a coalition is the cost its members save by cooperating.
"""

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import lp
from .game import (DEFAULT_GRID_STEP, Coalition, CoalitionLike, RobustGame, ValueFunction,
                   as_mask, grand_mask, popcount)


class EnergyModelError(RuntimeError):
    """A coalition's scheduling LP could not be solved."""


@dataclass(frozen=True)
class ProsumerParams:
    """Battery of one prosumer.

    ``charge_limit`` and ``discharge_limit`` are nonnegative kW magnitudes
    (one interval is one hour, so they also bound kWh per interval).
    """

    capacity: float
    charge_limit: float
    discharge_limit: float
    eta_ch: float = 0.95
    eta_dc: float = 0.95
    soc0: float = 0.5

    def __post_init__(self):
        if min(self.capacity, self.charge_limit, self.discharge_limit) < 0:
            raise ValueError("capacity and power limits must be nonnegative")
        if not (0 < self.eta_ch < 1 and 0 < self.eta_dc < 1):
            raise ValueError("efficiencies must lie in (0, 1)")
        if not 0 <= self.soc0 <= 1:
            raise ValueError("initial state of charge must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class MarketScenario:
    """Prices and net demands over ``K`` hourly intervals.

    ``demand``, ``demand_min`` and ``demand_max`` have shape ``(N, K)``.
    """

    buy_price: np.ndarray
    sell_price: np.ndarray
    demand: np.ndarray
    demand_min: Optional[np.ndarray] = None
    demand_max: Optional[np.ndarray] = None

    def __post_init__(self):
        buy = np.asarray(self.buy_price, dtype=float).ravel()
        sell = np.asarray(self.sell_price, dtype=float).ravel()
        q = np.atleast_2d(np.asarray(self.demand, dtype=float))
        K = buy.size
        if sell.size != K or q.shape[1] != K:
            raise ValueError("prices and demands must share the horizon K")
        if np.any(sell < 0) or np.any(buy < sell):
            raise ValueError("prices must satisfy buy >= sell >= 0 at every interval")
        qmin = q if self.demand_min is None else np.atleast_2d(np.asarray(self.demand_min, dtype=float))
        qmax = q if self.demand_max is None else np.atleast_2d(np.asarray(self.demand_max, dtype=float))
        if qmin.shape != q.shape or qmax.shape != q.shape:
            raise ValueError("demand envelopes must match the demand shape")
        if np.any(qmin > q) or np.any(q > qmax):
            raise ValueError("demand must lie inside [demand_min, demand_max]")
        for name, arr in (("buy_price", buy), ("sell_price", sell), ("demand", q),
                          ("demand_min", qmin), ("demand_max", qmax)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return self.buy_price.size

    @property
    def n_agents(self) -> int:
        return self.demand.shape[0]

    def with_demand(self, demand) -> "MarketScenario":
        return MarketScenario(self.buy_price, self.sell_price, demand,
                              np.minimum(self.demand_min, demand), np.maximum(self.demand_max, demand))

    def sample_demand(self, rng: np.random.Generator) -> np.ndarray:
        """A demand realization drawn uniformly inside the envelope."""
        return rng.uniform(self.demand_min, self.demand_max)


def _members(S: CoalitionLike, n: int):
    m = as_mask(S)
    if not 0 < m <= grand_mask(n):
        raise ValueError(f"coalition {S!r} is not a nonempty subset of {n} agents")
    return [i for i in range(n) if m >> i & 1]


def coalition_lp(S: CoalitionLike, params: Sequence[ProsumerParams], scenario: MarketScenario,
                 demand=None) -> lp.LinearProgram:
    """The scheduling LP of coalition ``S``.

    Variables, in order: charge ``b+[i, t]``, discharge ``b-[i, t]`` (as a
    nonpositive number) for each member, then the coalition's bought
    ``L+[t] >= 0`` and sold ``L-[t] <= 0`` energies. Since only member sums
    of grid exchanges enter the objective and constraints, one pair per
    interval is kept.
    """
    members = _members(S, len(params))
    q = scenario.demand if demand is None else np.asarray(demand, dtype=float)
    K = scenario.horizon
    s = len(members)
    n_b = s * K
    n = 2 * n_b + 2 * K
    bp = lambda a, t: a * K + t  # noqa: E731
    bm = lambda a, t: n_b + a * K + t  # noqa: E731
    Lp = lambda t: 2 * n_b + t  # noqa: E731
    Lm = lambda t: 2 * n_b + K + t  # noqa: E731

    c = np.zeros(n)
    lo = np.zeros(n)
    hi = np.zeros(n)
    for t in range(K):
        c[Lp(t)] = scenario.buy_price[t]
        c[Lm(t)] = scenario.sell_price[t]
        lo[Lp(t)], hi[Lp(t)] = 0.0, np.inf
        lo[Lm(t)], hi[Lm(t)] = -np.inf, 0.0
    for a, i in enumerate(members):
        p = params[i]
        for t in range(K):
            lo[bp(a, t)], hi[bp(a, t)] = 0.0, p.charge_limit
            lo[bm(a, t)], hi[bm(a, t)] = -p.discharge_limit, 0.0

    net_q = q[members].sum(axis=0)
    A_eq, b_eq, A_le, b_le = [], [], [], []
    for t in range(K):
        row = np.zeros(n)
        for a in range(s):
            row[bp(a, t)] = row[bm(a, t)] = 1.0
        dom = row.copy()
        dom[Lp(t)] = -1.0
        A_le.append(dom)
        b_le.append(-net_q[t])
        bal = dom.copy()
        bal[Lm(t)] = -1.0
        A_eq.append(bal)
        b_eq.append(-net_q[t])
    for a, i in enumerate(members):
        p = params[i]
        prefix = np.zeros(n)
        for t in range(K):
            prefix[bp(a, t)] = p.eta_ch
            prefix[bm(a, t)] = 1.0 / p.eta_dc
            A_le.append(prefix.copy())
            b_le.append(p.capacity * (1.0 - p.soc0))
            A_le.append(-prefix)
            b_le.append(p.capacity * p.soc0)
        A_eq.append(prefix.copy())
        b_eq.append(0.0)
    return lp.LinearProgram(c, np.array(A_eq), np.array(b_eq), np.array(A_le), np.array(b_le), lo, hi)


def solve_schedule(S: CoalitionLike, params, scenario: MarketScenario, demand=None) -> lp.LpOutcome:
    out = lp.solve(coalition_lp(S, params, scenario, demand))
    if not out.optimal:
        key = Coalition.from_mask(as_mask(S)).key()
        raise EnergyModelError(f"scheduling LP for coalition {{{key}}} ended with status {out.status}")
    return out


def coalition_cost(S: CoalitionLike, params, scenario: MarketScenario, demand=None) -> float:
    """Minimal energy cost of coalition ``S`` over the horizon."""
    return solve_schedule(S, params, scenario, demand).objective_value


def schedule_from_solution(S: CoalitionLike, params, scenario: MarketScenario, z) -> np.ndarray:
    """Net battery exchange ``b+ + b-`` per member and interval from an LP solution."""
    s = len(_members(S, len(params)))
    K = scenario.horizon
    z = np.asarray(z)
    return z[:s * K].reshape(s, K) + z[s * K:2 * s * K].reshape(s, K)


def energy_cost(S: CoalitionLike, scenario: MarketScenario, battery, demand=None) -> float:
    """Direct cost of a battery schedule ``battery`` (members x K) for coalition ``S``.

    The coalition's aggregate net load is bought at the buy price when
    positive and sold at the sell price when negative.
    """
    members = _members(S, scenario.n_agents)
    q = scenario.demand if demand is None else np.asarray(demand, dtype=float)
    net = (q[members] + np.asarray(battery)).sum(axis=0)
    return float(scenario.buy_price @ np.maximum(net, 0.0) + scenario.sell_price @ np.minimum(net, 0.0))


def soc_trajectory(params: ProsumerParams, charge, discharge) -> np.ndarray:
    """Stored energy after each interval, starting from ``capacity * soc0``."""
    delta = np.asarray(charge) * params.eta_ch + np.asarray(discharge) / params.eta_dc
    return params.capacity * params.soc0 + np.cumsum(delta)


def coalition_value(S: CoalitionLike, params, scenario: MarketScenario, demand=None) -> float:
    """Cost saved by ``S`` relative to its members acting alone."""
    members = _members(S, len(params))
    if len(members) == 1:
        return 0.0
    alone = sum(coalition_cost(1 << i, params, scenario, demand) for i in members)
    return alone - coalition_cost(S, params, scenario, demand)


class _CostTable:
    """Memoized coalition costs at the demand extremes."""

    def __init__(self, params, scenario):
        self.params = params
        self.scenario = scenario
        self._cost = lru_cache(maxsize=None)(self._solve)

    def _solve(self, mask: int, which: str) -> float:
        demand = {"min": self.scenario.demand_min, "max": self.scenario.demand_max,
                  "forecast": self.scenario.demand}[which]
        return coalition_cost(mask, self.params, self.scenario, demand)

    def cost(self, mask: int, which: str) -> float:
        return self._cost(mask, which)

    def bounds(self, mask: int):
        members = [i for i in range(self.scenario.n_agents) if mask >> i & 1]
        if len(members) == 1:
            return 0.0, 0.0
        # pairing of the displayed bound: individual costs at minimum demand,
        # coalition cost at maximum demand; then the mirrored pairing
        paired = sum(self.cost(1 << i, "min") for i in members) - self.cost(mask, "max")
        mirrored = sum(self.cost(1 << i, "max") for i in members) - self.cost(mask, "min")
        lower, upper = min(paired, mirrored), max(paired, mirrored)
        # cooperation never costs more than acting alone
        lower = max(lower, 0.0)
        return lower, max(upper, lower)


def value_bounds(S: CoalitionLike, params, scenario: MarketScenario):
    """Interval ``(v_lower, v_upper)`` containing ``v(S)`` for every demand in the envelope."""
    mask = as_mask(S)
    _members(mask, len(params))
    return _CostTable(params, scenario).bounds(mask)


def _floor_to(x, step):
    return np.floor(x / step + 1e-9) * step


def _ceil_to(x, step):
    return np.ceil(x / step - 1e-9) * step


def build_robust_game(params, scenario: MarketScenario, grid_step: float = DEFAULT_GRID_STEP) -> RobustGame:
    """Robust game from the demand envelope.

    Strict coalitions get the bounds of :func:`value_bounds`, widened
    outward to multiples of ``grid_step``; the grand coalition is pinned
    to its value at the forecast demand.
    """
    n = scenario.n_agents
    if len(params) != n:
        raise ValueError("one ProsumerParams per agent is required")
    table = _CostTable(params, scenario)
    lower = np.zeros(1 << n)
    upper = np.zeros(1 << n)
    for m in range(1, grand_mask(n)):
        lo, hi = table.bounds(m)
        if popcount(m) > 1:
            lo, hi = _floor_to(lo, grid_step), _ceil_to(hi, grid_step)
        lower[m], upper[m] = lo, hi
    full = grand_mask(n)
    if n == 1:
        v_grand = 0.0
    else:
        v_grand = sum(table.cost(1 << i, "forecast") for i in range(n)) - table.cost(full, "forecast")
    lower[full] = upper[full] = v_grand
    return RobustGame(ValueFunction(n, lower), ValueFunction(n, upper), grid_step)


def zero_capacity_cost(scenario: MarketScenario, members, demand=None) -> float:
    """Closed-form cost when batteries hold no energy."""
    q = scenario.demand if demand is None else np.asarray(demand)
    net = q[list(members)].sum(axis=0)
    return float(scenario.buy_price @ np.maximum(net, 0) + scenario.sell_price @ np.minimum(net, 0))


# --- scenario files -------------------------------------------------------

def scenario_from_json(doc: dict):
    """Parse an energy scenario document into ``(params, scenario, grid_step)``."""
    try:
        K = int(doc["K"])
        buy = doc["prices"]["buy"]
        sell = doc["prices"]["sell"]
        prosumers = doc["prosumers"]
    except KeyError as exc:
        raise ValueError(f"energy scenario is missing field {exc.args[0]!r}") from None
    params, q, qmin, qmax = [], [], [], []
    for idx, p in enumerate(prosumers):
        try:
            params.append(ProsumerParams(
                capacity=float(p["e"]), charge_limit=float(p["b_max"]),
                discharge_limit=float(p["b_min"]), eta_ch=float(p.get("eta_ch", 0.95)),
                eta_dc=float(p.get("eta_dc", 0.95)), soc0=float(p.get("soc0", 0.5))))
        except KeyError as exc:
            raise ValueError(f"prosumers[{idx}] is missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ValueError(f"prosumers[{idx}]: {exc}") from None
        q_i = p.get("q", p.get("q_max"))
        if q_i is None:
            raise ValueError(f"prosumers[{idx}] needs 'q' or 'q_max'")
        q.append(q_i)
        qmin.append(p.get("q_min", q_i))
        qmax.append(p.get("q_max", q_i))
    scenario = MarketScenario(buy, sell, q, qmin, qmax)
    if scenario.horizon != K:
        raise ValueError(f"field 'K' is {K} but prices cover {scenario.horizon} intervals")
    return params, scenario, float(doc.get("grid_step", DEFAULT_GRID_STEP))


def scenario_to_json(params, scenario: MarketScenario, grid_step: float = DEFAULT_GRID_STEP) -> dict:
    return {
        "K": scenario.horizon,
        "prices": {"buy": scenario.buy_price.tolist(), "sell": scenario.sell_price.tolist()},
        "prosumers": [
            {"e": p.capacity, "b_max": p.charge_limit, "b_min": p.discharge_limit,
             "eta_ch": p.eta_ch, "eta_dc": p.eta_dc, "soc0": p.soc0,
             "q_min": scenario.demand_min[i].tolist(), "q_max": scenario.demand_max[i].tolist(),
             "q": scenario.demand[i].tolist()}
            for i, p in enumerate(params)
        ],
        "grid_step": grid_step,
    }


def reference_scenario(seed: int = 0, n_agents: int = 6, horizon: int = 6, uncertainty: float = 1.0):
    """A seeded instance of the six-prosumer, six-hour setup.

    Every battery holds 7 kWh, charges and discharges at up to 3.5 kW with
    95 % efficiency and starts half full. Loads, solar capacities and
    prices are synthetic: ``demand_max`` is the load without generation,
    ``demand_min`` the load minus ``uncertainty`` times the solar capacity,
    and the forecast sits midway.
    """
    rng = np.random.default_rng(seed)
    params = [ProsumerParams(7.0, 3.5, 3.5, 0.95, 0.95, 0.5) for _ in range(n_agents)]
    hours = np.arange(horizon)
    buy = 0.22 + 0.10 * np.sin(np.pi * (hours + 0.5) / horizon)
    sell = 0.4 * buy
    load = rng.uniform(0.5, 2.5, size=(n_agents, horizon))
    solar = rng.uniform(0.0, 3.0, size=(n_agents, horizon))
    qmax = load
    qmin = load - uncertainty * solar
    q = 0.5 * (qmin + qmax)
    return params, MarketScenario(buy.round(4), sell.round(4), q, qmin, qmax)


def dumps(params, scenario, grid_step=DEFAULT_GRID_STEP) -> str:
    return json.dumps(scenario_to_json(params, scenario, grid_step), indent=2)
