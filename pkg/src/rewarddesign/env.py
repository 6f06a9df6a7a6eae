"""Discrete-time grid-world fleet simulator.

A rectangular W x H grid, indexed row-major with row 0 at the top. Each step
every idle driver picks one of five moves (stay/up/down/left/right), lands in
the chosen neighbor one tick later, and competes for the orders that appear
there on arrival. Matching within a grid is uniform-random; matched drivers
go enroute to the order destination and reappear idle there after the travel
time. Green-class drivers are never matched inside restricted grids. Moves
off the grid are penalized and the driver is forced to stay.

The simulator emits one experience record per idle driver per step together
with the per-grid mean action (the demand-to-supply ratio in the grid the
driver entered), which is the mean-field signal consumed by the critics.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .rewards import (
    ELASTICITY,
    MODE_FLAT_DEDUCTION,
    MODE_SERVICE_CHARGE,
    MODE_TOLL,
    MetricsReport,
    ObjectiveConfig,
    RewardDesign,
    compute_ics,
    compute_orr,
    compute_osc,
    compute_ptc,
    driver_revenue,
    ics_by_grid,
    objective,
    rank_crowded_grids,
    service_charge,
    thin_demand,
)

CLASSES = ("yellow", "green")

ACTION_STAY, ACTION_UP, ACTION_DOWN, ACTION_LEFT, ACTION_RIGHT = range(5)
N_ACTIONS = 5
ACTION_NAMES = ("stay", "up", "down", "left", "right")
_DROW = np.array([0, -1, 1, 0, 0])
_DCOL = np.array([0, 0, 0, -1, 1])


class ScenarioError(ValueError):
    """Raised for inconsistent or out-of-range scenario configuration."""


@dataclass(frozen=True)
class OrderSpec:
    origin: int
    destination: int
    appear_time: int
    fare: float
    passengers: int = 1


@dataclass(frozen=True)
class OrderRate:
    """Poisson order source: ``rate`` expected orders at (origin, t)."""
    origin: int
    destination: int
    appear_time: int
    rate: float
    fare: float
    passengers: int = 1


@dataclass(frozen=True)
class Scenario:
    width: int
    height: int
    horizon: int
    fleet: dict[str, int]
    cbd: frozenset[int] = frozenset()
    restricted: frozenset[int] = frozenset()
    orders: tuple[OrderSpec, ...] = ()
    order_rates: tuple[OrderRate, ...] = ()
    placement: dict[str, dict[int, int]] | None = None
    boundary_penalty: float = -100.0
    travel: dict[tuple[int, int], int] | None = None  # None: Manhattan distance
    subway_entries: dict[int, float] = field(default_factory=dict)
    subway_exits: dict[int, float] = field(default_factory=dict)

    @property
    def n_grids(self) -> int:
        return self.width * self.height

    @property
    def fleet_total(self) -> int:
        return sum(self.fleet.values())

    def travel_steps(self, origin: int, destination: int) -> int:
        if self.travel is not None:
            key = (min(origin, destination), max(origin, destination))
            if key in self.travel:
                return self.travel[key]
        r1, c1 = divmod(origin, self.width)
        r2, c2 = divmod(destination, self.width)
        return max(1, abs(r1 - r2) + abs(c1 - c2))


def _check_grid(value, n_grids, what) -> int:
    g = int(value)
    if not 0 <= g < n_grids:
        raise ScenarioError(f"{what} {g} outside grid [0, {n_grids})")
    return g


def build_scenario(config: dict) -> Scenario:
    """Validate a structured scenario description into a Scenario.

    Order entries may carry a ``count`` field, expanded into that many
    identical requests. Deterministic given the config.
    """
    try:
        width = int(config["width"])
        height = int(config["height"])
        horizon = int(config["horizon"])
    except KeyError as missing:
        raise ScenarioError(f"missing scenario field {missing}") from None
    if width < 1 or height < 1:
        raise ScenarioError("grid dimensions must be >= 1")
    if horizon < 1:
        raise ScenarioError("horizon must be >= 1")
    n = width * height

    cbd = frozenset(_check_grid(g, n, "CBD cell") for g in config.get("cbd", ()))
    restricted = frozenset(_check_grid(g, n, "restricted cell") for g in config.get("restricted", ()))

    fleet = {}
    for cls, count in dict(config.get("fleet", {})).items():
        if cls not in CLASSES:
            raise ScenarioError(f"unknown driver class {cls!r}")
        if int(count) < 0:
            raise ScenarioError("fleet counts must be nonnegative")
        if int(count) > 0:
            fleet[cls] = int(count)
    if not fleet:
        raise ScenarioError("fleet must contain at least one driver")

    placement = None
    if config.get("placement"):
        placement = {}
        for cls, spots in config["placement"].items():
            if cls not in fleet:
                raise ScenarioError(f"placement given for absent class {cls!r}")
            expanded = {_check_grid(g, n, "placement cell"): int(c) for g, c in spots.items()}
            if sum(expanded.values()) != fleet[cls]:
                raise ScenarioError(f"placement counts for {cls} do not sum to the fleet size")
            placement[cls] = expanded
        if set(placement) != set(fleet):
            raise ScenarioError("placement must cover every class or none")

    orders = []
    for entry in config.get("orders", ()):
        count = int(entry.get("count", 1))
        spec = OrderSpec(
            origin=_check_grid(entry["origin"], n, "order origin"),
            destination=_check_grid(entry["destination"], n, "order destination"),
            appear_time=int(entry["t"]),
            fare=float(entry["fare"]),
            passengers=int(entry.get("passengers", 1)),
        )
        if spec.fare <= 0:
            raise ScenarioError("order fares must be positive")
        if not 0 <= spec.appear_time <= horizon:
            raise ScenarioError(f"order time {spec.appear_time} outside [0, {horizon}]")
        if spec.passengers < 1:
            raise ScenarioError("orders carry at least one passenger")
        orders.extend([spec] * count)

    rates = []
    for entry in config.get("order_rates", ()):
        rate = OrderRate(
            origin=_check_grid(entry["origin"], n, "rate origin"),
            destination=_check_grid(entry["destination"], n, "rate destination"),
            appear_time=int(entry["t"]),
            rate=float(entry["rate"]),
            fare=float(entry["fare"]),
            passengers=int(entry.get("passengers", 1)),
        )
        if rate.rate < 0 or rate.fare <= 0:
            raise ScenarioError("order rates need rate >= 0 and fare > 0")
        if not 0 <= rate.appear_time <= horizon:
            raise ScenarioError(f"rate time {rate.appear_time} outside [0, {horizon}]")
        rates.append(rate)

    travel = None
    travel_cfg = config.get("travel_time", "manhattan")
    if travel_cfg != "manhattan":
        travel = {}
        for a, b, steps in travel_cfg:
            a = _check_grid(a, n, "travel endpoint")
            b = _check_grid(b, n, "travel endpoint")
            if int(steps) < 1:
                raise ScenarioError("travel times must be positive")
            travel[(min(a, b), max(a, b))] = int(steps)

    penalty = float(config.get("boundary_penalty", -100.0))
    if penalty > 0:
        raise ScenarioError("boundary penalty must not be positive")

    subway_entries = {_check_grid(g, n, "subway cell"): float(v)
                      for g, v in config.get("subway_entries", {}).items()}
    subway_exits = {_check_grid(g, n, "subway cell"): float(v)
                    for g, v in config.get("subway_exits", {}).items()}

    return Scenario(
        width=width, height=height, horizon=horizon, fleet=fleet,
        cbd=cbd, restricted=restricted,
        orders=tuple(orders), order_rates=tuple(rates),
        placement=placement, boundary_penalty=penalty, travel=travel,
        subway_entries=subway_entries, subway_exits=subway_exits,
    )


class MeanActionMap:
    """Per (grid, arrival time): order count, entrant count, and their ratio."""

    def __init__(self):
        self.demand: dict[tuple[int, int], int] = {}
        self.supply: dict[tuple[int, int], int] = {}

    def record(self, grid: int, t: int, demand: int, supply: int) -> None:
        self.demand[(grid, t)] = demand
        self.supply[(grid, t)] = supply

    def ratio(self, grid: int, t: int) -> float:
        key = (grid, t)
        if key not in self.supply:
            raise KeyError(f"no agent entered grid {grid} at time {t}")
        return self.demand[key] / self.supply[key]


def mean_action(mam: MeanActionMap, grid: int, t: int) -> float:
    return mam.ratio(grid, t)


def match_orders(occupants, n_orders: int, rng) -> list[int]:
    """Uniform one-to-one assignment: returns the matched occupant subset.

    Callers pre-filter eligibility (green drivers in restricted grids). The
    returned drivers are a uniform random sample without replacement of size
    min(len(occupants), n_orders).
    """
    occupants = np.asarray(occupants)
    m = min(len(occupants), n_orders)
    if m == 0:
        return []
    return list(rng.permutation(occupants)[:m])


@dataclass
class ExperienceBatch:
    """One step's records for one driver class, column-wise."""
    obs_grid: np.ndarray
    obs_time: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    mean_action: np.ndarray
    next_grid: np.ndarray
    next_time: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return len(self.action)


@dataclass
class EpisodeStats:
    fleet_total: int
    n_grids: int
    total_orders: int = 0
    fulfilled: int = 0
    thinned: int = 0
    serviced: list = field(default_factory=list)      # (fare, sc_fraction)
    unserviced: list = field(default_factory=list)    # (origin, destination, passengers)
    cbd_counts: list = field(default_factory=list)
    occupancy: np.ndarray | None = None               # per-grid presence counts
    reward_total: float = 0.0
    green_restricted_pickups: int = 0

    def __post_init__(self):
        if self.occupancy is None:
            self.occupancy = np.zeros(self.n_grids)

    def metrics(self, design: RewardDesign, config: ObjectiveConfig,
                scenario: Scenario, detail: bool = False) -> MetricsReport:
        report = MetricsReport(alpha=design.alpha)
        report.orr = compute_orr(self.fulfilled, self.total_orders) if self.total_orders else 0.0
        report.osc = compute_osc(self.serviced)
        report.mean_reward = self.reward_total / self.fleet_total
        if self.cbd_counts:
            report.ptc = compute_ptc(self.cbd_counts, self.fleet_total)
        if scenario.subway_entries:
            report.ics = compute_ics(self.unserviced, scenario.subway_entries,
                                     scenario.subway_exits, config.m,
                                     config.exit_denominator)
        report.objective = objective(report, config, design.mode)
        if detail:
            steps = max(1, len(self.cbd_counts))
            share = self.occupancy / (steps * self.fleet_total)
            report.occupancy = {g: float(share[g]) for g in range(self.n_grids)}
            if scenario.subway_entries:
                top = rank_crowded_grids(scenario.subway_entries, scenario.subway_exits, config.m)
                report.ics_detail = ics_by_grid(self.unserviced, scenario.subway_entries,
                                                scenario.subway_exits, top,
                                                config.exit_denominator)
        return report


class Simulation:
    """One episode of the fleet world; advances strictly sequentially."""

    def __init__(self, scenario: Scenario, design: RewardDesign, rng,
                 elasticity: float = ELASTICITY):
        self.scenario = scenario
        self.design = design
        self.rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
        self.elasticity = elasticity
        self.t = 0

        n = scenario.fleet_total
        self.driver_class = np.zeros(n, dtype=np.int8)
        self.loc = np.zeros(n, dtype=np.int64)
        self.busy_until = np.zeros(n, dtype=np.int64)
        i = 0
        for ci, cls in enumerate(CLASSES):
            count = scenario.fleet.get(cls, 0)
            if count == 0:
                continue
            self.driver_class[i:i + count] = ci
            if scenario.placement is not None:
                spots = []
                for g, c in sorted(scenario.placement[cls].items()):
                    spots.extend([g] * c)
                self.loc[i:i + count] = spots
            else:
                self.loc[i:i + count] = self.rng.integers(0, scenario.n_grids, size=count)
            i += count

        self._in_cbd = np.zeros(scenario.n_grids, dtype=bool)
        self._in_cbd[list(scenario.cbd)] = True
        self._orders_at = defaultdict(list)
        for order in scenario.orders:
            self._orders_at[order.appear_time].append(order)
        self._rates_at = defaultdict(list)
        for rate in scenario.order_rates:
            self._rates_at[rate.appear_time].append(rate)

        self.stats = EpisodeStats(fleet_total=n, n_grids=scenario.n_grids)

    @property
    def done(self) -> bool:
        return self.t >= self.scenario.horizon

    def idle_ids(self) -> dict[str, np.ndarray]:
        idle = self.busy_until <= self.t
        return {
            cls: np.flatnonzero(idle & (self.driver_class == ci))
            for ci, cls in enumerate(CLASSES)
            if self.scenario.fleet.get(cls, 0) > 0
        }

    def observations(self) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per class: (driver ids, observed grid, observed time)."""
        out = {}
        for cls, ids in self.idle_ids().items():
            out[cls] = (ids, self.loc[ids].copy(), np.full(len(ids), self.t, dtype=np.int64))
        return out

    def _spawn_orders(self, t: int) -> list[OrderSpec]:
        spawned = list(self._orders_at.get(t, ()))
        for rate in self._rates_at.get(t, ()):
            count = int(self.rng.poisson(rate.rate))
            spawned.extend(
                OrderSpec(rate.origin, rate.destination, t, rate.fare, rate.passengers)
                for _ in range(count)
            )
        return spawned

    def step(self, actions: dict[str, np.ndarray]):
        """Advance one tick given one action per currently idle driver.

        Returns (per-class ExperienceBatch dict, MeanActionMap).
        """
        if self.done:
            raise RuntimeError("episode is over")
        scn = self.scenario
        idle = self.idle_ids()
        if set(actions) != set(idle):
            raise ValueError(f"actions must cover exactly the classes {sorted(idle)}")
        ids = np.concatenate([idle[cls] for cls in sorted(idle)])
        acts = np.concatenate([np.asarray(actions[cls], dtype=np.int64) for cls in sorted(idle)])
        if len(acts) != len(ids):
            raise ValueError("one action required per currently idle driver")
        if len(acts) and (acts.min() < 0 or acts.max() >= N_ACTIONS):
            raise ValueError("action ids must lie in [0, 5)")

        t0, t1 = self.t, self.t + 1
        prev = self.loc[ids]
        rows, cols = prev // scn.width, prev % scn.width
        nrows, ncols = rows + _DROW[acts], cols + _DCOL[acts]
        off = (nrows < 0) | (nrows >= scn.height) | (ncols < 0) | (ncols >= scn.width)
        nrows[off], ncols[off] = rows[off], cols[off]
        dest = nrows * scn.width + ncols

        rewards = np.zeros(len(ids))
        rewards[off] += scn.boundary_penalty
        toll = self.design.alpha if self.design.mode == MODE_TOLL else 0.0
        if toll:
            crossed = ~self._in_cbd[prev] & self._in_cbd[dest]
            rewards[crossed] -= toll

        spawned = self._spawn_orders(t1)
        if toll:
            kept, removed = thin_demand(spawned, toll, scn.cbd, self.rng, self.elasticity)
            self.stats.thinned += len(removed)
            for order in removed:
                self.stats.unserviced.append((order.origin, order.destination, order.passengers))
        else:
            kept = spawned
        self.stats.total_orders += len(kept)

        orders_by_grid = defaultdict(list)
        for order in kept:
            orders_by_grid[order.origin].append(order)
        uniq_grids, inv = np.unique(dest, return_inverse=True)

        mam = MeanActionMap()
        next_grid = dest.copy()
        next_time = np.full(len(ids), t1, dtype=np.int64)
        ratio_per_uniq = np.zeros(len(uniq_grids))
        green_idx = CLASSES.index("green")
        for ui, g in enumerate(uniq_grids):
            g = int(g)
            members = np.flatnonzero(inv == ui)
            grid_orders = orders_by_grid.pop(g, [])
            demand, supply = len(grid_orders), len(members)
            mam.record(g, t1, demand, supply)
            ratio_per_uniq[ui] = demand / supply
            eligible = members
            if g in scn.restricted:
                eligible = members[self.driver_class[ids[members]] != green_idx]
            matched = match_orders(eligible, len(grid_orders), self.rng)
            order_idx = self.rng.permutation(len(grid_orders))
            ds = demand / supply
            for slot, k in enumerate(matched):
                order = grid_orders[order_idx[slot]]
                sc = 0.0
                pay = order.fare
                if self.design.mode == MODE_SERVICE_CHARGE:
                    sc = service_charge(self.design.alpha, ds)
                    pay = driver_revenue(order.fare, sc)
                elif self.design.mode == MODE_FLAT_DEDUCTION and g in self.design.flat_grids:
                    pay = order.fare - self.design.alpha
                rewards[k] += pay
                self.stats.serviced.append((order.fare, sc))
                if g in scn.restricted and self.driver_class[ids[k]] == green_idx:
                    self.stats.green_restricted_pickups += 1
                arrival = t1 + scn.travel_steps(g, order.destination)
                self.busy_until[ids[k]] = arrival
                next_grid[k] = order.destination
                next_time[k] = arrival
            self.stats.fulfilled += len(matched)
            for slot in order_idx[len(matched):]:
                order = grid_orders[slot]
                self.stats.unserviced.append((order.origin, order.destination, order.passengers))
        for leftovers in orders_by_grid.values():
            for order in leftovers:
                self.stats.unserviced.append((order.origin, order.destination, order.passengers))

        self.loc[ids] = next_grid
        self.t = t1
        self.stats.cbd_counts.append(int(self._in_cbd[self.loc].sum()))
        self.stats.occupancy += np.bincount(self.loc, minlength=scn.n_grids)
        self.stats.reward_total += float(rewards.sum())

        batches = {}
        offset = 0
        terminal = next_time >= scn.horizon
        ratios = ratio_per_uniq[inv]
        for cls in sorted(idle):
            span = slice(offset, offset + len(idle[cls]))
            batches[cls] = ExperienceBatch(
                obs_grid=prev[span], obs_time=np.full(len(idle[cls]), t0, dtype=np.int64),
                action=acts[span], reward=rewards[span], mean_action=ratios[span],
                next_grid=next_grid[span], next_time=next_time[span],
                terminal=terminal[span],
            )
            offset += len(idle[cls])
        return batches, mam


def reset(scenario: Scenario, seed: int, design: RewardDesign | None = None,
          elasticity: float = ELASTICITY) -> Simulation:
    """Fresh episode: all drivers idle at t=0, placed per the scenario (or
    uniformly at random under the seed)."""
    return Simulation(scenario, design or RewardDesign(), np.random.default_rng(seed),
                      elasticity)


TRANSITION_COLUMNS = ("obs_grid", "obs_time", "action", "reward",
                      "mean_action", "next_grid", "next_time")


def write_transition_csv(path, batches) -> None:
    """Row-per-transition dump of an episode's experience batches."""
    with open(path, "w") as fh:
        fh.write(",".join(TRANSITION_COLUMNS) + "\n")
        for batch in batches:
            for i in range(len(batch)):
                fh.write(",".join([
                    str(int(batch.obs_grid[i])), str(int(batch.obs_time[i])),
                    str(int(batch.action[i])), f"{batch.reward[i]:.6g}",
                    f"{batch.mean_action[i]:.6g}", str(int(batch.next_grid[i])),
                    str(int(batch.next_time[i])),
                ]) + "\n")
