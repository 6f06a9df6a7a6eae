"""Reward-design schedules, demand elasticity, and system metrics.

Three designs modify a driver's monetary return:

* ``service_charge`` -- a commission fraction that rises linearly as a grid's
  demand-to-supply ratio drops below one, with slope parameter alpha.
* ``toll`` -- a flat charge on vacant repositioning moves that cross into the
  CBD; the passenger side of the toll shows up as thinned demand.
* ``flat_deduction`` -- a fixed amount removed from fares earned in selected
  grids (the simplest possible design, useful for tiny worked examples).

All metric functions are pure and operate on plain Python/numpy values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODE_NONE = "none"
MODE_SERVICE_CHARGE = "service_charge"
MODE_TOLL = "toll"
MODE_FLAT_DEDUCTION = "flat_deduction"

ELASTICITY = 0.22  # demand drop fraction per unit relative fare increase

SERVICE_CHARGE_DOMAIN = (0.0, 1.0)
TOLL_DOMAIN = (0.0, 10.0)


@dataclass(frozen=True)
class RewardDesign:
    """A reward modification with a single scalar knob ``alpha``.

    For service charge alpha is a fraction in [0, 1]; for toll it is a
    currency amount in [0, 10]; for flat deduction it is the per-order amount
    removed in ``flat_grids``.
    """

    mode: str = MODE_NONE
    alpha: float = 0.0
    flat_grids: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.mode not in (MODE_NONE, MODE_SERVICE_CHARGE, MODE_TOLL, MODE_FLAT_DEDUCTION):
            raise ValueError(f"unknown reward design mode {self.mode!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.mode == MODE_SERVICE_CHARGE and not (SERVICE_CHARGE_DOMAIN[0] <= self.alpha <= SERVICE_CHARGE_DOMAIN[1]):
            raise ValueError(f"service charge alpha must lie in {SERVICE_CHARGE_DOMAIN}")
        if self.mode == MODE_TOLL and not (TOLL_DOMAIN[0] <= self.alpha <= TOLL_DOMAIN[1]):
            raise ValueError(f"toll must lie in {TOLL_DOMAIN}")
        if self.mode == MODE_FLAT_DEDUCTION and not self.flat_grids:
            raise ValueError("flat_deduction requires at least one grid")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights and knobs of the composed system objective."""

    w: float = 3.0 / 5.0      # weight of the first component (ORR or PTC)
    m: int = 20               # top-grid count entering the crowdedness average
    elasticity: float = ELASTICITY
    exit_denominator: str = "exits"  # "exits", or "entries" to mirror a literal reading

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.exit_denominator not in ("exits", "entries"):
            raise ValueError("exit_denominator must be 'exits' or 'entries'")


@dataclass
class MetricsReport:
    orr: float = 0.0
    osc: float = 0.0
    ptc: float = 0.0
    ics: float = 0.0
    mean_reward: float = 0.0
    objective: float = 0.0
    alpha: float = 0.0
    occupancy: dict[int, float] | None = None   # per-grid time-averaged fleet share
    ics_detail: dict[int, float] | None = None  # per-grid crowdedness increase (top-m)

    def to_dict(self) -> dict:
        out = {
            "orr": self.orr,
            "osc": self.osc,
            "ptc": self.ptc,
            "ics": self.ics,
            "mean_reward": self.mean_reward,
            "objective": self.objective,
            "alpha": self.alpha,
        }
        if self.occupancy is not None:
            out["occupancy"] = {str(k): v for k, v in sorted(self.occupancy.items())}
        if self.ics_detail is not None:
            out["ics_detail"] = {str(k): v for k, v in sorted(self.ics_detail.items())}
        return out


def service_charge(alpha: float, ds: float) -> float:
    """Commission fraction at demand-to-supply ratio ``ds``: alpha*(1-ds) for
    ds below one, zero otherwise."""
    if ds < 0:
        raise ValueError("demand-to-supply ratio must be nonnegative")
    if ds > 1.0:
        return 0.0
    return alpha * (1.0 - ds)


def driver_revenue(fare: float, sc: float) -> float:
    """Driver's take of a fare under commission fraction ``sc``."""
    return fare * (1.0 - sc)


def toll_adjust(origin: int, destination: int, toll: float, cbd, occupied: bool = False) -> float:
    """Reward delta of one grid-to-grid transition under a CBD toll.

    Only vacant repositioning moves that cross from outside the CBD into it
    are charged; occupied trips pass the toll to passengers (handled by
    demand thinning), and moves within or out of the CBD are free.
    """
    if toll < 0:
        raise ValueError("toll must be nonnegative")
    if occupied:
        return 0.0
    if origin not in cbd and destination in cbd:
        return -toll
    return 0.0


def removal_probability(fare: float, toll: float, elasticity: float = ELASTICITY) -> float:
    return min(1.0, elasticity * toll / fare)


def thin_demand(orders, toll: float, cbd, rng, elasticity: float = ELASTICITY):
    """Split orders into (kept, removed) under toll-induced demand loss.

    An order whose trip enters the CBD (origin outside, destination inside)
    is removed independently with probability min(1, elasticity*toll/fare).
    """
    if toll < 0:
        raise ValueError("toll must be nonnegative")
    kept, removed = [], []
    for order in orders:
        enters = order.origin not in cbd and order.destination in cbd
        if enters and toll > 0 and rng.random() < removal_probability(order.fare, toll, elasticity):
            removed.append(order)
        else:
            kept.append(order)
    return kept, removed


def compute_orr(fulfilled: int, total: int) -> float:
    """Order response rate: fulfilled requests over total requests."""
    if total <= 0:
        raise ValueError("total order count must be positive")
    if not 0 <= fulfilled <= total:
        raise ValueError("fulfilled must lie in [0, total]")
    return fulfilled / total


def compute_osc(serviced) -> float:
    """Overall service charge: commission revenue over total serviced fare.

    ``serviced`` is an iterable of (fare, sc_fraction) pairs; an empty set
    yields zero by convention.
    """
    fare_sum = 0.0
    charge_sum = 0.0
    for fare, sc in serviced:
        if fare <= 0:
            raise ValueError("fares must be positive")
        fare_sum += fare
        charge_sum += sc * fare
    if fare_sum == 0.0:
        return 0.0
    return charge_sum / fare_sum


def compute_ptc(cbd_counts, fleet_total: int) -> float:
    """Time-averaged fraction of the fleet located inside the CBD."""
    counts = np.asarray(list(cbd_counts), dtype=float)
    if counts.size == 0:
        raise ValueError("need at least one per-step count")
    if fleet_total <= 0:
        raise ValueError("fleet size must be positive")
    if np.any(counts > fleet_total):
        raise ValueError("per-step CBD count exceeds fleet size")
    return float(counts.mean() / fleet_total)


def rank_crowded_grids(net_entries: dict, net_exits: dict, m: int) -> list[int]:
    """Top-m grids by baseline (net entries + net exits), busiest first."""
    grids = sorted(set(net_entries) | set(net_exits))
    if m > len(grids):
        raise ValueError(f"m={m} exceeds the {len(grids)} grids with subway counts")
    grids.sort(key=lambda g: (-(net_entries.get(g, 0.0) + net_exits.get(g, 0.0)), g))
    return grids[:m]


def ics_by_grid(unserviced, net_entries: dict, net_exits: dict, grids,
                exit_denominator: str = "exits") -> dict[int, float]:
    """Per-grid crowdedness increase for the given grids.

    ``unserviced`` is an iterable of (origin, destination, passengers). For a
    grid, the entry increase is unserviced passengers originating there over
    the grid's baseline net entries; the exit increase is unserviced
    passengers destined there over baseline net exits (or net entries when
    exit_denominator="entries"); the grid value is the mean of the two.
    """
    grids = list(grids)
    entry_load = {g: 0.0 for g in grids}
    exit_load = {g: 0.0 for g in grids}
    for origin, destination, passengers in unserviced:
        if origin in entry_load:
            entry_load[origin] += passengers
        if destination in exit_load:
            exit_load[destination] += passengers
    out = {}
    for g in grids:
        entries = net_entries.get(g, 0.0)
        exits = net_exits.get(g, 0.0) if exit_denominator == "exits" else entries
        if entries <= 0 or exits <= 0:
            raise ValueError(f"grid {g} has a nonpositive subway baseline")
        out[g] = 0.5 * (entry_load[g] / entries + exit_load[g] / exits)
    return out


def compute_ics(unserviced, net_entries: dict, net_exits: dict, m: int,
                exit_denominator: str = "exits") -> float:
    """Increase in subway crowdedness averaged over the top-m busiest grids."""
    top = rank_crowded_grids(net_entries, net_exits, m)
    per_grid = ics_by_grid(unserviced, net_entries, net_exits, top, exit_denominator)
    return float(np.mean([per_grid[g] for g in top]))


def objective(metrics: MetricsReport, config: ObjectiveConfig, mode: str) -> float:
    """Composed system objective for the given design mode.

    Service-charge mode trades order response against commission burden,
    w*ORR + (1-w)*(1-OSC); toll mode penalizes CBD taxi presence and subway
    crowding, -[w*PTC + (1-w)*ICS].
    """
    if mode in (MODE_SERVICE_CHARGE, MODE_FLAT_DEDUCTION, MODE_NONE):
        return config.w * metrics.orr + (1.0 - config.w) * (1.0 - metrics.osc)
    if mode == MODE_TOLL:
        return -(config.w * metrics.ptc + (1.0 - config.w) * metrics.ics)
    raise ValueError(f"unknown mode {mode!r}")
