"""Analytical equilibrium for the two-corner service-charge benchmark.

The benchmark world: 100 homogeneous drivers simultaneously pick one of two
order-bearing corner grids. The rich corner holds 50 requests at $10 each,
the lean corner 20 requests at $4.9. Matching is uniform-random within a
grid, so the expected per-driver return in a grid is (orders * net fare) /
drivers, capped at one order per driver. The platform skims a commission of
alpha * (1 - demand/supply) off fares in undersupplied grids, which shifts
the selfish equilibrium split.

Because drivers are atomic, the equilibrium is an integer allocation: the
smallest number k of lean-corner drivers such that nobody gains by
unilaterally switching corners. This module solves that allocation in closed
form and is used as ground truth for the learned policies and the upper-level
optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .rewards import ObjectiveConfig, service_charge

N_DRIVERS = 100
RICH_ORDERS = 50
RICH_FARE = 10.0
LEAN_ORDERS = 20
LEAN_FARE = 4.9
TOTAL_ORDERS = RICH_ORDERS + LEAN_ORDERS

_TIE = 1e-9  # switching must strictly beat staying to count as a deviation


@dataclass(frozen=True)
class AllocationResult:
    """Equilibrium split and the resulting platform metrics.

    k drivers choose the lean corner and N_DRIVERS - k the rich corner.
    return_lean / return_rich are expected per-driver payoffs; return_lean is
    NaN when the lean corner is empty.
    """

    alpha: float
    k: int
    return_lean: float
    return_rich: float
    orr: float
    osc: float
    objective: float


def lean_return(k: int) -> float:
    """Expected payoff of one of k drivers in the lean corner."""
    if k < 1:
        raise ValueError("lean corner payoff needs at least one driver")
    if k <= LEAN_ORDERS:
        return LEAN_FARE
    return LEAN_FARE * LEAN_ORDERS / k


def rich_return(k: int, alpha: float) -> float:
    """Expected payoff of a rich-corner driver when k drivers went lean."""
    n = N_DRIVERS - k
    if n < 1:
        raise ValueError("rich corner payoff needs at least one driver")
    ds = RICH_ORDERS / n
    sc = service_charge(alpha, ds)
    return RICH_FARE * (1.0 - sc) * min(1.0, ds)


def _stable(k: int, alpha: float) -> bool:
    here_rich = rich_return(k, alpha) if k < N_DRIVERS else None
    here_lean = lean_return(k) if k > 0 else None
    if here_rich is not None and lean_return(k + 1) > here_rich + _TIE:
        return False  # a rich-corner driver would defect to the lean corner
    if here_lean is not None and rich_return(k - 1, alpha) > here_lean + _TIE:
        return False  # a lean-corner driver would defect to the rich corner
    return True


def equilibrium_allocation(alpha: float, config: ObjectiveConfig | None = None) -> AllocationResult:
    """Smallest stable split of the 100 drivers for a given alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    config = config or ObjectiveConfig(w=3.0 / 5.0)
    for k in range(N_DRIVERS + 1):
        if _stable(k, alpha):
            return _describe(k, alpha, config)
    raise RuntimeError("no stable allocation found")  # pragma: no cover


def _describe(k: int, alpha: float, config: ObjectiveConfig) -> AllocationResult:
    n_rich = N_DRIVERS - k
    fulfilled_rich = min(RICH_ORDERS, n_rich)
    fulfilled_lean = min(LEAN_ORDERS, k)
    orr = (fulfilled_rich + fulfilled_lean) / TOTAL_ORDERS

    sc_rich = service_charge(alpha, RICH_ORDERS / n_rich) if n_rich else 0.0
    sc_lean = service_charge(alpha, LEAN_ORDERS / k) if k else 0.0
    fare_total = fulfilled_rich * RICH_FARE + fulfilled_lean * LEAN_FARE
    charge_total = fulfilled_rich * RICH_FARE * sc_rich + fulfilled_lean * LEAN_FARE * sc_lean
    osc = charge_total / fare_total if fare_total else 0.0

    f = config.w * orr + (1.0 - config.w) * (1.0 - osc)
    return AllocationResult(
        alpha=alpha,
        k=k,
        return_lean=lean_return(k) if k else math.nan,
        return_rich=rich_return(k, alpha) if n_rich else math.nan,
        orr=orr,
        osc=osc,
        objective=f,
    )


def critical_alpha(k: int) -> float:
    """Alpha at which the k-th driver becomes indifferent between corners.

    Solves rich_return(k, alpha) = LEAN_FARE for 1 <= k <= LEAN_ORDERS, i.e.
    the commission level that makes the lean corner competitive for exactly
    k drivers.
    """
    if not 1 <= k <= LEAN_ORDERS:
        raise ValueError(f"k must lie in [1, {LEAN_ORDERS}]")
    n = N_DRIVERS - k
    ds = RICH_ORDERS / n
    return (1.0 - LEAN_FARE * n / (RICH_FARE * RICH_ORDERS)) / (1.0 - ds)


def binomial_pmf(n: int, k: int, p: float) -> float:
    """Binomial probability mass computed in log space."""
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0:
        return 1.0 if k == 0 else 0.0
    if p == 1.0:
        return 1.0 if k == n else 0.0
    log_comb = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    return math.exp(log_comb + k * math.log(p) + (n - k) * math.log1p(-p))


def values_of_interest(alphas, config: ObjectiveConfig | None = None) -> list[dict]:
    """Equilibrium table rows (one per alpha) for the benchmark world."""
    config = config or ObjectiveConfig(w=3.0 / 5.0)
    rows = []
    for alpha in alphas:
        r = equilibrium_allocation(alpha, config)
        rows.append({
            "alpha": alpha,
            "k_lean": r.k,
            "ds_lean": LEAN_ORDERS / r.k if r.k else math.nan,
            "ds_rich": RICH_ORDERS / (N_DRIVERS - r.k),
            "orr": r.orr,
            "osc": r.osc,
            "objective": r.objective,
        })
    return rows
