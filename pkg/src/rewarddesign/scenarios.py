"""Preset scenario configurations.

Grid numbering is row-major with row 0 at the top, so on the 2x2 board the
corners are 0 (top-left), 1 (top-right), 2 (bottom-left), 3 (bottom-right).

Presets return plain config dicts (JSON-compatible) consumed by
``env.build_scenario``; tweak fields before building to derive variants.
"""

from __future__ import annotations

from .env import Scenario, build_scenario

TWO_BY_TWO_RICH = 3   # bottom-right corner: 50 requests at $10
TWO_BY_TWO_LEAN = 0   # top-left corner: 20 requests at $4.9


def service_charge_2x2_config() -> dict:
    """The two-corner benchmark: 100 drivers, 70 deterministic requests.

    Fifty drivers start in each of the two order-free corners at t=0; at t=1
    the rich corner spawns 50 requests at $10 and the lean corner 20 at $4.9.
    """
    return {
        "width": 2,
        "height": 2,
        "horizon": 2,
        "fleet": {"yellow": 100},
        "placement": {"yellow": {1: 50, 2: 50}},
        "orders": [
            {"origin": TWO_BY_TWO_RICH, "destination": 1, "t": 1, "fare": 10.0, "count": 50},
            {"origin": TWO_BY_TWO_LEAN, "destination": 2, "t": 1, "fare": 4.9, "count": 20},
        ],
    }


def two_driver_2x2_config() -> dict:
    """Two drivers, two requests: a $7 request in the rich corner and a $3
    request in the lean corner, both at t=1."""
    return {
        "width": 2,
        "height": 2,
        "horizon": 2,
        "fleet": {"yellow": 2},
        "placement": {"yellow": {1: 1, 2: 1}},
        "orders": [
            {"origin": TWO_BY_TWO_RICH, "destination": 1, "t": 1, "fare": 7.0},
            {"origin": TWO_BY_TWO_LEAN, "destination": 2, "t": 1, "fare": 3.0},
        ],
    }


def synthetic_city_config(width: int = 10, height: int = 10, horizon: int = 20,
                          yellow: int = 150, green: int = 50,
                          demand_scale: float = 1.0) -> dict:
    """A scaled-down two-class tolling city.

    The central business district is the middle 4x4 block, demand-rich and
    subway-rich; two airport-like hotspots sit near the east edge. Green
    drivers may not pick up inside the restricted area (the CBD plus the two
    airports). Orders are Poisson-sampled each episode; roughly a third of
    trips originating outside the CBD end inside it, so they are exposed to
    toll-driven demand thinning.
    """
    n = width * height
    cbd = [r * width + c for r in range(3, 7) for c in range(3, 7)]
    airports = [1 * width + (width - 2), (height - 2) * width + (width - 2)]
    restricted = sorted(set(cbd) | set(airports))
    cbd_set = set(cbd)

    def fare(o, d):
        r1, c1 = divmod(o, width)
        r2, c2 = divmod(d, width)
        return round(4.0 + 1.5 * (abs(r1 - r2) + abs(c1 - c2)), 2)

    center = (height // 2) * width + width // 2
    outer = 1 * width + 1
    rates = []
    for g in range(n):
        row, col = divmod(g, width)
        if g in cbd_set:
            base = 0.55
        elif g in airports:
            base = 0.50
        else:
            base = 0.04
        # trips out of the CBD head outward; a share of outside trips heads in
        dest_in = center if g != center else center + 1
        dest_out = outer if g != outer else outer + 1
        for t in range(1, horizon + 1):
            if g in cbd_set:
                rates.append({"origin": g, "destination": dest_out, "t": t,
                              "rate": base * demand_scale, "fare": fare(g, dest_out)})
            else:
                rates.append({"origin": g, "destination": dest_in, "t": t,
                              "rate": base * 0.4 * demand_scale, "fare": fare(g, dest_in)})
                rates.append({"origin": g, "destination": dest_out, "t": t,
                              "rate": base * 0.6 * demand_scale, "fare": fare(g, dest_out)})

    subway_entries, subway_exits = {}, {}
    for g in range(n):
        if g in cbd_set:
            subway_entries[g] = 400.0
            subway_exits[g] = 380.0
        elif g in airports:
            subway_entries[g] = 220.0
            subway_exits[g] = 210.0
        else:
            subway_entries[g] = 80.0
            subway_exits[g] = 75.0

    return {
        "width": width,
        "height": height,
        "horizon": horizon,
        "fleet": {"yellow": yellow, "green": green},
        "cbd": cbd,
        "restricted": restricted,
        "order_rates": rates,
        "boundary_penalty": -100.0,
        "subway_entries": subway_entries,
        "subway_exits": subway_exits,
    }


PRESETS = {
    "service-charge-2x2": service_charge_2x2_config,
    "two-driver-2x2": two_driver_2x2_config,
    "synthetic-city": synthetic_city_config,
}


def preset_scenario(name: str, **kwargs) -> Scenario:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return build_scenario(PRESETS[name](**kwargs))
