"""Trip-record and turnstile CSV ingestion.

Parsers are streaming and forgiving: malformed rows go to a rejection log
rather than aborting the run. Coordinates are projected equirectangularly
onto a square-cell grid; timestamps map onto fixed-length slices of the
study window.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, time

METERS_PER_DEG_LAT = 110_540.0
METERS_PER_DEG_LON = 111_320.0

TRIP_COLUMNS = ("pickup_datetime", "dropoff_datetime", "pickup_longitude",
                "pickup_latitude", "dropoff_longitude", "dropoff_latitude", "fare")
TURNSTILE_COLUMNS = ("turnstile_id", "date", "time", "entries", "exits")

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"
TURNSTILE_DATE_FORMAT = "%m/%d/%Y %H:%M:%S"

MAX_COUNTER_DIFF = 100_000  # larger per-turnstile jumps are treated as resets


@dataclass(frozen=True)
class TripRecord:
    pickup_time: datetime
    dropoff_time: datetime
    pickup_lon: float
    pickup_lat: float
    dropoff_lon: float
    dropoff_lat: float
    fare: float


@dataclass(frozen=True)
class GridSpec:
    """Square-cell grid anchored at its south-west corner."""
    origin_lon: float
    origin_lat: float
    cell_meters: float
    width: int
    height: int

    def cell_of(self, lon: float, lat: float) -> int | None:
        x = (lon - self.origin_lon) * METERS_PER_DEG_LON * math.cos(math.radians(self.origin_lat))
        y = (lat - self.origin_lat) * METERS_PER_DEG_LAT
        col = math.floor(x / self.cell_meters)
        row = math.floor(y / self.cell_meters)
        if 0 <= col < self.width and 0 <= row < self.height:
            return row * self.width + col
        return None


@dataclass(frozen=True)
class TimeSpec:
    window_start: str = "16:00"   # HH:MM, inclusive
    window_end: str = "20:00"     # HH:MM, exclusive
    slice_minutes: int = 3

    def __post_init__(self):
        if self.window_minutes % self.slice_minutes != 0:
            raise ValueError("window must divide evenly into slices")

    @property
    def start(self) -> time:
        return time.fromisoformat(self.window_start)

    @property
    def end(self) -> time:
        return time.fromisoformat(self.window_end)

    @property
    def window_minutes(self) -> int:
        s, e = time.fromisoformat(self.window_start), time.fromisoformat(self.window_end)
        return (e.hour - s.hour) * 60 + (e.minute - s.minute)

    @property
    def n_slices(self) -> int:
        return self.window_minutes // self.slice_minutes

    def slice_of(self, when: datetime) -> int | None:
        minutes = (when.hour - self.start.hour) * 60 + (when.minute - self.start.minute)
        if not self.start <= when.time() < self.end:
            return None
        return minutes // self.slice_minutes


@dataclass
class DemandTensor:
    """Aggregated demand per (origin cell, destination cell, time slice)."""
    counts: dict[tuple[int, int, int], int] = field(default_factory=dict)
    mean_fare: dict[tuple[int, int, int], float] = field(default_factory=dict)
    mean_travel_slices: dict[tuple[int, int, int], float] = field(default_factory=dict)
    dropped_out_of_area: int = 0
    dropped_out_of_window: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class TurnstileCounts:
    net_entries: dict[int, float] = field(default_factory=dict)
    net_exits: dict[int, float] = field(default_factory=dict)
    discarded_diffs: int = 0


def parse_trips(lines, columns=TRIP_COLUMNS):
    """Parse trip rows into (records, rejection log).

    The rejection log holds (row_number, reason) pairs; malformed rows are
    skipped, a missing header is fatal.
    """
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not set(columns) <= set(reader.fieldnames):
        raise ValueError(f"trip header must contain {columns}")
    pickup_c, dropoff_c, plon_c, plat_c, dlon_c, dlat_c, fare_c = columns
    records, rejects = [], []
    for i, row in enumerate(reader, start=2):
        try:
            rec = TripRecord(
                pickup_time=datetime.strptime(row[pickup_c].strip(), TIMESTAMP_FORMAT),
                dropoff_time=datetime.strptime(row[dropoff_c].strip(), TIMESTAMP_FORMAT),
                pickup_lon=float(row[plon_c]),
                pickup_lat=float(row[plat_c]),
                dropoff_lon=float(row[dlon_c]),
                dropoff_lat=float(row[dlat_c]),
                fare=float(row[fare_c]),
            )
        except (ValueError, TypeError, AttributeError) as err:
            rejects.append((i, f"unparseable row: {err}"))
            continue
        if rec.dropoff_time < rec.pickup_time:
            rejects.append((i, "dropoff before pickup"))
        elif rec.fare <= 0:
            rejects.append((i, "nonpositive fare"))
        else:
            records.append(rec)
    return records, rejects


def filter_weekday_peak(records, spec: TimeSpec):
    """Keep weekday records whose pickup falls inside the study window."""
    return [
        r for r in records
        if r.pickup_time.weekday() < 5 and spec.start <= r.pickup_time.time() < spec.end
    ]


def discretize(records, grid: GridSpec, spec: TimeSpec) -> DemandTensor:
    """Aggregate records into the demand tensor; out-of-area and
    out-of-window records are dropped with counters."""
    sums = {}
    tensor = DemandTensor()
    for rec in records:
        origin = grid.cell_of(rec.pickup_lon, rec.pickup_lat)
        destination = grid.cell_of(rec.dropoff_lon, rec.dropoff_lat)
        if origin is None or destination is None:
            tensor.dropped_out_of_area += 1
            continue
        t_slice = spec.slice_of(rec.pickup_time)
        if t_slice is None:
            tensor.dropped_out_of_window += 1
            continue
        minutes = (rec.dropoff_time - rec.pickup_time).total_seconds() / 60.0
        travel = max(1, math.ceil(minutes / spec.slice_minutes))
        key = (origin, destination, t_slice)
        count, fare_sum, travel_sum = sums.get(key, (0, 0.0, 0.0))
        sums[key] = (count + 1, fare_sum + rec.fare, travel_sum + travel)
    for key, (count, fare_sum, travel_sum) in sums.items():
        tensor.counts[key] = count
        tensor.mean_fare[key] = fare_sum / count
        tensor.mean_travel_slices[key] = travel_sum / count
    return tensor


def _parse_int(text: str) -> int:
    return int(str(text).replace(",", "").strip())


def parse_turnstile(lines, columns=TURNSTILE_COLUMNS, grid_of=None) -> TurnstileCounts:
    """Difference cumulative turnstile counters into per-grid net flows.

    Readings are grouped per turnstile id and sorted in time; consecutive
    diffs outside [0, MAX_COUNTER_DIFF] are treated as counter resets and
    discarded. Rows may carry an optional ``grid`` column, or ``grid_of``
    maps turnstile ids to grids; otherwise everything lands in grid 0.
    """
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not set(columns) <= set(reader.fieldnames):
        raise ValueError(f"turnstile header must contain {columns}")
    id_c, date_c, time_c, entries_c, exits_c = columns
    has_grid = "grid" in reader.fieldnames

    readings = {}
    for row in reader:
        stamp = datetime.strptime(f"{row[date_c].strip()} {row[time_c].strip()}",
                                  TURNSTILE_DATE_FORMAT)
        unit = row[id_c].strip()
        if has_grid:
            grid = int(row["grid"])
        elif grid_of is not None:
            grid = int(grid_of[unit])
        else:
            grid = 0
        readings.setdefault(unit, []).append(
            (stamp, _parse_int(row[entries_c]), _parse_int(row[exits_c]), grid))

    counts = TurnstileCounts()
    for series in readings.values():
        series.sort(key=lambda item: item[0])
        for (_, e0, x0, _), (_, e1, x1, grid) in zip(series, series[1:]):
            de, dx = e1 - e0, x1 - x0
            if not (0 <= de <= MAX_COUNTER_DIFF and 0 <= dx <= MAX_COUNTER_DIFF):
                counts.discarded_diffs += 1
                continue
            counts.net_entries[grid] = counts.net_entries.get(grid, 0.0) + de
            counts.net_exits[grid] = counts.net_exits.get(grid, 0.0) + dx
    return counts


def rates_from_tensor(tensor: DemandTensor, scale: float = 1.0,
                      episodes_observed: int = 1) -> list[dict]:
    """Scenario order-rate entries from a demand tensor.

    Each (origin, destination, slice) cell becomes a Poisson rate equal to
    its empirical per-episode mean times ``scale``. Slice indices shift by
    one so orders never appear at t=0 (drivers move first, then match).
    """
    rates = []
    for (o, d, t), count in sorted(tensor.counts.items()):
        rates.append({
            "origin": o, "destination": d, "t": t + 1,
            "rate": scale * count / max(1, episodes_observed),
            "fare": tensor.mean_fare[(o, d, t)],
        })
    return rates


def travel_times_from_tensor(tensor: DemandTensor) -> list[list[int]]:
    """Symmetric per-pair travel times (in slices) from the tensor means."""
    sums: dict[tuple[int, int], tuple[float, int]] = {}
    for (o, d, t), count in tensor.counts.items():
        key = (min(o, d), max(o, d))
        total, n = sums.get(key, (0.0, 0))
        sums[key] = (total + tensor.mean_travel_slices[(o, d, t)] * count, n + count)
    return [[a, b, max(1, round(total / n))] for (a, b), (total, n) in sorted(sums.items())]
