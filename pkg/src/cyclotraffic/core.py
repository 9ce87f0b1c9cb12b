"""Domain types: time grid, traffic matrix, road network and routing queries."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, MissingValue, OutOfRange

DAY = 86400
WEEK = 7 * DAY


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Fixed-resolution time axis; interval ``l`` covers ``[start + l*res, start + (l+1)*res)``."""

    start_epoch: int
    n_intervals: int
    resolution: int = 600

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.n_intervals <= 0:
            raise ValueError("n_intervals must be positive")

    @property
    def end_epoch(self) -> int:
        return self.start_epoch + self.n_intervals * self.resolution

    def contains(self, t) -> bool:
        return self.start_epoch <= t < self.end_epoch

    def slot_time(self, l: int) -> int:
        return self.start_epoch + l * self.resolution

    def slot_times(self) -> np.ndarray:
        return self.start_epoch + self.resolution * np.arange(self.n_intervals, dtype=np.int64)

    def sub(self, first: int, count: int) -> TimeGrid:
        """Grid covering intervals ``first .. first+count-1`` of this one."""
        if first < 0 or count <= 0 or first + count > self.n_intervals:
            raise OutOfRange(f"sub-grid [{first}, {first + count}) outside 0..{self.n_intervals}")
        return TimeGrid(self.slot_time(first), count, self.resolution)


def interval_index(grid: TimeGrid, t) -> int:
    """Index of the half-open interval containing ``t``."""
    if not grid.contains(t):
        raise OutOfRange(f"t={t} outside grid [{grid.start_epoch}, {grid.end_epoch})")
    return int((t - grid.start_epoch) // grid.resolution)


@dataclass(frozen=True, eq=False)
class TrafficMatrix:
    """Segment travel times (seconds), rows = segments, columns = grid intervals.

    ``mask`` is True where a value was observed. Arrays are stored read-only.
    """

    grid: TimeGrid
    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        values = _readonly(self.values, np.float64)
        if values.ndim != 2:
            raise DimensionMismatch("values must be 2-D")
        mask = np.ones(values.shape, bool) if self.mask is None else self.mask
        mask = _readonly(mask, bool)
        if mask.shape != values.shape:
            raise DimensionMismatch(f"mask shape {mask.shape} != values shape {values.shape}")
        if values.shape[1] != self.grid.n_intervals:
            raise DimensionMismatch(
                f"matrix has {values.shape[1]} columns, grid has {self.grid.n_intervals}")
        obs = values[mask]
        if not np.all(np.isfinite(obs)) or np.any(obs <= 0):
            raise ValueError("observed travel times must be finite and positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())

    def column(self, l: int) -> np.ndarray:
        return self.values[:, l]

    def columns(self, first: int, count: int) -> TrafficMatrix:
        grid = self.grid.sub(first, count)
        return TrafficMatrix(grid, self.values[:, first:first + count],
                             self.mask[:, first:first + count])

    def rows(self, idx) -> TrafficMatrix:
        idx = np.asarray(idx, dtype=np.int64)
        return TrafficMatrix(self.grid, self.values[idx], self.mask[idx])

    def with_data(self, values, mask=None) -> TrafficMatrix:
        return TrafficMatrix(self.grid, values, self.mask if mask is None else mask)

    def filled(self, fill=np.nan) -> np.ndarray:
        """Writable copy of the values with unobserved cells set to ``fill``."""
        out = np.array(self.values, copy=True)
        out[~self.mask] = fill
        return out


def weight_at(matrix: TrafficMatrix, edge_row: int, t) -> float:
    """Travel time of segment ``edge_row`` for a vehicle entering at ``t``."""
    l = interval_index(matrix.grid, t)
    if not matrix.mask[edge_row, l]:
        raise MissingValue(f"segment {edge_row} unobserved at interval {l}")
    return float(matrix.values[edge_row, l])


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    """Directed graph of junctions; edge ``i`` has tail ``tails[i]``, head ``heads[i]``
    and reads its weight from matrix row ``rows[i]``."""

    n_vertices: int
    tails: np.ndarray
    heads: np.ndarray
    rows: np.ndarray = None

    def __post_init__(self):
        tails = _readonly(self.tails, np.int64)
        heads = _readonly(self.heads, np.int64)
        rows = np.arange(len(tails)) if self.rows is None else self.rows
        rows = _readonly(rows, np.int64)
        if not (tails.shape == heads.shape == rows.shape) or tails.ndim != 1:
            raise DimensionMismatch("tails, heads and rows must be equal-length vectors")
        if len(tails) and (min(tails.min(), heads.min()) < 0
                           or max(tails.max(), heads.max()) >= self.n_vertices):
            raise ValueError("edge endpoint outside vertex range")
        if np.any(tails == heads):
            raise ValueError("self-loops are not allowed")
        if not np.array_equal(np.sort(rows), np.arange(len(rows))):
            raise ValueError("segment rows must be a bijection onto 0..m-1")
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "rows", rows)

    @property
    def n_edges(self) -> int:
        return len(self.tails)

    @cached_property
    def out_edges(self) -> tuple[tuple[int, ...], ...]:
        """Outgoing edge ids per vertex, ascending."""
        buckets = [[] for _ in range(self.n_vertices)]
        for e, u in enumerate(self.tails.tolist()):
            buckets[u].append(e)
        return tuple(tuple(b) for b in buckets)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int, int], ...], ...]:
        """Per vertex: ``(edge_id, head, row)`` triples, ascending by edge id."""
        heads = self.heads.tolist()
        rows = self.rows.tolist()
        return tuple(tuple((e, heads[e], rows[e]) for e in out) for out in self.out_edges)

    def edge_list(self):
        return list(zip(range(self.n_edges), self.tails.tolist(), self.heads.tolist(),
                        self.rows.tolist()))

    def to_networkx(self):
        import networkx as nx

        g = nx.MultiDiGraph()
        g.add_nodes_from(range(self.n_vertices))
        for e, u, v, r in self.edge_list():
            g.add_edge(u, v, key=e, row=r)
        return g


@dataclass(frozen=True)
class ODQuery:
    origin: int
    destination: int
    t_start: int

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("origin and destination must differ")


def check_query(query: ODQuery, network: RoadNetwork, grid: TimeGrid, horizon: int = 0):
    """Validate a query against a network and a grid with ``horizon`` seconds of margin."""
    for v in (query.origin, query.destination):
        if not 0 <= v < network.n_vertices:
            raise ValueError(f"vertex {v} not in network")
    if not (grid.start_epoch <= query.t_start < grid.end_epoch - horizon):
        raise OutOfRange(f"t_start={query.t_start} not within grid coverage minus {horizon}s")
