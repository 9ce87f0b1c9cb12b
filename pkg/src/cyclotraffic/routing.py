"""Static and time-dependent shortest paths, greedy re-routing and realised
travel times under frozen-at-entry weights."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .core import ODQuery, RoadNetwork, TrafficMatrix
from .errors import CycleGuard, HorizonExceeded, MissingValue, Unreachable
from .predictors import LagPredictor, Predictor

DEFAULT_GUARD_FACTOR = 4


@dataclass(frozen=True)
class RouteResult:
    edges: tuple
    entry_times: tuple
    realized_total: float
    reroute_count: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def hops(self) -> int:
        return len(self.edges)


def dijkstra(network: RoadNetwork, weights, source: int, target: int):
    """Minimum-cost path under a static weight vector indexed by segment row.

    Among equal-cost predecessors the smallest edge id wins, so the result does
    not depend on heap order. Returns ``(edge list, cost)``.
    """
    if source == target:
        return [], 0.0
    if isinstance(weights, np.ndarray):
        weights = weights.tolist()
    adj = network.adjacency
    inf = float("inf")
    dist = {source: 0.0}
    pred = {}
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == target:
            break
        done.add(u)
        for e, v, r in adj[u]:
            if v in done:
                continue
            nd = d + weights[r]
            old = dist.get(v, inf)
            if nd < old:
                dist[v] = nd
                pred[v] = e
                heapq.heappush(heap, (nd, v))
            elif nd == old and e < pred[v]:
                pred[v] = e
    if target not in dist:
        raise Unreachable(f"vertex {target} unreachable from {source}")
    tails = network.tails
    path = []
    v = target
    while v != source:
        e = pred[v]
        path.append(e)
        v = int(tails[e])
    path.reverse()
    return path, dist[target]


def path_cost(network: RoadNetwork, weights, edges) -> float:
    total = 0.0
    for e in edges:
        total += float(weights[network.rows[e]])
    return total


def realized_time(network: RoadNetwork, truth: TrafficMatrix, edges, t_start):
    """Travel time of a fixed walk: each edge costs its true weight at entry.

    Entry times follow ``t_i = t_start + sum(previous weights)``. Returns
    ``(total seconds, entry times)``.
    """
    grid = truth.grid
    values = truth.values
    mask = truth.mask
    rows = network.rows
    elapsed = 0.0
    entries = []
    for e in edges:
        t = t_start + elapsed
        if not grid.start_epoch <= t < grid.end_epoch:
            raise HorizonExceeded(f"edge {e} entered at t={t}, beyond the grid")
        l = int((t - grid.start_epoch) // grid.resolution)
        r = rows[e]
        if not mask[r, l]:
            raise MissingValue(f"segment {r} unobserved at interval {l}")
        entries.append(t)
        elapsed += float(values[r, l])
    return elapsed, entries


def greedy_reroute(network: RoadNetwork, predictor: Predictor, truth: TrafficMatrix,
                   query: ODQuery, guard_factor: int = DEFAULT_GUARD_FACTOR) -> RouteResult:
    """Re-plan at every reached vertex with fresh predictions, commit one edge,
    advance by that edge's true travel time, repeat until the destination."""
    grid = truth.grid
    values = truth.values
    rows = network.rows
    heads = network.heads
    limit = guard_factor * max(network.n_edges, 1)
    u, dest = query.origin, query.destination
    elapsed = 0.0
    edges, entries = [], []
    calls = 0
    last_key = object()
    weights = None
    while u != dest:
        t = query.t_start + elapsed
        if not grid.start_epoch <= t < grid.end_epoch:
            raise HorizonExceeded(f"t={t} past grid end after {len(edges)} edges")
        key = predictor.cache_key(t, truth)
        if key != last_key or key is None:
            weights = predictor.predict_weights(t, truth).tolist()
            last_key = key
        path, _ = dijkstra(network, weights, u, dest)
        calls += 1
        e = path[0]
        l = int((t - grid.start_epoch) // grid.resolution)
        r = rows[e]
        if not truth.mask[r, l]:
            raise MissingValue(f"segment {r} unobserved at interval {l}")
        edges.append(e)
        entries.append(t)
        elapsed += float(values[r, l])
        u = int(heads[e])
        if len(edges) > limit:
            raise CycleGuard(f"committed {len(edges)} edges (> {limit}) without arriving")
    return RouteResult(tuple(edges), tuple(entries), elapsed, calls,
                       {"predictor": getattr(predictor, "name", "?")})


def realtime_benchmark(network: RoadNetwork, truth: TrafficMatrix, query: ODQuery,
                       guard_factor: int = DEFAULT_GUARD_FACTOR) -> RouteResult:
    """Greedy re-routing with the true current weights at every decision."""
    return greedy_reroute(network, LagPredictor(0, "realtime"), truth, query, guard_factor)


def fifo_violations(truth: TrafficMatrix, first: int, last: int, rows=None) -> np.ndarray:
    """Rows whose piecewise-constant weights break FIFO on intervals ``first..last``.

    With frozen-at-entry weights, entering in interval ``l`` and in a later
    interval ``j`` keeps the order iff ``w_l <= w_j + (j - l - 1) * res``.
    """
    res = truth.grid.resolution
    w = np.asarray(truth.values[:, first:last + 1] if rows is None
                   else truth.values[rows, first:last + 1])
    if w.shape[1] < 2:
        return np.zeros(0, dtype=np.int64)
    v = w + res * np.arange(w.shape[1])
    suffix = np.minimum.accumulate(v[:, ::-1], axis=1)[:, ::-1]
    later_min = suffix[:, 1:]
    bad = np.any(v[:, :-1] + res > later_min, axis=1)
    idx = np.flatnonzero(bad)
    return idx if rows is None else np.asarray(rows)[idx]


def static_oracle(network: RoadNetwork, truth: TrafficMatrix, query: ODQuery) -> RouteResult:
    """Best fixed path under full knowledge of realised weights.

    Time-dependent label setting on earliest arrival. The answer is exact when
    the weights obey FIFO over the explored time window; ``meta["fifo"]``
    records whether they did.
    """
    grid = truth.grid
    values = truth.values
    mask = truth.mask
    adj = network.adjacency
    t0 = query.t_start
    src, dst = query.origin, query.destination
    inf = float("inf")
    dist = {src: 0.0}
    pred = {}
    done = set()
    heap = [(0.0, src)]
    horizon_hit = False
    max_label = 0.0
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == dst:
            break
        done.add(u)
        max_label = d
        t = t0 + d
        if not grid.start_epoch <= t < grid.end_epoch:
            horizon_hit = True
            continue
        l = int((t - grid.start_epoch) // grid.resolution)
        for e, v, r in adj[u]:
            if v in done:
                continue
            if not mask[r, l]:
                raise MissingValue(f"segment {r} unobserved at interval {l}")
            nd = d + float(values[r, l])
            old = dist.get(v, inf)
            if nd < old:
                dist[v] = nd
                pred[v] = e
                heapq.heappush(heap, (nd, v))
            elif nd == old and e < pred[v]:
                pred[v] = e
    if dst not in dist or dst not in pred:
        if horizon_hit:
            raise HorizonExceeded("destination not reachable within the grid")
        raise Unreachable(f"vertex {dst} unreachable from {src}")
    path = []
    v = dst
    while v != src:
        e = pred[v]
        path.append(e)
        v = int(network.tails[e])
    path.reverse()
    total, entries = realized_time(network, truth, path, t0)
    first = int((t0 - grid.start_epoch) // grid.resolution)
    last = min(int((t0 + max(max_label, total) - grid.start_epoch) // grid.resolution),
               grid.n_intervals - 1)
    fifo = len(fifo_violations(truth, first, last)) == 0
    return RouteResult(tuple(path), tuple(entries), total, 1,
                       {"predictor": "static_oracle", "fifo": fifo, "exact": fifo})


def hop_distance(network: RoadNetwork, source: int, target: int) -> int:
    """Unweighted shortest-path hop count (BFS)."""
    if source == target:
        return 0
    seen = {source}
    frontier = [source]
    hops = 0
    adj = network.adjacency
    while frontier:
        hops += 1
        nxt = []
        for u in frontier:
            for _, v, _ in adj[u]:
                if v == target:
                    return hops
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    raise Unreachable(f"vertex {target} unreachable from {source}")
