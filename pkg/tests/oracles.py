"""Brute-force reference implementations used only by the tests."""
import heapq

import numpy as np

from cyclotraffic.core import RoadNetwork, TimeGrid, TrafficMatrix


def simple_paths(network, source, target):
    """Every simple path from ``source`` to ``target`` as a list of edge ids."""
    out = []

    def walk(u, seen, path):
        if u == target:
            out.append(list(path))
            return
        for e, v, _ in network.adjacency[u]:
            if v not in seen:
                seen.add(v)
                path.append(e)
                walk(v, seen, path)
                path.pop()
                seen.discard(v)

    walk(source, {source}, [])
    return out


def static_cost(network, weights, edges):
    total = 0.0
    for e in edges:
        total += float(weights[network.rows[e]])
    return total


def brute_dijkstra(network, weights, source, target):
    paths = simple_paths(network, source, target)
    if not paths:
        return None
    return min(static_cost(network, weights, p) for p in paths)


def walk_time(network, truth, edges, t0):
    g = truth.grid
    elapsed = 0.0
    for e in edges:
        t = t0 + elapsed
        l = int((t - g.start_epoch) // g.resolution)
        elapsed += float(truth.values[network.rows[e], l])
    return elapsed


def best_fixed_path(network, truth, source, target, t0):
    """Minimum realised time over all simple paths."""
    return min(walk_time(network, truth, p, t0) for p in simple_paths(network, source, target))


def clairvoyant_optimum(network, truth, source, target, t0):
    """Earliest arrival over all walks (revisits allowed) with frozen-at-entry weights.

    Best-first search over (elapsed, vertex) states; the first time the target
    is popped its elapsed time is minimal because every weight is positive.
    """
    g = truth.grid
    heap = [(0.0, source)]
    seen = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u == target:
            return d
        if (u, d) in seen:
            continue
        seen.add((u, d))
        l = int((t0 + d - g.start_epoch) // g.resolution)
        for e, v, r in network.adjacency[u]:
            heapq.heappush(heap, (d + float(truth.values[r, l]), v))
    return None


def random_instance(seed, max_nodes=8, n_intervals=400, res=10, fifo=False):
    """Strongly connected random digraph with integer time-varying weights."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, max_nodes + 1))
    order = rng.permutation(n)
    pairs = {(int(order[i]), int(order[(i + 1) % n])) for i in range(n)}
    for _ in range(int(rng.integers(0, 2 * n))):
        u, v = rng.integers(0, n, 2)
        if u != v:
            pairs.add((int(u), int(v)))
    pairs = sorted(pairs)
    m = len(pairs)
    net = RoadNetwork(n, np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]),
                      rng.permutation(m))
    if fifo:
        steps = rng.integers(0, 3, (m, n_intervals)).astype(float)
        vals = rng.integers(1, 20, (m, 1)) + np.cumsum(steps, axis=1)
    else:
        vals = rng.integers(1, 40, (m, n_intervals)).astype(float)
    return net, TrafficMatrix(TimeGrid(0, n_intervals, res), vals)
