"""Regret statistics, community-based test-set construction and the evaluation
harness that compares predictors against real-time greedy routing."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DAY, ODQuery, RoadNetwork, TrafficMatrix
from .errors import CycloTrafficError, NoEligiblePairs
from .predictors import Predictor, StaticOracle
from .routing import greedy_reroute, hop_distance, realtime_benchmark, static_oracle
from .synthgen import rng_stream

DEFAULT_ALPHAS = (0.10, 0.01)


def regret(t_pred: float, t_rt: float) -> float:
    return t_pred - t_rt


def upper_quantile(samples, alpha: float) -> float:
    """Smallest sample value ``y`` with empirical ``Pr(R > y) <= alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("no samples")
    n = len(x)
    support = np.unique(x)
    exceed = (n - np.searchsorted(x, support, side="right")) / n
    return float(support[np.argmax(exceed <= alpha)])


@dataclass(frozen=True, eq=False)
class CCDF:
    """Empirical ``Pr(R > y)`` evaluated on the sorted unique support."""

    support: np.ndarray
    exceedance: np.ndarray
    n: int

    def at(self, y) -> float:
        # exceedance is right-continuous and constant between support points
        i = np.searchsorted(self.support, y, side="right")
        if i == 0:
            return 1.0
        return float(self.exceedance[i - 1])

    def quantile(self, alpha: float) -> float:
        return float(self.support[np.argmax(self.exceedance <= alpha)])

    def loglog_rows(self):
        """``(y, Pr(R > y))`` rows with both coordinates positive, for log-log plots."""
        sel = (self.support > 0) & (self.exceedance > 0)
        return list(zip(self.support[sel].tolist(), self.exceedance[sel].tolist()))


def ccdf(samples) -> CCDF:
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("no samples")
    support = np.unique(x)
    exceed = (len(x) - np.searchsorted(x, support, side="right")) / len(x)
    return CCDF(support, exceed, len(x))


@dataclass(frozen=True)
class RegretStats:
    count: int
    mean: float
    quantiles: dict
    curve: CCDF = field(repr=False, compare=False, default=None)

    @classmethod
    def from_samples(cls, samples, alphas=DEFAULT_ALPHAS) -> RegretStats:
        x = np.asarray(samples, dtype=np.float64)
        if len(x) == 0:
            return cls(0, math.nan, {a: math.nan for a in alphas}, None)
        curve = ccdf(x)
        return cls(len(x), float(np.mean(x)), {a: curve.quantile(a) for a in alphas}, curve)

    def as_dict(self, scale: float = 1.0):
        return {"count": self.count, "mean": self.mean / scale,
                "quantiles": {f"{a:g}": q / scale for a, q in self.quantiles.items()}}


# ---------------------------------------------------------------- communities

def undirected_projection(network: RoadNetwork) -> list[dict]:
    """Simple undirected graph with unit weight per adjacent vertex pair."""
    adj = [dict() for _ in range(network.n_vertices)]
    for _, u, v, _ in network.edge_list():
        adj[u][v] = 1.0
        adj[v][u] = 1.0
    return adj


def modularity(adj: list[dict], partition) -> float:
    """Newman modularity of ``partition`` on a weighted undirected adjacency list.

    ``adj[i][j]`` is the weight of edge ``{i, j}``; a self-loop weight counts
    twice in the strength of its vertex, as in the usual convention.
    """
    strength = np.array([sum(w * (2 if j == i else 1) for j, w in nb.items())
                         for i, nb in enumerate(adj)])
    two_m = strength.sum()
    if two_m == 0:
        return 0.0
    internal = defaultdict(float)
    totals = defaultdict(float)
    for i, nb in enumerate(adj):
        ci = partition[i]
        totals[ci] += strength[i]
        for j, w in nb.items():
            if partition[j] == ci:
                internal[ci] += w * (2 if j == i else 1)
    return float(sum(internal[c] / two_m - (totals[c] / two_m) ** 2 for c in totals))


def _one_level(adj, rng):
    n = len(adj)
    strength = [sum(w * (2 if j == i else 1) for j, w in nb.items()) for i, nb in enumerate(adj)]
    two_m = float(sum(strength))
    comm = list(range(n))
    tot = list(strength)
    order = rng.permutation(n).tolist()
    moved_any = False
    improved = True
    while improved:
        improved = False
        for i in order:
            ci = comm[i]
            ki = strength[i]
            links = defaultdict(float)
            for j, w in adj[i].items():
                if j != i:
                    links[comm[j]] += w
            tot[ci] -= ki
            best, best_gain = ci, links.get(ci, 0.0) - tot[ci] * ki / two_m
            for c in sorted(links):
                gain = links[c] - tot[c] * ki / two_m
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            tot[best] += ki
            if best != ci:
                comm[i] = best
                improved = True
                moved_any = True
    labels = {c: k for k, c in enumerate(sorted(set(comm)))}
    return [labels[c] for c in comm], moved_any


def _aggregate(adj, comm):
    k = max(comm) + 1
    new = [defaultdict(float) for _ in range(k)]
    for i, nb in enumerate(adj):
        for j, w in nb.items():
            # each undirected edge appears twice (i->j, j->i); self-loops once
            if j == i:
                new[comm[i]][comm[i]] += w
            elif comm[i] == comm[j]:
                new[comm[i]][comm[i]] += w / 2
            else:
                new[comm[i]][comm[j]] += w
    return [dict(d) for d in new]


def louvain(adj: list[dict], seed: int = 0):
    """Louvain community detection. Returns ``(labels, modularity per level)``."""
    rng = np.random.Generator(np.random.Philox(seed))
    labels = list(range(len(adj)))
    history = [modularity(adj, labels)]
    level_adj = adj
    while True:
        comm, moved = _one_level(level_adj, rng)
        if not moved:
            break
        labels = [comm[c] for c in labels]
        history.append(modularity(adj, labels))
        level_adj = _aggregate(level_adj, comm)
    return labels, history


@dataclass(frozen=True)
class Communities:
    labels: tuple          # community id per vertex
    modularity: float
    history: tuple         # modularity after each Louvain level
    inner: frozenset = frozenset()

    @property
    def count(self) -> int:
        return len(set(self.labels))

    def members(self, c) -> list[int]:
        return [v for v, lab in enumerate(self.labels) if lab == c]


def detect_communities(network: RoadNetwork, seed: int = 0) -> Communities:
    adj = undirected_projection(network)
    labels, history = louvain(adj, seed)
    return Communities(tuple(labels), history[-1], tuple(history))


def label_inner_outer(network: RoadNetwork, comms: Communities, seed: int = 0,
                      samples: int = 64) -> Communities:
    """Mark the more central half of the communities as inner.

    Centrality is the mean sampled betweenness of member vertices; ties are
    broken by community id.
    """
    import networkx as nx

    g = nx.DiGraph()
    g.add_nodes_from(range(network.n_vertices))
    g.add_edges_from(zip(network.tails.tolist(), network.heads.tolist()))
    k = min(samples, network.n_vertices)
    bc = nx.betweenness_centrality(g, k=k, seed=seed)
    ids = sorted(set(comms.labels))
    score = {c: float(np.mean([bc[v] for v in comms.members(c)])) for c in ids}
    ranked = sorted(ids, key=lambda c: (-score[c], c))
    inner = frozenset(ranked[:max(1, len(ids) // 2)])
    return Communities(comms.labels, comms.modularity, comms.history, inner)


# ------------------------------------------------------------------- test set

@dataclass(frozen=True)
class TestSetSpec:
    __test__ = False  # not a pytest test class

    days: tuple = ()                        # absolute day indices (day 0 starts at epoch 0)
    hours: tuple = tuple(range(6, 19))      # 06:00 .. 18:00, 13 departures per day
    min_travel_time: float = 1800.0
    rest_days: tuple = (5, 6)               # day-of-week values treated as non-workdays
    max_queries: int | None = None          # optional seeded subsample of the candidate grid
    seed: int = 0


@dataclass(frozen=True)
class TestQuery:
    __test__ = False

    query: ODQuery
    keys: dict
    hop_length: int
    t_rt: float | None = None


def partition_keys(t_start: int, direction: str, rest_days=(5, 6)) -> dict:
    day = int(t_start // DAY)
    dow = day % 7
    return {"hour": int((t_start % DAY) // 3600), "day_of_week": dow,
            "workday": dow not in rest_days, "direction": direction}


def od_pairs(comms: Communities, seed: int = 0):
    """One sampled (origin, destination, direction) per ordered inner/outer community pair."""
    rng = rng_stream(seed, "odsample")
    ids = sorted(set(comms.labels))
    inner = [c for c in ids if c in comms.inner]
    outer = [c for c in ids if c not in comms.inner]
    pairs = []
    for ci in inner:
        for co in outer:
            for a, b, direction in ((ci, co, "inner_to_outer"), (co, ci, "outer_to_inner")):
                ma, mb = comms.members(a), comms.members(b)
                pairs.append((ma[rng.integers(len(ma))], mb[rng.integers(len(mb))], direction))
    return pairs


def build_test_set(network: RoadNetwork, comms: Communities, spec: TestSetSpec,
                   truth: TrafficMatrix, report: dict | None = None) -> list[TestQuery]:
    """Expand OD pairs over departure times and keep trips whose real-time
    travel time reaches ``spec.min_travel_time``."""
    if len(set(comms.labels)) < 2 or not comms.inner:
        raise NoEligiblePairs("need at least two communities with inner/outer labels")
    pairs = od_pairs(comms, spec.seed)
    candidates = [(o, d, direction, day * DAY + h * 3600)
                  for (o, d, direction) in pairs for day in spec.days for h in spec.hours]
    if spec.max_queries is not None and len(candidates) > spec.max_queries:
        rng = rng_stream(spec.seed, "testsubsample")
        pick = np.sort(rng.choice(len(candidates), spec.max_queries, replace=False))
        candidates = [candidates[i] for i in pick.tolist()]
    hops = {}
    out = []
    failed = short = 0
    for o, d, direction, t in candidates:
        q = ODQuery(o, d, t)
        try:
            rt = realtime_benchmark(network, truth, q)
        except CycloTrafficError:
            failed += 1
            continue
        if rt.realized_total < spec.min_travel_time:
            short += 1
            continue
        if (o, d) not in hops:
            hops[(o, d)] = hop_distance(network, o, d)
        out.append(TestQuery(q, partition_keys(t, direction, spec.rest_days), hops[(o, d)],
                             rt.realized_total))
    if report is not None:
        report.update(od_pairs=len(pairs), candidates=len(candidates), failed=failed,
                      too_short=short, kept=len(out))
    if not out:
        raise NoEligiblePairs("no query survived the travel-time filter")
    return out


# ----------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class RegretSample:
    index: int
    query: ODQuery
    predictor: str
    t_pred: float
    t_rt: float
    regret: float
    hop_length: int
    keys: dict


@dataclass
class SuiteResult:
    samples: list
    stats: dict                 # predictor -> RegretStats
    partitions: dict            # predictor -> key -> value -> RegretStats
    hop_quantiles: dict         # predictor -> hop -> (count, q)
    errors: dict                # predictor -> error class -> count
    predictors: list
    alphas: tuple
    hop_alpha: float = 0.10
    hop_min_count: int = 1000


_WORKER = {}


def _init_worker(network, truth, predictors):
    _WORKER.update(network=network, truth=truth, predictors=predictors)


def _route(network, truth, predictor, query):
    if isinstance(predictor, StaticOracle):
        return static_oracle(network, truth, query)
    return greedy_reroute(network, predictor, truth, query)


def _evaluate_chunk(chunk):
    network, truth, predictors = _WORKER["network"], _WORKER["truth"], _WORKER["predictors"]
    out = []
    for idx, tq in chunk:
        row = {}
        try:
            t_rt = realtime_benchmark(network, truth, tq.query).realized_total
        except CycloTrafficError as exc:
            out.append((idx, {p.name: type(exc).__name__ for p in predictors}))
            continue
        for p in predictors:
            try:
                row[p.name] = (_route(network, truth, p, tq.query).realized_total, t_rt)
            except CycloTrafficError as exc:
                row[p.name] = type(exc).__name__
        out.append((idx, row))
    return out


def evaluate_suite(network: RoadNetwork, truth: TrafficMatrix, predictors: list[Predictor],
                   test_set: list[TestQuery], alphas=DEFAULT_ALPHAS, workers: int = 1,
                   hop_min_count: int = 1000, hop_alpha: float = 0.10,
                   chunk_size: int = 64) -> SuiteResult:
    """Route every test query with every predictor and aggregate regrets.

    Per-query results depend only on the query, and the reduction runs in
    query order, so the output does not depend on ``workers``.
    """
    names = [p.name for p in predictors]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate predictor names: {names}")
    items = list(enumerate(test_set))
    chunks = [items[i:i + chunk_size] for i in range(0, len(items), chunk_size)]
    if workers <= 1:
        _init_worker(network, truth, predictors)
        results = [r for ch in chunks for r in _evaluate_chunk(ch)]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(network, truth, predictors)) as pool:
            results = [r for rs in pool.map(_evaluate_chunk, chunks) for r in rs]
    results.sort(key=lambda r: r[0])

    samples = []
    errors = {n: defaultdict(int) for n in names}
    for idx, row in results:
        tq = test_set[idx]
        for name in names:
            val = row[name]
            if isinstance(val, str):
                errors[name][val] += 1
                continue
            t_pred, t_rt = val
            samples.append(RegretSample(idx, tq.query, name, t_pred, t_rt,
                                        regret(t_pred, t_rt), tq.hop_length, tq.keys))
    return aggregate(samples, names, alphas, {n: dict(e) for n, e in errors.items()},
                     hop_min_count, hop_alpha)


def aggregate(samples, names, alphas=DEFAULT_ALPHAS, errors=None, hop_min_count=1000,
              hop_alpha=0.10) -> SuiteResult:
    by_pred = defaultdict(list)
    for s in samples:
        by_pred[s.predictor].append(s)
    stats, partitions, hopq = {}, {}, {}
    for name in names:
        ss = by_pred.get(name, [])
        stats[name] = RegretStats.from_samples([s.regret for s in ss], alphas)
        parts = {}
        for key in ("hour", "day_of_week", "workday", "direction"):
            groups = defaultdict(list)
            for s in ss:
                groups[s.keys[key]].append(s.regret)
            parts[key] = {v: RegretStats.from_samples(g, alphas)
                          for v, g in sorted(groups.items(), key=lambda kv: str(kv[0]))}
        partitions[name] = parts
        hops = defaultdict(list)
        for s in ss:
            hops[s.hop_length].append(s.regret)
        hopq[name] = {h: (len(g), upper_quantile(g, hop_alpha))
                      for h, g in sorted(hops.items()) if len(g) > hop_min_count}
    return SuiteResult(samples, stats, partitions, hopq,
                       errors or {n: {} for n in names}, list(names), tuple(alphas),
                       hop_alpha, hop_min_count)


# -------------------------------------------------------------------- outputs

SAMPLE_COLUMNS = ["index", "predictor", "origin", "destination", "t_start", "t_pred", "t_rt",
                  "regret", "hop_length", "hour", "day_of_week", "workday", "direction"]


def write_outputs(result: SuiteResult, outdir) -> dict:
    """Write regret_samples.csv, stats.json, ccdf_<predictor>.csv, hopquantiles.csv
    and summary.txt into ``outdir``; returns the paths written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    p = outdir / "regret_samples.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for s in result.samples:
            w.writerow([s.index, s.predictor, s.query.origin, s.query.destination,
                        s.query.t_start, repr(s.t_pred), repr(s.t_rt), repr(s.regret),
                        s.hop_length, s.keys["hour"], s.keys["day_of_week"],
                        int(s.keys["workday"]), s.keys["direction"]])
    paths["samples"] = p

    stats = {
        "units": "minutes",
        "alphas": list(result.alphas),
        "predictors": {n: result.stats[n].as_dict(60.0) for n in result.predictors},
        "errors": result.errors,
        "partitions": {n: {k: {str(v): st.as_dict(60.0) for v, st in groups.items()}
                           for k, groups in result.partitions[n].items()}
                       for n in result.predictors},
    }
    p = outdir / "stats.json"
    p.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["stats"] = p

    for n in result.predictors:
        curve = result.stats[n].curve
        p = outdir / f"ccdf_{n}.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regret_seconds", "exceedance"])
            if curve is not None:
                for y, pr in zip(curve.support.tolist(), curve.exceedance.tolist()):
                    w.writerow([repr(y), repr(pr)])
        paths[f"ccdf_{n}"] = p

    p = outdir / "hopquantiles.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["predictor", "hop_length", "count", f"upper_quantile_{result.hop_alpha:g}"])
        for n in result.predictors:
            for h, (cnt, q) in result.hop_quantiles[n].items():
                w.writerow([n, h, cnt, repr(q)])
    paths["hopquantiles"] = p

    p = outdir / "summary.txt"
    p.write_text(summary_table(result), encoding="utf-8")
    paths["summary"] = p
    return paths


def summary_table(result: SuiteResult) -> str:
    """Predictor x {mean, upper quantiles} in minutes, sorted by mean regret."""
    qa = result.alphas
    head = f"{'predictor':<24}{'n':>8}{'mean':>10}" + "".join(
        f"{'q' + format(a, 'g'):>10}" for a in qa) + f"{'errors':>8}\n"
    lines = [head, "-" * (len(head) - 1) + "\n"]
    order = sorted(result.predictors,
                   key=lambda n: (math.isnan(result.stats[n].mean), result.stats[n].mean, n))
    for n in order:
        st = result.stats[n]
        err = sum(result.errors.get(n, {}).values())
        lines.append(f"{n:<24}{st.count:>8}{st.mean / 60:>10.3f}" + "".join(
            f"{st.quantiles[a] / 60:>10.3f}" for a in qa) + f"{err:>8}\n")
    return "".join(lines)
