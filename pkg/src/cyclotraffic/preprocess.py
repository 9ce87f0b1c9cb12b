"""Data conditioning: grid alignment, outlier removal, gap filling, blackout
removal, spatio-temporal imputation and restriction to the largest SCC."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import RoadNetwork, TimeGrid, TrafficMatrix
from .errors import IsolatedSegment


@dataclass(frozen=True)
class RawSeries:
    segment_id: str
    samples: tuple  # ((t, seconds), ...) strictly increasing in t

    def __post_init__(self):
        ts = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"segment {self.segment_id}: timestamps must be strictly increasing")
        if any(v <= 0 for _, v in self.samples):
            raise ValueError(f"segment {self.segment_id}: travel times must be positive")


@dataclass(frozen=True)
class PreprocessConfig:
    grid: TimeGrid | None = None
    snap_tolerance: float = 300.0
    interp_window: float = 600.0
    max_gap_intervals: int = 2
    outlier_fraction: float = 0.2
    blackout_hours: float = 3.0
    max_missing_fraction: float = 0.3
    # how far (in intervals) a temporal anchor may be from a missing cell during imputation
    impute_temporal_reach: int = 6

    def __post_init__(self):
        for name in ("snap_tolerance", "interp_window", "blackout_hours"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("outlier_fraction", "max_missing_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_gap_intervals < 0 or self.impute_temporal_reach < 0:
            raise ValueError("interval counts must be non-negative")


def align_to_grid(raw: RawSeries, cfg: PreprocessConfig):
    """Resample irregular samples onto ``cfg.grid``.

    A slot takes the nearest sample within ``snap_tolerance``; failing that it
    is linearly interpolated between the closest samples on either side, each
    within ``interp_window``; otherwise it is missing.
    """
    if not raw.samples:
        raise ValueError("raw series is empty")
    ts = np.array([t for t, _ in raw.samples], dtype=np.float64)
    vs = np.array([v for _, v in raw.samples], dtype=np.float64)
    slots = cfg.grid.slot_times().astype(np.float64)
    n = len(slots)
    values = np.full(n, np.nan)
    mask = np.zeros(n, bool)

    right = np.searchsorted(ts, slots, side="left")  # first sample >= slot
    left = right - 1
    has_r = right < len(ts)
    has_l = left >= 0
    r_idx = np.minimum(right, len(ts) - 1)
    l_idx = np.maximum(left, 0)
    dr = np.where(has_r, ts[r_idx] - slots, np.inf)
    dl = np.where(has_l, slots - ts[l_idx], np.inf)

    # nearest sample; ties go to the earlier one
    near_is_left = dl <= dr
    dnear = np.minimum(dl, dr)
    snap = dnear <= cfg.snap_tolerance
    values[snap] = np.where(near_is_left, vs[l_idx], vs[r_idx])[snap]
    mask[snap] = True

    interp = ~snap & (dl <= cfg.interp_window) & (dr <= cfg.interp_window)
    if interp.any():
        t0, t1 = ts[l_idx][interp], ts[r_idx][interp]
        v0, v1 = vs[l_idx][interp], vs[r_idx][interp]
        s = slots[interp]
        values[interp] = v0 + (v1 - v0) * (s - t0) / (t1 - t0)
        mask[interp] = True
    return values, mask


def remove_outliers(values, mask, cfg: PreprocessConfig):
    """Mask observed values below ``outlier_fraction`` of the row's observed mean."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.array(mask, dtype=bool, copy=True)
    if not mask.any():
        return values.copy(), mask
    threshold = cfg.outlier_fraction * values[mask].mean()
    mask &= ~(values < threshold)
    out = values.copy()
    out[~mask] = np.nan
    return out, mask


def _runs(missing):
    """(start, stop) pairs of contiguous True runs."""
    padded = np.concatenate(([False], missing, [False]))
    d = np.diff(padded.astype(np.int8))
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def interpolate_short_gaps(values, mask, cfg: PreprocessConfig):
    values = np.array(values, dtype=np.float64, copy=True)
    mask = np.array(mask, dtype=bool, copy=True)
    n = len(values)
    for a, b in _runs(~mask):
        if b - a > cfg.max_gap_intervals or a == 0 or b == n:
            continue
        v0, v1 = values[a - 1], values[b]
        steps = np.arange(1, b - a + 1)
        values[a:b] = v0 + (v1 - v0) * steps / (b - a + 1)
        mask[a:b] = True
    return values, mask


def blackout_rows(matrix: TrafficMatrix, cfg: PreprocessConfig) -> np.ndarray:
    """Boolean per row: True if the row violates the blackout or missing-fraction rule."""
    limit = cfg.blackout_hours * 3600.0
    res = matrix.grid.resolution
    bad = np.zeros(matrix.m, bool)
    for i in range(matrix.m):
        miss = ~matrix.mask[i]
        if miss.mean() > cfg.max_missing_fraction:
            bad[i] = True
            continue
        if any((b - a) * res > limit for a, b in _runs(miss)):
            bad[i] = True
    return bad


def drop_blackout_segments(matrix: TrafficMatrix, cfg: PreprocessConfig):
    """Remove rows with an over-long missing run or too many missing cells.

    Returns ``(kept matrix, removed row ids)``.
    """
    bad = blackout_rows(matrix, cfg)
    kept = np.flatnonzero(~bad)
    return matrix.rows(kept), np.flatnonzero(bad)


def segment_neighbours(network: RoadNetwork) -> list[np.ndarray]:
    """Rows of segments sharing at least one endpoint with each row's segment."""
    by_vertex = [[] for _ in range(network.n_vertices)]
    for e, u, v, r in network.edge_list():
        by_vertex[u].append(r)
        by_vertex[v].append(r)
    nbrs = [set() for _ in range(network.n_edges)]
    for e, u, v, r in network.edge_list():
        nbrs[r].update(by_vertex[u])
        nbrs[r].update(by_vertex[v])
        nbrs[r].discard(r)
    return [np.array(sorted(s), dtype=np.int64) for s in nbrs]


def _temporal_estimates(values, mask, reach):
    """Per cell: linear interpolation between the nearest observed cells within
    ``reach`` intervals, or the single available one; NaN when neither exists."""
    n = len(values)
    idx = np.arange(n)
    prev = np.where(mask, idx, -1)
    prev = np.maximum.accumulate(prev)
    nxt = np.where(mask, idx, n)
    nxt = np.minimum.accumulate(nxt[::-1])[::-1]
    has_p = (prev >= 0) & (idx - prev <= reach)
    has_n = (nxt < n) & (nxt - idx <= reach)
    vp = values[np.clip(prev, 0, n - 1)]
    vn = values[np.clip(nxt, 0, n - 1)]
    est = np.full(n, np.nan)
    both = has_p & has_n & (nxt > prev)
    span = np.where(both, nxt - prev, 1)
    est[both] = (vp + (vn - vp) * (idx - prev) / span)[both]
    only_p = has_p & ~has_n
    only_n = has_n & ~has_p
    est[only_p] = vp[only_p]
    est[only_n] = vn[only_n]
    return est


def impute_spatiotemporal(matrix: TrafficMatrix, network: RoadNetwork,
                          cfg: PreprocessConfig | None = None) -> TrafficMatrix:
    """Fill every missing cell from temporal and graph-neighbour evidence.

    The temporal estimate interpolates the segment's own nearest observations
    (within ``impute_temporal_reach`` intervals). The spatial estimate averages,
    over adjacent segments observed in the same interval, the neighbour's value
    rescaled by the ratio of segment means. When both exist they are averaged
    with equal weight.
    """
    cfg = cfg or PreprocessConfig()
    if matrix.fully_observed:
        return matrix
    mask = matrix.mask
    values = matrix.filled(np.nan)
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise IsolatedSegment(f"segments without any observation: {np.flatnonzero(counts == 0)}")
    means = np.nansum(values, axis=1) / counts
    ratio = values / means[:, None]
    nbrs = segment_neighbours(network)
    out = values.copy()
    for i in np.flatnonzero(~mask.all(axis=1)):
        miss = ~mask[i]
        temporal = _temporal_estimates(values[i], mask[i], cfg.impute_temporal_reach)[miss]
        if len(nbrs[i]):
            r = ratio[nbrs[i]][:, miss]
            cnt = np.sum(~np.isnan(r), axis=0)
            spatial = means[i] * np.nansum(r, axis=0) / np.where(cnt > 0, cnt, 1)
            spatial[cnt == 0] = np.nan
        else:
            spatial = np.full(miss.sum(), np.nan)
        est = np.where(np.isnan(spatial), temporal,
                       np.where(np.isnan(temporal), spatial, 0.5 * (spatial + temporal)))
        if np.isnan(est).any():
            cols = np.flatnonzero(miss)[np.isnan(est)]
            raise IsolatedSegment(f"segment row {i} has no anchor at intervals {cols[:5].tolist()}")
        out[i, miss] = est
    return TrafficMatrix(matrix.grid, out, np.ones_like(mask))


def restrict_network(network: RoadNetwork, kept_rows) -> tuple[RoadNetwork, np.ndarray]:
    """Drop edges whose segment row is not in ``kept_rows``.

    Returns the network with rows renumbered to match ``matrix.rows(kept_rows)``
    and the surviving old edge ids.
    """
    kept_rows = np.asarray(kept_rows, dtype=np.int64)
    new_row = np.full(network.n_edges, -1, dtype=np.int64)
    new_row[kept_rows] = np.arange(len(kept_rows))
    mapped = new_row[network.rows]
    edges = np.flatnonzero(mapped >= 0)
    sub = RoadNetwork(network.n_vertices, network.tails[edges], network.heads[edges],
                      mapped[edges])
    return sub, edges


@dataclass(frozen=True)
class SCCResult:
    network: RoadNetwork
    vertex_ids: np.ndarray  # old vertex id of each new vertex
    edge_ids: np.ndarray    # old edge id of each new edge
    row_index: np.ndarray   # new row r reads old row row_index[r]


def largest_scc(network: RoadNetwork) -> SCCResult:
    """Induced subgraph on the largest strongly connected component.

    Ties between equally large components go to the one containing the smallest
    vertex id. New edges keep the relative order of old edge ids and their rows
    are renumbered 0..E'-1 in that order.
    """
    nv = network.n_vertices
    adj = csr_matrix((np.ones(network.n_edges), (network.tails, network.heads)), shape=(nv, nv))
    _, labels = connected_components(adj, directed=True, connection="strong")
    sizes = np.bincount(labels)
    first_vertex = np.full(len(sizes), nv)
    np.minimum.at(first_vertex, labels, np.arange(nv))
    best = min(range(len(sizes)), key=lambda c: (-sizes[c], first_vertex[c]))
    vertex_ids = np.flatnonzero(labels == best)
    new_v = np.full(nv, -1, dtype=np.int64)
    new_v[vertex_ids] = np.arange(len(vertex_ids))
    keep = (new_v[network.tails] >= 0) & (new_v[network.heads] >= 0)
    edge_ids = np.flatnonzero(keep)
    sub = RoadNetwork(len(vertex_ids), new_v[network.tails[edge_ids]],
                      new_v[network.heads[edge_ids]], np.arange(len(edge_ids)))
    return SCCResult(sub, vertex_ids, edge_ids, network.rows[edge_ids])


@dataclass
class PreprocessReport:
    segments_in: int = 0
    cells: int = 0
    aligned_snapped: int = 0
    aligned_interpolated: int = 0
    missing_before: int = 0
    outliers_removed: int = 0
    short_gap_filled: int = 0
    blackout_dropped: list = field(default_factory=list)
    scc_dropped: list = field(default_factory=list)
    cells_imputed: int = 0
    segments_out: int = 0

    def as_dict(self):
        d = dict(self.__dict__)
        d["rows_dropped"] = sorted(set(self.blackout_dropped) | set(self.scc_dropped))
        d["missing_fraction_before"] = self.missing_before / self.cells if self.cells else 0.0
        d["imputed_fraction"] = self.cells_imputed / self.cells if self.cells else 0.0
        return d


def align_series(series: dict, cfg: PreprocessConfig, order=None):
    """Align a ``{segment_id: samples}`` dict to ``cfg.grid``; rows follow ``order``."""
    order = list(series) if order is None else list(order)
    vals, masks = [], []
    snapped = interpolated = 0
    for seg in order:
        raw = RawSeries(seg, tuple(series[seg]))
        v, mk = align_to_grid(raw, cfg)
        vals.append(v)
        masks.append(mk)
        # a slot is "snapped" if a raw sample sits within tolerance of it
        ts = np.array([t for t, _ in raw.samples])
        slots = cfg.grid.slot_times()
        pos = np.searchsorted(ts, slots)
        dl = np.abs(slots - ts[np.clip(pos - 1, 0, len(ts) - 1)])
        dr = np.abs(ts[np.clip(pos, 0, len(ts) - 1)] - slots)
        snap = np.minimum(dl, dr) <= cfg.snap_tolerance
        snapped += int(snap.sum())
        interpolated += int((mk & ~snap).sum())
    matrix = TrafficMatrix(cfg.grid, np.array(vals), np.array(masks))
    return matrix, snapped, interpolated


def run_pipeline(matrix: TrafficMatrix, network: RoadNetwork, cfg: PreprocessConfig,
                 report: PreprocessReport | None = None):
    """Outliers, short gaps, blackout removal, largest SCC, then imputation.

    ``matrix`` rows must correspond to ``network`` segment rows. Returns
    ``(clean matrix, clean network, report)``; report row ids refer to the input.
    """
    report = report or PreprocessReport()
    report.segments_in = matrix.m
    report.cells = matrix.m * matrix.n
    report.missing_before = int((~matrix.mask).sum())

    vals = np.empty((matrix.m, matrix.n))
    masks = np.empty((matrix.m, matrix.n), bool)
    for i in range(matrix.m):
        v, mk = remove_outliers(matrix.values[i], matrix.mask[i], cfg)
        report.outliers_removed += int(matrix.mask[i].sum() - mk.sum())
        v2, mk2 = interpolate_short_gaps(v, mk, cfg)
        report.short_gap_filled += int(mk2.sum() - mk.sum())
        vals[i], masks[i] = v2, mk2
    cleaned = matrix.with_data(np.where(masks, vals, np.nan), masks)

    bad = blackout_rows(cleaned, cfg)
    kept_rows = np.flatnonzero(~bad)
    report.blackout_dropped = np.flatnonzero(bad).tolist()
    net, _ = restrict_network(network, kept_rows)
    cleaned = cleaned.rows(kept_rows)

    scc = largest_scc(net)
    report.scc_dropped = sorted(set(kept_rows.tolist()) - set(kept_rows[scc.row_index].tolist()))
    cleaned = cleaned.rows(scc.row_index)
    net = scc.network

    before = int((~cleaned.mask).sum())
    cleaned = impute_spatiotemporal(cleaned, net, cfg)
    report.cells_imputed = before
    report.segments_out = cleaned.m
    return cleaned, net, report
