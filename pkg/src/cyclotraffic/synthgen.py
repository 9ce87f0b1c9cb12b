"""Synthetic road networks and cyclostationary ground-truth traffic.

Randomness comes from counter-based Philox generators, one independent stream
per component, all derived from `SynthSpec.seed`:

========== ===================================================
stream     used for
========== ===================================================
network    vertex layout, topology, base travel times
temporal   spatial modes and template coefficients/phases
noise      i.i.d. relative measurement noise
transient  congestion events (time, place, size, duration)
missing    random cell dropout and blackouts
odsample   OD node sampling (evaluation)
========== ===================================================
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform

from .core import DAY, WEEK, RoadNetwork, TimeGrid, TrafficMatrix

STREAMS = {"network": 1, "temporal": 2, "noise": 3, "transient": 4, "missing": 5,
           "odsample": 6, "testsubsample": 7, "mdl": 8}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component ``name`` under root ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.Philox(ss))


# (period seconds, harmonic, weight) per temporal template component
DEFAULT_TEMPLATES = ((DAY, 1, 1.0), (DAY, 2, 0.6), (DAY, 3, 0.3), (WEEK, 1, 0.8))


@dataclass(frozen=True)
class SynthSpec:
    n_vertices: int = 200
    degree: float = 2.5               # target mean out-degree
    planar: bool = True
    days: int = 14
    resolution: int = 600
    start_epoch: int = 0
    k_true: int = 5
    templates: tuple = DEFAULT_TEMPLATES
    mode_strength: float = 0.25       # per-segment std of the relative modulation
    min_factor: float = 0.25          # lower bound on 1 + U0 A(t)
    base_median: float = 150.0        # seconds
    base_sigma: float = 0.3           # lognormal spread of base times
    noise_std: float = 0.0            # relative, marginal std per cell
    noise_corr: float = 0.0           # AR(1) coefficient between consecutive intervals
    day_jitter: float = 0.0           # relative day-to-day amplitude variation per mode
    transient_rate: float = 0.0       # events per day, network-wide
    transient_magnitude: tuple = (1.5, 3.0)   # uniform range of the multiplier
    transient_duration: float = 3.0   # mean event length in intervals (geometric)
    missing_rate: float = 0.0         # random cell dropout
    blackout_rate: float = 0.0        # fraction of rows receiving one blackout
    blackout_intervals: int = 24
    floor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_vertices < 2:
            raise ValueError("n_vertices must be >= 2")
        if self.k_true < 0 or self.days <= 0 or self.resolution <= 0:
            raise ValueError("k_true, days and resolution must be positive")
        if not 0 <= self.noise_corr < 1:
            raise ValueError("noise_corr must lie in [0, 1)")
        for name in ("missing_rate", "blackout_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if min(self.noise_std, self.transient_rate, self.day_jitter) < 0:
            raise ValueError("noise_std, day_jitter and transient_rate must be non-negative")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.start_epoch, self.days * DAY // self.resolution, self.resolution)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["templates"] = [list(t) for t in self.templates]
        d["transient_magnitude"] = list(self.transient_magnitude)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth field(s): {sorted(unknown)}")
        d = dict(d)
        if "templates" in d:
            d["templates"] = tuple(tuple(t) for t in d["templates"])
        if "transient_magnitude" in d:
            d["transient_magnitude"] = tuple(d["transient_magnitude"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SynthWorld:
    spec: SynthSpec
    network: RoadNetwork
    truth: TrafficMatrix
    positions: np.ndarray = field(repr=False)
    spatial_modes: np.ndarray = field(repr=False)   # U0, m x k_true orthonormal
    base: np.ndarray = field(repr=False)


def _layout(spec, rng):
    return rng.random((spec.n_vertices, 2))


def generate_network(spec: SynthSpec, positions=None) -> RoadNetwork:
    """Strongly connected directed graph, identical for identical specs.

    Planar-ish: Euclidean MST plus the shortest remaining vertex pairs until
    the mean degree target is met, every link in both directions. Otherwise a
    random Hamiltonian cycle plus random extra arcs.
    """
    rng = rng_stream(spec.seed, "network")
    pos = _layout(spec, rng) if positions is None else positions
    n = spec.n_vertices
    if spec.planar:
        target = max(n - 1, int(round(spec.degree * n / 2)))
        target = min(target, n * (n - 1) // 2)
        dist = squareform(pdist(pos))
        mst = minimum_spanning_tree(dist).tocoo()
        links = {(min(a, b), max(a, b)) for a, b in zip(mst.row.tolist(), mst.col.tolist())}
        iu, ju = np.triu_indices(n, 1)
        order = np.argsort(dist[iu, ju], kind="stable")
        for idx in order.tolist():
            if len(links) >= target:
                break
            links.add((int(iu[idx]), int(ju[idx])))
        tails, heads = [], []
        for a, b in sorted(links):
            tails += [a, b]
            heads += [b, a]
    else:
        perm = rng.permutation(n).tolist()
        arcs = {(perm[i], perm[(i + 1) % n]) for i in range(n)}
        target = min(max(n, int(round(spec.degree * n))), n * (n - 1))
        while len(arcs) < target:
            a, b = rng.integers(n, size=2).tolist()
            if a != b:
                arcs.add((a, b))
        arcs = sorted(arcs)
        tails = [a for a, _ in arcs]
        heads = [b for _, b in arcs]
    return RoadNetwork(n, tails, heads)


def temporal_templates(spec: SynthSpec, t: np.ndarray, rng) -> np.ndarray:
    """``k_true x len(t)`` matrix of cycle-periodic mode activations."""
    coeff = rng.standard_normal((spec.k_true, len(spec.templates)))
    # unit RMS per component so the template weights fix the energy split
    norms = np.sqrt(np.mean(coeff ** 2, axis=0))
    coeff /= np.where(norms > 0, norms, 1.0)
    phase = rng.uniform(0, 2 * np.pi, (spec.k_true, len(spec.templates)))
    a = np.zeros((spec.k_true, len(t)))
    for c, (period, harmonic, weight) in enumerate(spec.templates):
        # reduce modulo the period first so the activation repeats bit-exactly
        arg = 2 * np.pi * harmonic * (np.mod(t - spec.start_epoch, period) / period)
        a += weight * coeff[:, c:c + 1] * np.sin(arg[None, :] + phase[:, c:c + 1])
    return a


def _random_orthonormal(m, k, rng):
    if k == 0:
        return np.zeros((m, 0))
    q, r = np.linalg.qr(rng.standard_normal((m, k)))
    return q * np.sign(np.diag(r))


def generate_truth(spec: SynthSpec, network: RoadNetwork | None = None,
                   positions=None) -> SynthWorld:
    """Fully observed ground truth ``base * (1 + U0 A(t))`` with noise and transients.

    Without noise, day jitter and transients the matrix has rank at most
    ``k_true + 1`` and repeats with every template period. Day jitter keeps the
    rank bound but breaks exact periodicity.
    """
    net_rng = rng_stream(spec.seed, "network")
    pos = _layout(spec, net_rng) if positions is None else positions
    network = network or generate_network(spec, pos)
    m = network.n_edges
    if spec.k_true > m:
        raise ValueError(f"k_true={spec.k_true} exceeds segment count {m}")
    grid = spec.grid

    # base travel times: proportional to link length on planar layouts
    spread = np.exp(spec.base_sigma * net_rng.standard_normal(m))
    if spec.planar:
        length = np.linalg.norm(pos[network.tails] - pos[network.heads], axis=1)
        base = spec.base_median * spread * length / np.median(length)
    else:
        base = spec.base_median * spread
    base_rows = np.empty(m)
    base_rows[network.rows] = base

    trng = rng_stream(spec.seed, "temporal")
    u0 = _random_orthonormal(m, spec.k_true, trng)
    t = grid.slot_times().astype(np.float64)
    act = temporal_templates(spec, t, trng)
    if spec.day_jitter > 0:
        # each day scales each mode's activation by its own random factor
        day = ((t - spec.start_epoch) // DAY).astype(np.int64)
        nrng = rng_stream(spec.seed, "noise")
        amp = 1.0 + spec.day_jitter * nrng.standard_normal((spec.k_true, day.max() + 1))
        act = act * amp[:, day]
    modulation = u0 @ act
    # per-row scaling keeps every segment at the same relative strength; it is a
    # diagonal factor on U0, so the rank bound is unchanged
    sd = modulation.std(axis=1)
    modulation *= (spec.mode_strength / np.where(sd > 0, sd, 1.0))[:, None]
    lo = modulation.min() if modulation.size else 0.0
    if 1 + lo < spec.min_factor:
        modulation *= (1 - spec.min_factor) / -lo
    w = base_rows[:, None] * (1.0 + modulation)

    if spec.noise_std > 0:
        nrng = rng_stream(spec.seed, "noise") if spec.day_jitter == 0 else nrng
        w = w * (1.0 + spec.noise_std * _noise(nrng, w.shape, spec.noise_corr))
    if spec.transient_rate > 0:
        w = _apply_transients(spec, network, w, grid)
    w = np.maximum(w, spec.floor)
    return SynthWorld(spec, network, TrafficMatrix(grid, w), pos, u0, base_rows)


def _noise(rng, shape, rho):
    """Unit-variance Gaussian noise, i.i.d. across rows, AR(1) along columns."""
    z = rng.standard_normal(shape)
    if rho == 0:
        return z
    out = np.empty(shape)
    out[:, 0] = z[:, 0]
    c = np.sqrt(1 - rho * rho)
    for j in range(1, shape[1]):
        out[:, j] = rho * out[:, j - 1] + c * z[:, j]
    return out


def _apply_transients(spec, network, w, grid):
    """Multiplicative congestion on a segment and the segments feeding into it."""
    rng = rng_stream(spec.seed, "transient")
    n_events = rng.poisson(spec.transient_rate * spec.days)
    incoming = [[] for _ in range(network.n_vertices)]
    for e, u, v, r in network.edge_list():
        incoming[v].append(r)
    w = w.copy()
    lo, hi = spec.transient_magnitude
    p = 1.0 / max(spec.transient_duration, 1.0)
    for _ in range(n_events):
        e = int(rng.integers(network.n_edges))
        start = int(rng.integers(grid.n_intervals))
        length = int(rng.geometric(p))
        mult = rng.uniform(lo, hi)
        rows = [int(network.rows[e])] + incoming[int(network.tails[e])]
        stop = min(start + length, grid.n_intervals)
        w[rows, start:stop] *= mult
    return w


def inject_missingness(truth: TrafficMatrix, spec: SynthSpec) -> TrafficMatrix:
    """Degraded copy of ``truth``: random cell dropout plus one blackout per
    selected row. ``truth`` itself is not modified."""
    rng = rng_stream(spec.seed, "missing")
    mask = rng.random(truth.values.shape) >= spec.missing_rate
    if spec.blackout_rate > 0:
        rows = np.flatnonzero(rng.random(truth.m) < spec.blackout_rate)
        length = min(spec.blackout_intervals, truth.n)
        for r in rows.tolist():
            start = int(rng.integers(truth.n - length + 1))
            mask[r, start:start + length] = False
    values = np.where(mask, truth.values, np.nan)
    return TrafficMatrix(truth.grid, values, mask)


def to_raw_series(matrix: TrafficMatrix, jitter: float = 0.0, seed: int = 0) -> dict:
    """Irregular raw samples from a gridded matrix: observed cells become samples
    at the slot time plus uniform jitter in ``[-jitter, jitter]`` seconds."""
    rng = rng_stream(seed, "missing")
    slots = matrix.grid.slot_times().astype(np.float64)
    out = {}
    for i in range(matrix.m):
        cols = np.flatnonzero(matrix.mask[i])
        ts = slots[cols] + (rng.uniform(-jitter, jitter, len(cols)) if jitter else 0.0)
        out[str(i)] = list(zip(ts.tolist(), matrix.values[i, cols].tolist()))
    return out


def synth_world(spec: SynthSpec) -> SynthWorld:
    return generate_truth(spec)


PRESETS = {
    # noiseless planted world for exact-recovery checks
    "exact": dict(n_vertices=120, degree=2.5, days=14, k_true=5),
    # noisy world for the predictor hierarchy
    "hierarchy": dict(n_vertices=200, degree=2.5, days=56, k_true=5, mode_strength=0.15,
                      noise_std=0.10, noise_corr=0.9, transient_rate=10.0,
                      transient_magnitude=(1.3, 2.0),
                      templates=((DAY, 1, 1.0), (DAY, 2, 0.6), (DAY, 3, 0.3), (WEEK, 1, 0.7))),
    # Seoul-sized rank for the documented default k=25
    "seoul_like": dict(n_vertices=400, degree=2.7, days=35, k_true=25, noise_std=0.10,
                       transient_rate=40.0),
}


def preset(name: str, **overrides) -> SynthSpec:
    d = dict(PRESETS[name])
    d.update(overrides)
    return SynthSpec(**d)
