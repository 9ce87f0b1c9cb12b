"""Travel-time predictors: the low-rank cyclostationary model and its baselines.

Every predictor exposes ``predict_weights(t, live)`` returning one travel time
per matrix row for a vehicle deciding at time ``t``. ``live`` is the realised
traffic matrix; only the lag-type predictors read it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DAY, WEEK, TrafficMatrix, interval_index
from .errors import ColdStart, DimensionMismatch, InsufficientData, MissingValue
from .lowrank import SpatialBasis

DEFAULT_FLOOR = 1.0


@dataclass(frozen=True)
class CycleConfig:
    cycle_period: int = WEEK
    resolution: int = 600
    anchor_epoch: int = 0  # time at which interval 0 of every cycle starts

    def __post_init__(self):
        if self.cycle_period <= 0 or self.resolution <= 0:
            raise ValueError("cycle_period and resolution must be positive")
        if self.cycle_period % self.resolution:
            raise ValueError(f"cycle_period {self.cycle_period} not divisible by "
                             f"resolution {self.resolution}")

    @property
    def L(self) -> int:
        return self.cycle_period // self.resolution

    def phase(self, t) -> int:
        return int(((t - self.anchor_epoch) % self.cycle_period) // self.resolution)


def project_coefficients(w, u_bar) -> np.ndarray:
    """Least-squares coefficients of ``w`` in the column span of ``u_bar``.

    Uses ``u_bar.T @ w`` when the columns are orthonormal and solves the normal
    equations otherwise.
    """
    u_bar = u_bar.u_bar if isinstance(u_bar, SpatialBasis) else np.asarray(u_bar)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] != u_bar.shape[0]:
        raise DimensionMismatch(f"observation has {w.shape[0]} rows, basis has {u_bar.shape[0]}")
    gram = u_bar.T @ u_bar
    if np.max(np.abs(gram - np.eye(gram.shape[0]))) <= 1e-10:
        return u_bar.T @ w
    return np.linalg.solve(gram, u_bar.T @ w)


class CycleModel:
    """Per-interval running means of projection coefficients.

    With ``u_bar=None`` the model averages raw weight vectors instead (the
    full-rank variant). State beyond the basis is ``L x k`` means and ``L``
    counters.
    """

    def __init__(self, u_bar, cfg: CycleConfig, m: int | None = None):
        self.u_bar = None if u_bar is None else np.asarray(
            u_bar.u_bar if isinstance(u_bar, SpatialBasis) else u_bar, dtype=np.float64)
        self.cfg = cfg
        k = m if self.u_bar is None else self.u_bar.shape[1]
        if k is None:
            raise ValueError("full-rank model needs the segment count m")
        self.alphas = np.zeros((cfg.L, k))
        self.counts = np.zeros(cfg.L, dtype=np.int64)

    @property
    def k(self) -> int:
        return self.alphas.shape[1]

    def coefficients(self, w) -> np.ndarray:
        return np.asarray(w, dtype=np.float64) if self.u_bar is None else \
            project_coefficients(w, self.u_bar)

    def update(self, l: int, alpha_hat) -> None:
        """Fold one coefficient vector into the running mean of interval ``l``."""
        if not 0 <= l < self.cfg.L:
            raise IndexError(f"interval {l} outside 0..{self.cfg.L - 1}")
        p = self.counts[l] + 1
        self.alphas[l] = (p - 1) / p * self.alphas[l] + np.asarray(alpha_hat) / p
        self.counts[l] = p


def update_running_mean(model: CycleModel, l: int, alpha_hat) -> CycleModel:
    model.update(l, alpha_hat)
    return model


def fit_cyclo(training: TrafficMatrix, basis, cfg: CycleConfig,
              model: CycleModel | None = None) -> CycleModel:
    """Fold every fully observed training column into its interval's running mean.

    ``basis=None`` fits the full-rank variant. Passing ``model`` continues an
    existing fit with new cycles of data.
    """
    if training.grid.resolution != cfg.resolution:
        raise ValueError("training grid resolution differs from cycle resolution")
    model = model or CycleModel(basis, cfg, m=training.m)
    full = np.flatnonzero(training.mask.all(axis=0))
    if len(full) == 0:
        raise InsufficientData("no fully observed training interval")
    vals = np.asarray(training.values)[:, full]
    coeffs = vals.T if model.u_bar is None else (model.coefficients(vals)).T
    for j, col in enumerate(full.tolist()):
        model.update(cfg.phase(training.grid.slot_time(col)), coeffs[j])
    return model


class Predictor:
    """Immutable predictor snapshot."""

    tag = "abstract"
    name = "abstract"
    floor = DEFAULT_FLOOR

    def predict_weights(self, t, live: TrafficMatrix) -> np.ndarray:
        raise NotImplementedError

    def cache_key(self, t, live: TrafficMatrix):
        """Hashable key such that equal keys imply equal predictions."""
        raise NotImplementedError


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class CycloPredictor(Predictor):
    """Cycle-indexed prediction ``u_bar @ alphas[phase(t)]`` (or raw means when full-rank)."""

    def __init__(self, name, u_bar, alphas, counts, cfg: CycleConfig, floor=DEFAULT_FLOOR):
        self.tag = "cyclo_fullrank" if u_bar is None else "cyclo_lowrank"
        self.name = name
        self.u_bar = None if u_bar is None else _frozen(u_bar)
        self.alphas = _frozen(alphas)
        counts = np.array(counts, dtype=np.int64, copy=True)
        counts.setflags(write=False)
        self.counts = counts
        self.cfg = cfg
        self.floor = floor
        self._cache = {}

    def raw_prediction(self, l: int) -> np.ndarray:
        if self.counts[l] == 0:
            raise ColdStart(f"{self.name}: no training data for cycle interval {l}")
        a = self.alphas[l]
        return a.copy() if self.u_bar is None else self.u_bar @ a

    def predict_weights(self, t, live=None) -> np.ndarray:
        l = self.cfg.phase(t)
        out = self._cache.get(l)
        if out is None:
            out = np.maximum(self.raw_prediction(l), self.floor)
            out.setflags(write=False)
            self._cache[l] = out
        return out

    def cache_key(self, t, live=None):
        return self.cfg.phase(t)


class OnlineCycloPredictor(Predictor):
    """Cycle-indexed predictor whose state advances once per completed cycle.

    A decision at time ``t`` in cycle ``c`` uses the running means over every
    training or live cycle before ``c``: a sequence of frozen snapshots.
    """

    def __init__(self, name, u_bar, snapshots: dict, cfg: CycleConfig, floor=DEFAULT_FLOOR):
        self.name = name
        self.cfg = cfg
        self.floor = floor
        self.u_bar = None if u_bar is None else _frozen(u_bar)
        self.tag = "cyclo_fullrank" if u_bar is None else "cyclo_lowrank"
        self.snapshots = {c: CycloPredictor(f"{name}@{c}", u_bar, a, n, cfg, floor)
                          for c, (a, n) in snapshots.items()}

    def cycle_index(self, t) -> int:
        return int((t - self.cfg.anchor_epoch) // self.cfg.cycle_period)

    def snapshot(self, t) -> CycloPredictor:
        c = self.cycle_index(t)
        snap = self.snapshots.get(c)
        if snap is None:
            raise ColdStart(f"{self.name}: no snapshot for cycle {c}")
        return snap

    def predict_weights(self, t, live=None) -> np.ndarray:
        return self.snapshot(t).predict_weights(t)

    def cache_key(self, t, live=None):
        return self.cycle_index(t), self.cfg.phase(t)


def online_from(predictor: CycloPredictor, live: TrafficMatrix, start,
                name: str | None = None) -> OnlineCycloPredictor:
    """Continue a fitted cyclo predictor over ``live`` data from ``start`` onwards.

    ``start`` must be a cycle boundary. Snapshot ``c`` (for every cycle from the
    one beginning at ``start`` to the last one ``live`` touches) holds the fitted
    state plus every fully observed live column of cycles ``< c`` at or after
    ``start``.
    """
    cfg = predictor.cfg
    if (start - cfg.anchor_epoch) % cfg.cycle_period:
        raise ValueError(f"start={start} is not a cycle boundary")
    model = CycleModel(predictor.u_bar, cfg, m=live.m)
    model.alphas[:] = predictor.alphas
    model.counts[:] = predictor.counts
    slots = live.grid.slot_times()
    cyc = (slots - cfg.anchor_epoch) // cfg.cycle_period
    first = int((start - cfg.anchor_epoch) // cfg.cycle_period)
    usable = live.mask.all(axis=0) & (slots >= start)
    snapshots = {}
    for c in range(first, int(cyc[-1]) + 1):
        snapshots[c] = (model.alphas.copy(), model.counts.copy())
        cols = np.flatnonzero((cyc == c) & usable)
        if len(cols):
            sub = np.asarray(live.values)[:, cols]
            coeffs = model.coefficients(sub).T
            for j, col in enumerate(cols.tolist()):
                model.update(cfg.phase(int(slots[col])), coeffs[j])
    return OnlineCycloPredictor(name or predictor.name, predictor.u_bar, snapshots, cfg,
                                predictor.floor)


def fit_cyclo_online(matrix: TrafficMatrix, basis, cfg: CycleConfig, first_cycle: int,
                     name: str = "cyclo_online", floor=DEFAULT_FLOOR) -> OnlineCycloPredictor:
    """Train on the cycles of ``matrix`` before ``first_cycle``, then run online
    over the remainder (see :func:`online_from`)."""
    start = cfg.anchor_epoch + first_cycle * cfg.cycle_period
    n_train = (start - matrix.grid.start_epoch) // matrix.grid.resolution
    if n_train <= 0:
        raise InsufficientData(f"no training data before cycle {first_cycle}")
    model = fit_cyclo(matrix.columns(0, int(n_train)), basis, cfg)
    return online_from(freeze(model, name, floor), matrix, start, name)


class LowRankStatic(Predictor):
    """Low-rank reconstruction from coefficients averaged over all training columns."""

    tag = "lowrank_static"

    def __init__(self, name, u_bar, mean_alpha, floor=DEFAULT_FLOOR):
        self.name = name
        self.u_bar = _frozen(u_bar)
        self.mean_alpha = _frozen(mean_alpha)
        self.floor = floor
        w = np.maximum(self.u_bar @ self.mean_alpha, floor)
        w.setflags(write=False)
        self._weights = w

    def predict_weights(self, t, live=None) -> np.ndarray:
        return self._weights

    def cache_key(self, t, live=None):
        return 0


def fit_lowrank_static(training: TrafficMatrix, basis, name="lowrank_static",
                       floor=DEFAULT_FLOOR) -> LowRankStatic:
    u_bar = basis.u_bar if isinstance(basis, SpatialBasis) else np.asarray(basis)
    full = np.flatnonzero(training.mask.all(axis=0))
    if len(full) == 0:
        raise InsufficientData("no fully observed training interval")
    coeffs = project_coefficients(np.asarray(training.values)[:, full], u_bar)
    return LowRankStatic(name, u_bar, coeffs.mean(axis=1), floor)


class LagPredictor(Predictor):
    """Reads the live matrix ``lag`` seconds in the past; ``lag=0`` is real time."""

    tag = "lag"

    def __init__(self, lag: int, name: str | None = None, floor=DEFAULT_FLOOR):
        self.lag = int(lag)
        if self.lag < 0:
            raise ValueError("lag must be non-negative")
        self.tag = "realtime" if self.lag == 0 else "lag"
        self.name = name or ("realtime" if self.lag == 0 else f"lag_{self.lag}s")
        self.floor = floor

    def predict_weights(self, t, live: TrafficMatrix) -> np.ndarray:
        tq = t - self.lag
        if tq < live.grid.start_epoch:
            raise ColdStart(f"{self.name}: t-lag={tq} precedes the grid")
        l = interval_index(live.grid, tq)
        col = live.values[:, l]
        if not live.mask[:, l].all():
            raise MissingValue(f"{self.name}: live column {l} has missing cells")
        return np.maximum(col, self.floor)

    def cache_key(self, t, live):
        return interval_index(live.grid, t - self.lag) if t - self.lag >= live.grid.start_epoch \
            else None


def realtime_predictor() -> LagPredictor:
    return LagPredictor(0, "realtime")


class StaticOracle(Predictor):
    """Marker for the clairvoyant fixed-path benchmark; routing handles it specially.

    ``predict_weights`` returns the realised column, which is what the oracle
    knows at every instant.
    """

    tag = "static_oracle"

    def __init__(self, name="static_oracle"):
        self.name = name

    def predict_weights(self, t, live):
        return LagPredictor(0).predict_weights(t, live)

    def cache_key(self, t, live):
        return interval_index(live.grid, t)


def freeze(model, name: str | None = None, floor=DEFAULT_FLOOR) -> Predictor:
    """Immutable snapshot of a fitted model; stateless predictors are returned as-is."""
    if isinstance(model, Predictor):
        return model
    if isinstance(model, CycleModel):
        label = name or (f"cyclo_{'full' if model.u_bar is None else 'lowrank'}"
                         f"_{model.cfg.cycle_period}s")
        return CycloPredictor(label, model.u_bar, model.alphas, model.counts, model.cfg, floor)
    raise TypeError(f"cannot freeze {type(model).__name__}")


def cycle_name(period: int) -> str:
    return {DAY: "daily", WEEK: "weekly"}.get(period, f"{period}s")


def save_model(path, predictor: Predictor, extra: dict | None = None):
    from .io import write_container

    header = {"kind": "predictor", "tag": predictor.tag, "name": predictor.name,
              "floor": predictor.floor}
    if isinstance(predictor, CycloPredictor):
        header.update(cycle_period=predictor.cfg.cycle_period,
                      resolution=predictor.cfg.resolution,
                      anchor_epoch=predictor.cfg.anchor_epoch,
                      L=predictor.cfg.L, k=predictor.alphas.shape[1])
        arrays = {"alphas": predictor.alphas, "counts": predictor.counts}
        if predictor.u_bar is not None:
            arrays["u_bar"] = predictor.u_bar
    elif isinstance(predictor, LowRankStatic):
        header.update(k=len(predictor.mean_alpha))
        arrays = {"u_bar": predictor.u_bar, "mean_alpha": predictor.mean_alpha}
    elif isinstance(predictor, LagPredictor):
        header.update(lag=predictor.lag)
        arrays = {}
    else:
        arrays = {}
    if extra:
        header.update(extra)
    write_container(path, header, arrays)


def load_model(path) -> Predictor:
    from .io import read_container

    header, arrays = read_container(path)
    if header.get("kind") != "predictor":
        raise ValueError(f"{path}: not a predictor file")
    tag, name, floor = header["tag"], header["name"], header.get("floor", DEFAULT_FLOOR)
    if tag in ("cyclo_lowrank", "cyclo_fullrank"):
        cfg = CycleConfig(header["cycle_period"], header["resolution"], header["anchor_epoch"])
        return CycloPredictor(name, arrays.get("u_bar"), arrays["alphas"], arrays["counts"],
                              cfg, floor)
    if tag == "lowrank_static":
        return LowRankStatic(name, arrays["u_bar"], arrays["mean_alpha"], floor)
    if tag in ("lag", "realtime"):
        return LagPredictor(header["lag"], name, floor)
    if tag == "static_oracle":
        return StaticOracle(name)
    raise ValueError(f"unknown predictor tag {tag!r}")


__all__ = [
    "CycleConfig", "CycleModel", "CycloPredictor", "LagPredictor", "LowRankStatic",
    "OnlineCycloPredictor", "fit_cyclo_online",
    "Predictor", "StaticOracle", "fit_cyclo", "fit_lowrank_static", "freeze",
    "project_coefficients", "realtime_predictor", "update_running_mean",
]
