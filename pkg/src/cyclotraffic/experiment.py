"""Shared experiment plumbing: predictor construction from declarative specs and
the end-to-end synthetic run used by the CLI and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DAY, WEEK, TrafficMatrix
from .evaluation import (TestSetSpec, build_test_set, detect_communities, evaluate_suite,
                         label_inner_outer)
from .lowrank import SpatialBasis, truncated_svd
from .predictors import (CycleConfig, CycloPredictor, LagPredictor, Predictor, StaticOracle,
                         fit_cyclo, fit_lowrank_static, freeze, online_from)
from .synthgen import SynthSpec, generate_truth

CYCLES = {"day": DAY, "daily": DAY, "week": WEEK, "weekly": WEEK}
KINDS = ("cyclo", "fullrank", "lowrank_static", "lag", "realtime", "static_oracle")


@dataclass(frozen=True)
class PredictorSpec:
    name: str
    kind: str
    cycle: int | None = None   # seconds, for cyclo/fullrank
    lag: int = 0               # seconds, for lag

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"predictor {self.name!r}: unknown kind {self.kind!r}")
        if self.kind in ("cyclo", "fullrank") and not self.cycle:
            raise ValueError(f"predictor {self.name!r}: cycle required")

    @classmethod
    def from_dict(cls, d: dict) -> PredictorSpec:
        unknown = set(d) - {"name", "kind", "cycle", "lag"}
        if unknown:
            raise ValueError(f"unknown predictor field(s): {sorted(unknown)}")
        cycle = d.get("cycle")
        if isinstance(cycle, str):
            if cycle not in CYCLES:
                raise ValueError(f"unknown cycle {cycle!r}")
            cycle = CYCLES[cycle]
        return cls(d["name"], d["kind"], cycle, int(d.get("lag", 0)))


DEFAULT_PREDICTORS = (
    PredictorSpec("lag_10min", "lag", lag=600),
    PredictorSpec("lag_1d", "lag", lag=DAY),
    PredictorSpec("lag_1w", "lag", lag=WEEK),
    PredictorSpec("cyclo_daily", "cyclo", DAY),
    PredictorSpec("cyclo_weekly", "cyclo", WEEK),
    PredictorSpec("fullrank_daily", "fullrank", DAY),
    PredictorSpec("fullrank_weekly", "fullrank", WEEK),
    PredictorSpec("lowrank_static", "lowrank_static"),
    PredictorSpec("static_oracle", "static_oracle"),
)


def fit_models(specs, training: TrafficMatrix, basis: SpatialBasis | None) -> list[Predictor]:
    """Fit every spec on ``training`` (frozen snapshots, no online state)."""
    out = []
    for s in specs:
        if s.kind == "cyclo":
            out.append(freeze(fit_cyclo(training, basis, CycleConfig(s.cycle,
                                                                    training.grid.resolution)),
                              s.name))
        elif s.kind == "fullrank":
            out.append(freeze(fit_cyclo(training, None, CycleConfig(s.cycle,
                                                                   training.grid.resolution)),
                              s.name))
        elif s.kind == "lowrank_static":
            out.append(fit_lowrank_static(training, basis, s.name))
        elif s.kind in ("lag", "realtime"):
            out.append(LagPredictor(s.lag if s.kind == "lag" else 0, s.name))
        else:
            out.append(StaticOracle(s.name))
    return out


def go_online(predictors, live: TrafficMatrix, start) -> list[Predictor]:
    """Replace cyclo snapshots by online predictors updated per completed live cycle."""
    return [online_from(p, live, start) if isinstance(p, CycloPredictor) else p
            for p in predictors]


@dataclass
class SyntheticRun:
    world: object
    basis: SpatialBasis
    predictors: list
    test_set: list
    result: object
    test_report: dict = field(default_factory=dict)


def run_synthetic(spec: SynthSpec, rank: int, train_days: int, predictor_specs=DEFAULT_PREDICTORS,
                  test_spec: TestSetSpec | None = None, online: bool = True, workers: int = 1,
                  hop_min_count: int = 1000) -> SyntheticRun:
    """Generate a world, fit on the first ``train_days``, evaluate on the rest."""
    world = generate_truth(spec)
    truth = world.truth
    n_train = train_days * DAY // truth.grid.resolution
    training = truth.columns(0, n_train)
    basis = truncated_svd(training, rank)
    preds = fit_models(predictor_specs, training, basis)
    if online:
        preds = go_online(preds, truth, truth.grid.start_epoch + train_days * DAY)
    comms = label_inner_outer(world.network, detect_communities(world.network, spec.seed),
                              spec.seed)
    test_spec = test_spec or TestSetSpec(days=tuple(range(train_days, spec.days)), seed=spec.seed)
    report = {}
    tests = build_test_set(world.network, comms, test_spec, truth, report)
    result = evaluate_suite(world.network, truth, preds, tests, workers=workers,
                            hop_min_count=hop_min_count)
    return SyntheticRun(world, basis, preds, tests, result, report)


def max_prediction_error(predictor: Predictor, truth: TrafficMatrix, first: int) -> float:
    """Largest absolute gap between predictions and truth over columns ``first..``."""
    worst = 0.0
    for l in range(first, truth.n):
        t = truth.grid.slot_time(l)
        w = predictor.predict_weights(t, truth)
        worst = max(worst, float(np.max(np.abs(w - truth.values[:, l]))))
    return worst
