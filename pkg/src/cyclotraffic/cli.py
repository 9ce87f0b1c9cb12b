"""Command-line entry point: ``cyclotraffic <subcommand> [--config FILE] [overrides]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
The config path defaults to ``$CYCLOTRAFFIC_CONFIG`` when ``--config`` is absent.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from . import io
from .core import DAY
from .errors import ConfigError, CycloTrafficError, InsufficientData
from .evaluation import (DEFAULT_ALPHAS, TestSetSpec, build_test_set, detect_communities,
                         evaluate_suite, label_inner_outer, summary_table, write_outputs)
from .experiment import DEFAULT_PREDICTORS, PredictorSpec, fit_models, go_online
from .lowrank import mdl_order, psd_of_modes, save_basis, truncated_svd
from .predictors import load_model, save_model
from .preprocess import PreprocessConfig, PreprocessReport, align_series, run_pipeline
from .synthgen import PRESETS, SynthSpec, generate_truth, inject_missingness

log = logging.getLogger("cyclotraffic")

ENV_CONFIG = "CYCLOTRAFFIC_CONFIG"

SCHEMA = {
    "seed": int,
    "workers": int,
    "paths": {"out_dir", "graph", "truth", "observed", "raw", "clean", "clean_graph",
              "models", "results", "spectra"},
    "synth": None,       # SynthSpec fields plus "preset"
    "preprocess": None,  # PreprocessConfig fields except grid
    "fit": {"matrix", "train_days", "rank", "predictors"},
    "evaluate": {"test_days", "hours", "min_travel_time", "max_queries", "alphas",
                 "hop_min_count", "online", "rest_days"},
    "spectra": {"modes", "nfft", "nperseg", "noverlap", "fs"},
    "mdl": {"matrix", "train_days"},
}


class RunConfig:
    """Validated configuration tree with path helpers."""

    def __init__(self, data: dict | None = None, base_dir: Path | None = None):
        data = dict(data or {})
        _validate(data)
        self.data = data
        self.base_dir = base_dir or Path.cwd()
        self.seed = int(data.get("seed", 0))
        self.workers = int(data.get("workers", 1))
        alphas = self.section("evaluate").get("alphas", list(DEFAULT_ALPHAS))
        for a in alphas:
            if not 0 < float(a) < 1:
                raise ConfigError(f"evaluate.alphas: {a} not in (0, 1)")

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls(data, path.parent)

    def section(self, name) -> dict:
        return dict(self.data.get(name) or {})

    def path(self, key: str, default: str) -> Path:
        paths = self.section("paths")
        out_dir = Path(paths.get("out_dir", "run"))
        if not out_dir.is_absolute():
            out_dir = self.base_dir / out_dir
        if key == "out_dir":
            return out_dir
        p = paths.get(key)
        if p is None:
            return out_dir / default
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def require(self, key: str, default: str) -> Path:
        p = self.path(key, default)
        if not p.exists():
            raise ConfigError(f"paths.{key}: {p} does not exist")
        return p


def _validate(data: dict):
    unknown = set(data) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    for key, allowed in SCHEMA.items():
        sec = data.get(key)
        if sec is None or allowed in (int,):
            continue
        if not isinstance(sec, dict):
            raise ConfigError(f"{key} must be a mapping")
        if key == "synth":
            allowed = {f.name for f in fields(SynthSpec)} | {"preset"}
        elif key == "preprocess":
            allowed = {f.name for f in fields(PreprocessConfig)} - {"grid"}
        bad = set(sec) - set(allowed)
        if bad:
            raise ConfigError(f"unknown key(s) in {key}: {sorted(bad)}")


def synth_spec(cfg: RunConfig) -> SynthSpec:
    sec = cfg.section("synth")
    name = sec.pop("preset", None)
    if name is not None and name not in PRESETS:
        raise ConfigError(f"synth.preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = dict(PRESETS[name]) if name else {}
    base.update(sec)
    base.setdefault("seed", cfg.seed)
    try:
        return SynthSpec.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}") from exc


# ------------------------------------------------------------------ commands

def cmd_synth(cfg: RunConfig, args) -> int:
    spec = synth_spec(cfg)
    out = cfg.path("out_dir", "")
    out.mkdir(parents=True, exist_ok=True)
    world = generate_truth(spec)
    observed = inject_missingness(world.truth, spec)
    io.write_graph(cfg.path("graph", "graph.csv"), world.network,
                   comment=f"synthetic network, seed={spec.seed}")
    io.write_matrix(cfg.path("truth", "truth.ctx"), world.truth, {"provenance": "synth truth"})
    io.write_matrix(cfg.path("observed", "observed.ctx"), observed,
                    {"provenance": "synth observed"})
    record = {"spec": spec.to_dict(), "m": world.network.n_edges,
              "n_vertices": world.network.n_vertices, "n_intervals": world.truth.n,
              "observed_missing_fraction": float((~observed.mask).mean())}
    (out / "spec.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    print(f"synth: m={world.network.n_edges} n={world.truth.n} -> {out}")
    return 0


def _preprocess_cfg(cfg: RunConfig, grid) -> PreprocessConfig:
    try:
        return PreprocessConfig(grid=grid, **cfg.section("preprocess"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"preprocess: {exc}") from exc


def cmd_preprocess(cfg: RunConfig, args) -> int:
    network = io.read_graph(cfg.require("graph", "graph.csv"))
    report = PreprocessReport()
    raw_path = cfg.path("raw", "raw.csv")
    if cfg.section("paths").get("raw") is not None:
        series = io.read_raw_series_csv(cfg.require("raw", "raw.csv"))
        ref = io.read_matrix(cfg.require("observed", "observed.ctx")).grid \
            if cfg.path("observed", "observed.ctx").exists() else None
        if ref is None:
            raise ConfigError("raw alignment needs a reference grid (paths.observed)")
        pcfg = _preprocess_cfg(cfg, ref)
        order = [str(i) for i in range(network.n_edges)]
        missing = [s for s in order if s not in series]
        if missing:
            raise ConfigError(f"raw series lacks segment(s) {missing[:5]}")
        matrix, report.aligned_snapped, report.aligned_interpolated = align_series(
            series, pcfg, order)
        log.info("aligned %d raw series from %s", len(order), raw_path)
    else:
        matrix = io.read_matrix(cfg.require("observed", "observed.ctx"))
        pcfg = _preprocess_cfg(cfg, matrix.grid)
    if matrix.m != network.n_edges:
        raise ConfigError(f"matrix has {matrix.m} rows, graph has {network.n_edges} segments")
    try:
        clean, net, report = run_pipeline(matrix, network, pcfg, report)
    except CycloTrafficError as exc:
        raise CycloTrafficError(f"preprocess pipeline: {exc}") from exc
    out = cfg.path("out_dir", "")
    out.mkdir(parents=True, exist_ok=True)
    io.write_matrix(cfg.path("clean", "clean.ctx"), clean, {"provenance": "preprocessed"})
    io.write_graph(cfg.path("clean_graph", "clean_graph.csv"), net, comment="preprocessed")
    rep = report.as_dict()
    (out / "preprocess_report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")
    print(f"preprocess: {rep['segments_in']} -> {rep['segments_out']} segments, "
          f"{rep['cells_imputed']} cells imputed, {len(rep['rows_dropped'])} rows dropped")
    return 0


def _training(cfg: RunConfig, section: str):
    sec = cfg.section(section)
    which = sec.get("matrix", "truth")
    if which == "clean":
        matrix = io.read_matrix(cfg.require("clean", "clean.ctx"))
        network = io.read_graph(cfg.require("clean_graph", "clean_graph.csv"))
    elif which == "truth":
        matrix = io.read_matrix(cfg.require("truth", "truth.ctx"))
        network = io.read_graph(cfg.require("graph", "graph.csv"))
    else:
        raise ConfigError(f"{section}.matrix must be 'truth' or 'clean', got {which!r}")
    days = sec.get("train_days", 28)
    n_train = int(days * DAY // matrix.grid.resolution)
    if n_train <= 0:
        raise ConfigError(f"{section}.train_days must be positive")
    n_train = min(n_train, matrix.n)
    return matrix, network, matrix.columns(0, n_train), days


def _predictor_specs(cfg: RunConfig):
    raw = cfg.section("fit").get("predictors")
    if raw is None:
        return list(DEFAULT_PREDICTORS)
    try:
        return [PredictorSpec.from_dict(d) for d in raw]
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"fit.predictors: {exc}") from exc


def cmd_fit(cfg: RunConfig, args) -> int:
    matrix, network, training, days = _training(cfg, "fit")
    rank = args.rank if getattr(args, "rank", None) is not None else cfg.section("fit").get("rank", 25)
    specs = _predictor_specs(cfg)
    if any(s.kind == "cyclo" and s.cycle > training.n * training.grid.resolution for s in specs):
        raise InsufficientData("training window shorter than one cycle")
    if not training.fully_observed:
        raise InsufficientData("training slice has missing cells; preprocess it first")
    basis = truncated_svd(training, int(rank), with_right=getattr(args, "mdl", False))
    models = cfg.path("models", "models")
    models.mkdir(parents=True, exist_ok=True)
    save_basis(models / "basis.ctx", basis)
    preds = fit_models(specs, training, basis)
    for p in preds:
        save_model(models / f"{p.name}.ctx", p, {"train_days": days})
    manifest = {"rank": int(rank), "train_days": days, "predictors": [p.name for p in preds],
                "m": training.m}
    (models / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"fit: rank={rank} on {training.n} intervals; wrote {len(preds)} models to {models}")
    if getattr(args, "mdl", False):
        _print_mdl(training)
    return 0


def _print_mdl(training):
    m, n = min(training.m, training.n), max(training.m, training.n)
    sv = truncated_svd(training, 1).singular_values
    k, curve = mdl_order(sv, m, n)
    print("k,mdl")
    for i, v in enumerate(curve.tolist()):
        print(f"{i},{v!r}")
    print(f"k*={k}")
    return k


def cmd_mdl(cfg: RunConfig, args) -> int:
    _, _, training, _ = _training(cfg, "mdl")
    _print_mdl(training)
    return 0


def cmd_spectra(cfg: RunConfig, args) -> int:
    sec = cfg.section("spectra")
    _, _, training, _ = _training(cfg, "fit")
    modes = args.modes if getattr(args, "modes", None) else sec.get("modes", 8)
    mode_list = list(range(1, modes + 1)) if isinstance(modes, int) else list(modes)
    k = max(mode_list)
    if k > min(training.m, training.n) or min(mode_list) < 1:
        raise ConfigError(f"spectra.modes: mode index out of range 1..{min(training.m, training.n)}")
    basis = truncated_svd(training, k, with_right=True)
    kw = {key: sec[key] for key in ("nfft", "nperseg", "noverlap", "fs") if key in sec}
    kw.setdefault("nfft", min(144 * 28, training.n))
    reports = psd_of_modes(basis, mode_list, **kw)
    out = cfg.path("spectra", "spectra")
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        with (out / f"psd_mode{rep.mode}.csv").open("w", encoding="utf-8") as fh:
            fh.write("frequency_per_day,psd\n")
            for f, p in zip(rep.frequencies.tolist(), rep.psd.tolist()):
                fh.write(f"{f!r},{p!r}\n")
        print(f"mode {rep.mode}: peak {rep.peak_frequency(fmin=rep.bin_width / 2):.4f}/day "
              f"(DC share {rep.psd[0] / rep.psd.sum():.3f})")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    sec = cfg.section("evaluate")
    matrix, network, training, days = _training(cfg, "fit")
    models = cfg.require("models", "models")
    manifest = json.loads((models / "manifest.json").read_text(encoding="utf-8"))
    names = args.predictors.split(",") if getattr(args, "predictors", None) else \
        manifest["predictors"]
    preds = [load_model(models / f"{n}.ctx") for n in names]
    if sec.get("online", True):
        preds = go_online(preds, matrix, matrix.grid.start_epoch + days * DAY)
    last_day = int(matrix.grid.end_epoch // DAY)
    test_days = sec.get("test_days", [days, last_day])
    spec = TestSetSpec(days=tuple(range(int(test_days[0]), int(test_days[1]))),
                       hours=tuple(sec.get("hours", range(6, 19))),
                       min_travel_time=float(sec.get("min_travel_time", 1800.0)),
                       rest_days=tuple(sec.get("rest_days", (5, 6))),
                       max_queries=sec.get("max_queries"), seed=cfg.seed)
    comms = label_inner_outer(network, detect_communities(network, cfg.seed), cfg.seed)
    report = {}
    tests = build_test_set(network, comms, spec, matrix, report)
    workers = args.workers if getattr(args, "workers", None) else cfg.workers
    result = evaluate_suite(network, matrix, preds, tests,
                            alphas=tuple(sec.get("alphas", DEFAULT_ALPHAS)), workers=workers,
                            hop_min_count=int(sec.get("hop_min_count", 1000)))
    out = cfg.path("results", "results")
    write_outputs(result, out)
    meta = {"communities": comms.count, "modularity": comms.modularity,
            "inner": sorted(comms.inner), "test_set": report}
    (out / "testset.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(summary_table(result), end="")
    total_err = sum(sum(e.values()) for e in result.errors.values())
    if total_err:
        print(f"{total_err} routing failures excluded (see stats.json)")
    if not result.samples:
        print("evaluate: every query failed", file=sys.stderr)
        return 1
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    out = cfg.require("results", "results")
    stats = json.loads((out / "stats.json").read_text(encoding="utf-8"))
    alphas = stats["alphas"]
    rows = sorted(stats["predictors"].items(), key=lambda kv: kv[1]["mean"])
    print(f"{'predictor':<24}{'mean':>10}" + "".join(f"{'q' + format(a, 'g'):>10}" for a in alphas))
    for name, st in rows:
        print(f"{name:<24}{st['mean']:>10.3f}" + "".join(
            f"{st['quantiles'][format(a, 'g')]:>10.3f}" for a in alphas))
    return 0


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "fit": cmd_fit, "mdl": cmd_mdl,
            "spectra": cmd_spectra, "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclotraffic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help=f"config file (default ${ENV_CONFIG})")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        if name == "fit":
            p.add_argument("--rank", type=int)
            p.add_argument("--mdl", action="store_true", help="also print the MDL curve and k*")
        if name == "evaluate":
            p.add_argument("--workers", type=int)
            p.add_argument("--predictors", help="comma-separated subset of fitted models")
        if name == "spectra":
            p.add_argument("--modes", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = args.config or os.environ.get(ENV_CONFIG)
        cfg = RunConfig.load(path) if path else RunConfig({})
        if args.seed is not None:
            cfg.data["seed"] = cfg.seed = args.seed
        if args.out_dir:
            cfg.data.setdefault("paths", {})
            cfg.data["paths"] = dict(cfg.data["paths"] or {}, out_dir=str(Path(args.out_dir).resolve()))
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"cyclotraffic {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (CycloTrafficError, ValueError, OSError) as exc:
        print(f"cyclotraffic {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
