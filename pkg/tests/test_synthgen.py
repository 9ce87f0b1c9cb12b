import numpy as np
import pytest

from cyclotraffic.core import DAY, WEEK
from cyclotraffic.evaluation import (TestSetSpec, build_test_set, detect_communities,
                                     evaluate_suite, label_inner_outer)
from cyclotraffic.lowrank import psd_of_modes, truncated_svd
from cyclotraffic.predictors import CycleConfig, LagPredictor, fit_cyclo_online
from cyclotraffic.preprocess import PreprocessConfig, drop_blackout_segments, largest_scc
from cyclotraffic.synthgen import (PRESETS, STREAMS, SynthSpec, generate_network, generate_truth,
                                   inject_missingness, preset, rng_stream, to_raw_series)


def test_two_vertex_network():
    net = generate_network(SynthSpec(n_vertices=2, degree=1.0, planar=False))
    assert net.n_edges == 2
    assert sorted(zip(net.tails.tolist(), net.heads.tolist())) == [(0, 1), (1, 0)]


@pytest.mark.parametrize("planar", [True, False])
def test_network_strongly_connected_and_seeded(planar):
    spec = SynthSpec(n_vertices=80, degree=2.5, planar=planar, seed=9)
    a, b = generate_network(spec), generate_network(spec)
    np.testing.assert_array_equal(a.tails, b.tails)
    np.testing.assert_array_equal(a.heads, b.heads)
    scc = largest_scc(a)
    assert scc.vertex_ids.tolist() == list(range(80))
    assert a.n_edges / a.n_vertices == pytest.approx(2.5, rel=0.1)


def test_noiseless_truth_rank_and_periodicity():
    spec = SynthSpec(n_vertices=40, days=14, k_true=3, seed=1)
    w = generate_truth(spec).truth.values
    assert np.linalg.matrix_rank(w, tol=1e-8 * np.abs(w).max()) <= spec.k_true + 1
    per_week = WEEK // spec.resolution
    np.testing.assert_array_equal(w[:, :per_week], w[:, per_week:])


def test_truth_bit_identical_and_positive():
    spec = SynthSpec(n_vertices=40, days=3, k_true=2, noise_std=0.2, noise_corr=0.5,
                     transient_rate=20.0, seed=3)
    a, b = generate_truth(spec).truth, generate_truth(spec).truth
    assert a.values.tobytes() == b.values.tobytes()
    assert a.values.min() >= spec.floor


def test_streams_are_independent():
    assert len(set(STREAMS.values())) == len(STREAMS)
    x = rng_stream(5, "noise").random(4)
    y = rng_stream(5, "temporal").random(4)
    assert not np.array_equal(x, y)
    np.testing.assert_array_equal(x, rng_stream(5, "noise").random(4))
    with pytest.raises(KeyError):
        rng_stream(5, "nope")


def test_planted_frequencies_in_right_factors():
    spec = SynthSpec(n_vertices=40, days=28, k_true=2, seed=0,
                     templates=((DAY, 1, 1.0), (WEEK, 1, 1.0)))
    world = generate_truth(spec)
    w = world.truth.values
    centred = w - w.mean(axis=1, keepdims=True)
    basis = truncated_svd(centred, 2, with_right=True)
    peaks = sorted(r.peak_frequency(fmin=r.bin_width / 2) for r in psd_of_modes(basis, [1, 2]))
    bw = psd_of_modes(basis, [1])[0].bin_width
    assert abs(peaks[0] - 1 / 7) <= bw and abs(peaks[1] - 1.0) <= bw


def test_missingness_rates():
    spec = SynthSpec(n_vertices=120, days=14, k_true=2, missing_rate=0.055, seed=2)
    truth = generate_truth(spec).truth
    obs = inject_missingness(truth, spec)
    assert truth.fully_observed
    assert abs((~obs.mask).mean() - 0.055) <= 0.005
    none = inject_missingness(truth, SynthSpec(n_vertices=120, days=14, k_true=2, seed=2))
    assert none.mask.all()
    np.testing.assert_array_equal(obs.values[obs.mask], truth.values[obs.mask])


def test_blackout_rows_dropped_by_preprocess():
    spec = SynthSpec(n_vertices=40, days=2, k_true=2, blackout_rate=0.2, blackout_intervals=24,
                     seed=4)
    obs = inject_missingness(generate_truth(spec).truth, spec)
    hit = np.flatnonzero((~obs.mask).any(axis=1))
    assert len(hit) > 0
    _, removed = drop_blackout_segments(obs, PreprocessConfig(grid=obs.grid))
    assert removed.tolist() == hit.tolist()


def test_raw_series_export():
    spec = SynthSpec(n_vertices=10, days=1, k_true=1, seed=0)
    truth = generate_truth(spec).truth
    raw = to_raw_series(truth, jitter=0.0)
    assert len(raw) == truth.m
    t0, v0 = raw["0"][0]
    assert t0 == 0 and v0 == truth.values[0, 0]


def test_presets_and_validation():
    assert set(PRESETS) >= {"exact", "hierarchy"}
    assert preset("exact").k_true == 5
    with pytest.raises(ValueError):
        SynthSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        SynthSpec(noise_corr=1.0)
    spec = preset("hierarchy", seed=3)
    assert SynthSpec.from_dict(spec.to_dict()) == spec


def test_noise_raises_regret_on_average():
    """Mean regret of every non-clairvoyant predictor grows with noise (averaged over seeds)."""
    levels = (0.0, 0.1, 0.2)
    names = ("lag_10min", "lag_1d", "cyclo_daily")
    means = {n: [] for n in names}
    for noise in levels:
        acc = {n: [] for n in names}
        for seed in range(5):
            spec = SynthSpec(n_vertices=50, days=4, k_true=2, noise_std=noise, seed=seed)
            world = generate_truth(spec)
            net, truth = world.network, world.truth
            comms = label_inner_outer(net, detect_communities(net, seed), seed)
            tests = build_test_set(net, comms, TestSetSpec(days=(2, 3), min_travel_time=600.0,
                                                           max_queries=40, seed=seed), truth)
            basis = truncated_svd(truth.columns(0, 2 * 144), 3)
            preds = [LagPredictor(600, "lag_10min"), LagPredictor(DAY, "lag_1d"),
                     fit_cyclo_online(truth, basis, CycleConfig(DAY), 2, "cyclo_daily")]
            res = evaluate_suite(net, truth, preds, tests)
            for n in names:
                acc[n].append(res.stats[n].mean)
        for n in names:
            means[n].append(float(np.mean(acc[n])))
    for n in names:
        assert means[n][0] <= means[n][1] <= means[n][2], (n, means[n])
