import numpy as np
import pytest

from cyclotraffic import io
from cyclotraffic.core import TimeGrid, TrafficMatrix
from cyclotraffic.lowrank import load_basis, save_basis, truncated_svd
from cyclotraffic.predictors import (CycleConfig, LagPredictor, fit_cyclo, fit_lowrank_static,
                                     freeze, load_model, save_model)

from conftest import ring


def test_graph_roundtrip(tmp_path):
    net = ring(5, chords=[(0, 2)])
    p = tmp_path / "g.csv"
    io.write_graph(p, net, comment="test graph")
    back = io.read_graph(p)
    assert back.n_vertices == net.n_vertices
    np.testing.assert_array_equal(back.tails, net.tails)
    np.testing.assert_array_equal(back.heads, net.heads)
    np.testing.assert_array_equal(back.rows, net.rows)


def test_graph_parses_comments(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("# a comment\n0,0,1,1\n\n1,1,0,0  # trailing\n", encoding="utf-8")
    net = io.read_graph(p)
    assert net.n_vertices == 2
    assert net.rows.tolist() == [1, 0]


def test_matrix_roundtrip_with_mask(tmp_path):
    rng = np.random.default_rng(1)
    vals = rng.uniform(10, 100, (4, 7))
    mask = rng.random((4, 7)) > 0.2
    m = TrafficMatrix(TimeGrid(86400, 7, 300), np.where(mask, vals, np.nan), mask)
    p = tmp_path / "m.ctx"
    io.write_matrix(p, m)
    back = io.read_matrix(p)
    assert back.grid == m.grid
    np.testing.assert_array_equal(back.mask, mask)
    np.testing.assert_array_equal(back.values[mask], vals[mask])
    assert p.read_bytes()[:8] == b"CTXARRAY"


def test_container_rejects_garbage(tmp_path):
    p = tmp_path / "x.ctx"
    p.write_bytes(b"NOTACTX!" + b"\0" * 20)
    with pytest.raises(ValueError):
        io.read_container(p)


def test_matrix_csv_roundtrip(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("100,,120\n90,95,\n", encoding="utf-8")
    m = io.read_matrix_csv(p, start_epoch=0, resolution=600)
    assert m.mask.tolist() == [[True, False, True], [True, True, False]]
    q = tmp_path / "n.csv"
    io.write_matrix_csv(q, m)
    again = io.read_matrix_csv(q)
    np.testing.assert_array_equal(again.mask, m.mask)
    np.testing.assert_array_equal(again.values[m.mask], m.values[m.mask])


def test_raw_series_roundtrip(tmp_path):
    series = {"a": [(0.0, 100.0), (610.0, 120.5)], "b": [(5.0, 42.0)]}
    p = tmp_path / "raw.csv"
    io.write_raw_series_csv(p, series)
    assert io.read_raw_series_csv(p) == series


def test_basis_and_model_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    w = TrafficMatrix(TimeGrid(0, 288, 600), rng.uniform(50, 150, (6, 288)))
    basis = truncated_svd(w, 3)
    save_basis(tmp_path / "b.ctx", basis)
    b2 = load_basis(tmp_path / "b.ctx")
    np.testing.assert_array_equal(b2.u_bar, basis.u_bar)
    np.testing.assert_array_equal(b2.singular_values, basis.singular_values)
    preds = [freeze(fit_cyclo(w, basis, CycleConfig(86400)), "c"),
             freeze(fit_cyclo(w, None, CycleConfig(86400)), "f"),
             fit_lowrank_static(w, basis), LagPredictor(600, "lag")]
    for p in preds:
        save_model(tmp_path / f"{p.name}.ctx", p)
        q = load_model(tmp_path / f"{p.name}.ctx")
        assert q.tag == p.tag and q.name == p.name
        for t in (600, 3000, 86400 + 600):
            np.testing.assert_array_equal(q.predict_weights(t, w), p.predict_weights(t, w))
