from __future__ import annotations

import math

import numpy as np
import pytest

from qdetector import model
from qdetector import sweep as sw


def fixed_config(**kw):
    ranges = dict(T_C=0.2, g_SG=1.0, g_MG=1.0, gamma_M=1.0, gamma_G=0.7, gamma_D=0.8, f_EC=0.2)
    return sw.SweepConfig(ranges=ranges, T_V_lower=-3.0, T_V_upper=-3.0, **kw)


# --- sampling -------------------------------------------------------------------


def test_zero_width_ranges_give_identical_samples():
    params = sw.sample(fixed_config(N=5))
    assert all(p == params[0] for p in params)
    assert params[0] == model.appendix_e_params()


def test_same_seed_same_samples():
    a = sw.sample(sw.preset("fig3", N=50, seed=7))
    b = sw.sample(sw.preset("fig3", N=50, seed=7))
    c = sw.sample(sw.preset("fig3", N=50, seed=8))
    assert a == b
    assert a != c


def test_samples_stay_inside_ranges_and_below_threshold():
    cfg = sw.preset("fig3", N=10_000, seed=3)
    for s in sw.draw_samples(cfg):
        p = s.params
        thr = sw.tv_threshold(p.T_C, p.f_EC, p.E_G)
        assert p.T_V <= thr
        if s.status == "ok" and p.T_V != thr * (1 + cfg.epsilon):
            assert cfg.T_V_lower <= p.T_V
        if thr < cfg.T_V_lower:
            assert s.status == "rejected:empty-tv-range"
        assert 0.05 <= p.T_C <= 1.0
        assert any(lo <= p.gamma_D <= hi for lo, hi in cfg.ranges["gamma_D"])
        assert p.gamma_G == 0.7


def test_threshold_lies_inside_engine_regime():
    T_C, f_EC, E_G = 0.3, 0.4, 9.0
    thr = sw.tv_threshold(T_C, f_EC, E_G)
    E_C = f_EC * E_G
    assert thr == pytest.approx(-T_C * (E_G + E_C) / E_C)
    # the hot temperature diverges at -T_C E_G / E_C, above the threshold
    assert thr < -T_C * E_G / E_C
    T_H = model.hot_temperature(thr * (1 + 1e-6), T_C, E_C, E_G + E_C)
    assert T_C * (E_G + E_C) / E_C < T_H < math.inf


def test_config_validation_and_round_trip(tmp_path):
    cfg = sw.preset("fig4", N=20, seed=11)
    path = tmp_path / "sweep.json"
    sw.write_sweep_config(path, cfg)
    assert sw.load_sweep_config(path) == cfg
    with pytest.raises(KeyError):
        sw.SweepConfig(ranges={"T_C": 0.2})
    with pytest.raises(KeyError):
        cfg.replace(ranges={**cfg.as_dict()["ranges"], "bogus": 1.0})
    with pytest.raises(ValueError):
        cfg.replace(N=0)
    with pytest.raises(ValueError):
        cfg.replace(filters=["eta_D ~ 1"])


# --- evaluation -----------------------------------------------------------------------


def test_fig3_points_mostly_evaluate():
    records = sw.run_sweep(sw.preset("fig3", N=100, seed=0), jobs=1)
    assert [r.index for r in records] == list(range(100))
    a = sw.audit(records)
    assert a["n_ok"] >= 80
    for status in a["status_counts"]:
        assert status == "ok" or status.startswith("rejected:")
    assert a["bound_violations"] == 0
    assert a["inequality_violations"] == 0


def test_records_round_trip(tmp_path):
    records = sw.run_sweep(sw.preset("fig3", N=6, seed=1), jobs=1)
    path = tmp_path / "records.csv"
    sw.write_records(path, records)
    rows = sw.read_records(path)
    assert len(rows) == 6
    for rec, row in zip(records, rows):
        assert row["status"] == rec.status
        assert row["T_C"] == rec.params.T_C
        if rec.ok:
            assert row["eta_D"] == rec.report.eta_D


def test_rejected_point_is_tagged():
    rec = sw.evaluate_point(model.appendix_e_params(T_V=2.0), index=4)
    assert rec.index == 4
    assert rec.status == "rejected:out-of-engine-regime"
    assert math.isnan(rec.row()["eta_D"])


def test_gain_scan():
    base = model.appendix_e_params()
    recs = sw.gain_scan(base, [3.0, 6.0, 9.0, 12.0])
    assert [r.params.gain for r in recs] == [3.0, 6.0, 9.0, 12.0]
    assert all(r.ok for r in recs)
    assert recs[2].params == base
    S = [r.report.Sigma_tot for r in recs]
    assert all(b > a for a, b in zip(S, S[1:]))
    with pytest.raises(ValueError):
        sw.gain_scan(base, [0.0])


# --- filters and fits ---------------------------------------------------------------------


def test_filters():
    f = sw.parse_filter("0.72<eta_D<0.7358")
    assert f({"eta_D": 0.73}) and not f({"eta_D": 0.7358})
    g = sw.parse_filter("g_SG>=1.5")
    assert g({"g_SG": 1.5}) and not g({"g_SG": 1.49})
    h = sw.parse_filter("R_dc>0")
    assert h({"R_dc": 1e-30}) and not h({"R_dc": -1e-30})
    b = sw.band_filter("g_SG", (0.1, 0.2))
    assert b({"g_SG": 0.1}) and b({"g_SG": 0.2}) and not b({"g_SG": 0.21})
    with pytest.raises(ValueError):
        sw.parse_filter("eta_D")
    rows = [{"status": "ok", "x": 1.0}, {"status": "rejected:x", "x": 1.0}, {"status": "ok", "x": 3.0}]
    assert sw.select(rows, ["x<2"]) == [rows[0]]
    assert len(sw.select(rows, ok_only=False)) == 3


def test_inverse_fit_exact():
    x = np.array([0.5, 1.0, 2.0, 4.0])
    f = sw.fit_inverse(x, 5.0 / x)
    assert f.a == pytest.approx(5.0, rel=1e-14)
    assert f.r2 == pytest.approx(1.0, abs=1e-14)
    assert f.n == 4
    with pytest.raises(ValueError):
        sw.fit_inverse(x[:2], 5.0 / x[:2])
    with pytest.raises(ValueError):
        sw.fit_inverse(-x, 5.0 / x)


def test_linear_and_loglog_fits_exact():
    x = np.linspace(1.0, 5.0, 7)
    f = sw.fit_linear(x, 2.0 * x - 3.0)
    assert (f.a, f.b) == pytest.approx((2.0, -3.0), rel=1e-12)
    assert f.r2 == pytest.approx(1.0, abs=1e-12)
    g = sw.fit_loglog(x, 5.0 / x)
    assert g.a == pytest.approx(-1.0, rel=1e-12)
    assert g.b == pytest.approx(math.log(5.0), rel=1e-12)
    with pytest.raises(ValueError):
        sw.fit_linear([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_r2_of_poor_fit_can_be_negative():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert sw.fit_inverse(x, x).r2 < 0


def test_banded_fits_and_spearman():
    rng = np.random.default_rng(0)
    rows = []
    for g in (0.15, 0.45, 1.7):
        for x in rng.uniform(1.0, 10.0, 20):
            rows.append({"status": "ok", "g_SG": g, "R_dc": x, "jitter_rms": 3.0 * g / x})
    fits = sw.banded_fits(rows, "inverse", "R_dc", "jitter_rms", sw.FIG4_BANDS)
    assert [f.a for f in fits] == pytest.approx([0.45, 1.35, 5.1], rel=1e-12)
    assert all(f.n == 20 for f in fits)
    assert sw.spearman([1, 2, 3, 4], [8, 4, 2, 1]) == pytest.approx(-1.0)


def test_inverse_gap_column():
    row = {"lambda1_re": -0.25}
    assert sw.derived(row, "inv_gap") == 4.0
