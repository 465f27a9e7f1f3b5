import json

import numpy as np
import pytest

from edgeworth_euler import experiments as ex

GBM = ("GBM", (0.0, 0.2, 1.0))


def test_rate_regression_exact():
    x = np.array([16, 32, 64, 128, 256.0])
    fit = ex.rate_regression(x, 3.0 * x ** -0.5)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert fit.slope_se < 1e-10


def test_rate_regression_weighted_noisy(rs):
    x = np.array([16, 32, 64, 128, 256.0])
    y = x ** -1.0 * np.exp(0.02 * rs.standard_normal(x.size))
    fit = ex.rate_regression(x, y, 0.02 * y)
    assert fit.band[0] < -1.0 < fit.band[1]
    assert fit.slope_se == pytest.approx(0.02 / np.sqrt(np.sum((np.log(x) - np.log(x).mean()) ** 2)), rel=1e-6)


@pytest.mark.parametrize("x,y", [([1, 2], [1, 2]), ([1, 2, 3], [1, 0, 2]), ([0, 1, 2], [1, 1, 1])])
def test_rate_regression_rejects(x, y):
    with pytest.raises(ValueError):
        ex.rate_regression(x, y)


def test_polynomial_test_function_derivatives():
    f = ex.test_function("poly:3")
    x = np.array([-1.5, 0.5, 2.0])
    assert np.allclose(f.f(x), x ** 3)
    assert np.allclose(f.d1(x), 3 * x ** 2)
    assert np.allclose(f.d2(x), 6 * x)
    assert np.allclose(f.d3(x), 6.0)
    g = ex.test_function("poly:1")
    assert np.allclose(g.d2(x), 0) and np.allclose(g.d3(x), 0)


def test_indicator_and_unknown():
    f = ex.test_function("indicator:0.5")
    assert f.f(np.array([0.4, 0.5, 0.6])).tolist() == [1.0, 1.0, 0.0]
    assert f.d1 is None
    with pytest.raises(ValueError):
        ex.test_function("exp:1")


def test_weak_error_rejects_indicator():
    c = ex.Campaign(GBM, (8, 16, 32), m=4, M=100)
    with pytest.raises(ValueError):
        ex.weak_error(c, ex.test_function("indicator:1"))


def test_weak_error_linear_driftless_is_zero():
    c = ex.Campaign(GBM, (8, 16, 32), m=4, M=4000, pred_M=2000)
    t, _ = ex.weak_error(c, ex.test_function("poly:1"))
    d, se = t.column("difference"), t.column("stderr")
    assert np.all(np.abs(d) <= 4 * se)
    pc, pse = t.meta["predicted_constant"], t.meta["predicted_constant_se"]
    assert abs(pc) <= 3 * pse


def test_weak_prediction_gbm_square():
    sym = ex.symbol_sample(GBM, 256, 4, 1.0, 1, 4000, G=("Sigma", "X"))
    c, se = ex.weak_prediction(sym, ex.test_function("poly:2"))
    exact = -0.2 ** 4 / 2 * np.exp(0.2 ** 2)
    assert abs(c - exact) <= 3 * se


def test_weak_prediction_needs_right_functionals():
    sym = ex.symbol_sample(GBM, 16, 4, 1.0, 1, 20)
    with pytest.raises(ValueError):
        ex.weak_prediction(sym, ex.test_function("poly:2"))


def test_common_random_numbers_reduce_variance():
    c = ex.Campaign(("GBM", (0.25, 0.5, 1.0)), (8, 16, 32), m=4, M=4000, pred_M=500, pred_n=16)
    t, _ = ex.weak_error(c, ex.test_function("poly:2"))
    vd = t.column("var_difference")
    assert np.all(vd < 0.1 * (t.column("var_exact") + t.column("var_euler")))


def test_strong_error_table_and_fit():
    c = ex.Campaign(GBM, (16, 32, 64), m=4, M=5000, pred_M=1000)
    t, fit = ex.strong_error(c)
    assert t.columns[:3] == ("n", "M", "empirical")
    assert np.all(np.abs(t.column("ratio") - 1) < 0.1)
    assert fit.slope == pytest.approx(-0.5, abs=0.1)


def test_collect_is_independent_of_workers():
    M = ex.CHUNK + 300
    a = ex.collect(GBM, 8, 2, 1.0, 5, M, {"terminal"}, workers=1)
    b = ex.collect(GBM, 8, 2, 1.0, 5, M, {"terminal"}, workers=2)
    assert a["X_T"].size == M
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_collect_start_offset_matches_slice():
    full = ex.collect(GBM, 8, 2, 1.0, 5, 300, {"terminal"})
    tail = ex.collect(GBM, 8, 2, 1.0, 5, 100, {"terminal"}, start=200)
    assert np.array_equal(full["Xn_T"][200:], tail["Xn_T"])


def test_fast_path_matches_refined():
    spec = ("GBM", (0.25, 0.5, 1.0))
    kinds = {"terminal", "variance"}
    a = ex.collect(spec, 16, 8, 1.0, 2, 200, kinds, resolution="base")
    b = ex.collect(spec, 16, 8, 1.0, 2, 200, kinds, resolution="fine")
    for k in ("X_T", "Xn_T", "V_T"):
        assert np.allclose(a[k], b[k], rtol=1e-10, atol=1e-14)


def test_prediction_sample_is_disjoint():
    sym = ex.symbol_sample(GBM, 8, 2, 1.0, 5, 50, G=("X",))
    emp = ex.collect(GBM, 8, 2, 1.0, 5, 50, {"terminal"})
    assert not np.allclose(sym.G[:, 0], emp["X_T"])


def test_affine_gap_halves_without_noise_multiplier():
    t = ex.affine_gap((32, 64, 128), M=500)
    g = t.column("rms_gap")
    assert np.allclose(g[:-1] / g[1:], 2.0, rtol=0.1)


def test_sup_cdf_distance():
    from scipy import stats
    s = stats.norm.ppf((np.arange(1000) + 0.5) / 1000)
    assert ex.sup_cdf_distance(s, stats.norm.cdf) <= 1e-3 + 1e-12
    assert ex.sup_cdf_distance(s + 1, stats.norm.cdf) > 0.3


def test_table_write_format(tmp_path):
    t = ex.Table("demo", ("n", "value"), [[16, 0.1], [32, 1 / 3]])
    path = t.write(tmp_path)
    text = open(path, newline="").read()
    assert text == "n,value\n16,0.10000000000000001\n32,0.33333333333333331\n"
    assert float(text.splitlines()[2].split(",")[1]) == 1 / 3


def test_manifest_hashes(tmp_path):
    assert ex.git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"
    assert ex.config_hash({"a": 1, "b": [2]}) == ex.config_hash({"b": [2], "a": 1})
    assert ex.config_hash({"a": 1}) != ex.config_hash({"a": 2})
    path = ex.write_manifest(tmp_path, {"a": 1}, 7, {"t.csv": "x"}, {"config.json": b"{}"})
    man = json.load(open(path))
    assert man["seed"] == 7 and man["config_hash"] == ex.config_hash({"a": 1})
    assert man["inputs"]["config.json"] == ex.git_blob_hash(b"{}")
