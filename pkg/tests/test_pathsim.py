import io

import numpy as np
import pytest

from edgeworth_euler import builtin_model
from edgeworth_euler.pathsim import (BrownianPath, GridError, TimeGrid, affine_euler, affine_explicit,
                                     couple, dump_paths, euler_coarse, euler_path, load_paths,
                                     sample_brownian, sigma_path, simulate)


def test_grid_embeds_coarse_and_T_points():
    g = TimeGrid(8, 4, (0.3, 1.0))
    ft = g.fine_times
    assert ft[0] == 0 and ft[-1] == 1 and np.all(np.diff(ft) > 0)
    for i in range(9):
        assert ft[g.coarse_index[i]] == pytest.approx(i / 8, abs=1e-15)
    assert set(np.round(ft[g.T_index], 15)) == {0.3, 1.0}


@pytest.mark.parametrize("T", [0.0, 1.5, -0.2])
def test_grid_rejects_bad_times(T):
    with pytest.raises(GridError):
        TimeGrid(4, 2, (T,))


def test_phi_and_tau():
    g = TimeGrid(4, 3)
    t = g.fine_times
    assert np.allclose(g.tau, t - np.floor(t * 4 + 1e-12) / 4)


def test_same_stream_reproducible_and_streams_distinct():
    g = TimeGrid(16, 8)
    a = sample_brownian(g, 42, [3, 4])
    b = sample_brownian(g, 42, [3])
    assert np.array_equal(a.increments[0], b.increments[0])
    assert not np.array_equal(a.increments[0], a.increments[1])


@pytest.mark.parametrize("m", [2, 3, 8])
def test_coarse_values_nested_across_refinement(m):
    base = sample_brownian(TimeGrid(16, 1), 5, np.arange(10))
    fine = sample_brownian(TimeGrid(16, m), 5, np.arange(10))
    assert np.array_equal(base.W, fine.W[:, ::m])


def test_dyadic_refinement_nested():
    a = sample_brownian(TimeGrid(8, 4), 5, np.arange(10))
    b = sample_brownian(TimeGrid(8, 16), 5, np.arange(10))
    assert np.array_equal(a.W, b.W[:, ::4])


def test_increment_variance():
    g = TimeGrid(512, 1)
    dW = sample_brownian(g, 11, np.arange(100_000)).increments[:, 0]
    h = 1 / 512
    se = h * np.sqrt(2 / dW.size)
    assert abs(dW.var(ddof=1) - h) < 5 * se


def test_coupling_start_values(gbm):
    cp = simulate(gbm, TimeGrid(8, 4), 1, np.arange(20))
    assert np.all(cp.X_ref[:, 0] == 1) and np.all(cp.X_euler[:, 0] == 1)
    assert np.all(cp.Sigma[:, 0] == 1) and np.all(cp.Sigma > 0)
    assert cp.ref_exact and not cp.flags.any()


def test_euler_exact_for_brownian_motion():
    m = builtin_model("ConstDiff", (0, 0.7, 0.3))
    cp = simulate(m, TimeGrid(8, 8), 2, np.arange(10))
    assert np.allclose(cp.X_euler, 0.3 + 0.7 * cp.path.W, atol=1e-14, rtol=0)
    assert np.max(np.abs(cp.X_euler - cp.X_ref)) < 1e-14


def test_single_gbm_step():
    m = builtin_model("GBM", (0.1, 0.3, 2.0))
    g = TimeGrid(1, 1)
    p = BrownianPath.from_increments(g, np.array([[0.4]]))
    assert euler_path(m, p)[0, 1] == pytest.approx(2.0 * (1 + 0.1 + 0.3 * 0.4), rel=1e-15)


def test_euler_frozen_within_coarse_interval(gbm):
    cp = simulate(gbm, TimeGrid(4, 8), 3, np.arange(3))
    g = cp.grid
    # inside an interval, X^n is affine in (t − φ, W − W_φ) with frozen coefficients
    xc = cp.X_coarse[:, g.coarse_of_fine]
    expect = xc + gbm.a(xc) * g.tau + gbm.b(xc) * (cp.path.W - cp.path.W[:, g.phi_index])
    assert np.array_equal(cp.X_euler, expect)
    assert np.allclose(cp.X_euler[:, g.coarse_index], euler_coarse(gbm, cp.path), rtol=0, atol=1e-15)


def test_constdiff_differs_only_by_drift():
    m = builtin_model("ConstDiff", (2, 0.5, 0.1))
    cp = simulate(m, TimeGrid(8, 4), 1, np.arange(5))
    g = cp.grid
    xc = cp.X_coarse[:, g.coarse_of_fine]
    diff = cp.X_euler - xc
    assert np.allclose(diff - m.a(xc) * g.tau, 0.5 * (cp.path.W - cp.path.W[:, g.phi_index]), atol=1e-15)


def test_gbm_sigma_identity(gbm):
    cp = simulate(gbm, TimeGrid(16, 16), 4, np.arange(50))
    rel = np.max(np.abs(cp.Sigma - cp.X_ref) / cp.X_ref)
    assert rel < 1e-12


def test_ou_sigma_deterministic():
    m = builtin_model("OU", (1.3, 0.5, 0.0))
    cp = simulate(m, TimeGrid(8, 4), 4, np.arange(3))
    assert np.allclose(cp.Sigma, np.exp(-1.3 * cp.grid.fine_times)[None, :], rtol=1e-14)


def test_sigma_solves_linear_sde(linear):
    errs = []
    for m in (8, 16):
        cp = simulate(linear, TimeGrid(8, m), 5, np.arange(2000))
        X = cp.X_ref[:, :-1]
        f = 1 + linear.a1(X) * cp.grid.dt + linear.b1(X) * cp.path.increments
        Y = np.concatenate([np.ones((cp.P, 1)), np.cumprod(f, axis=1)], axis=1)
        errs.append(np.sqrt(np.mean((Y[:, -1] - cp.Sigma[:, -1]) ** 2)))
    assert errs[1] < errs[0]


def test_fine_euler_surrogate_converges(linear):
    r = []
    for m in (64, 128, 256):
        r.append(simulate(linear, TimeGrid(4, m), 6, np.arange(4000)).X_ref[:, -1])
    d1 = np.sqrt(np.mean((r[0] - r[1]) ** 2))
    d2 = np.sqrt(np.mean((r[1] - r[2]) ** 2))
    assert d1 / d2 == pytest.approx(np.sqrt(2), rel=0.15)


def test_ou_exact_matches_fine_euler():
    m = builtin_model("OU", (1.0, 0.5, 0.2))
    gaps = []
    for mm in (32, 64):
        p = sample_brownian(TimeGrid(8, mm), 9, np.arange(4000))
        exact = couple(m, p).X_ref[:, -1]
        fine = affine_euler(-1.0, 0.0, 0.0, 0.5, 0.2, p)[:, -1]
        gaps.append(np.sqrt(np.mean((exact - fine) ** 2)))
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.2)


def test_gbm_exact_vs_fine_euler_rate():
    # multiplicative noise: Euler is strong order 1/2, so the gap shrinks by √2

    gaps = []
    for mm in (32, 64):
        p = sample_brownian(TimeGrid(8, mm), 2, np.arange(4000))
        exact = couple(builtin_model("GBM", (0.0, 0.2, 1.0)), p).X_ref[:, -1]
        fine = affine_euler(0.0, 0.0, 0.2, 0.0, 1.0, p)[:, -1]
        gaps.append(np.sqrt(np.mean((exact - fine) ** 2)))
    assert gaps[0] / gaps[1] == pytest.approx(np.sqrt(2), rel=0.2)


def test_affine_explicit_zero_noise_is_ode():
    g = TimeGrid(4, 64)
    p = BrownianPath.from_increments(g, np.zeros((1, g.N)))
    y = affine_explicit(-1.0, 1.0, 0.0, 0.0, 0.0, p)[0, -1]
    assert y == pytest.approx(1 - np.exp(-1), rel=1e-2)


def test_dump_roundtrip():
    p = sample_brownian(TimeGrid(4, 2), 1, np.arange(3))
    buf = io.BytesIO()
    dump_paths(buf, p)
    buf.seek(0)
    assert buf.getvalue()[:4] == b"EWP1"
    q = load_paths(buf)
    assert np.array_equal(p.W, q.W) and q.grid.n == 4 and q.grid.m == 2


def test_overflow_is_flagged():
    m = builtin_model("GBM", (0.0, 40.0, 1.0))
    cp = simulate(m, TimeGrid(2, 2), 1, np.arange(200))
    assert cp.flags.dtype == bool
    assert sigma_path(m, cp.X_ref, cp.path).shape == cp.X_ref.shape
