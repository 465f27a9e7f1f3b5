import dataclasses

import numpy as np
import pytest

from edgeworth_euler.model import DiffusionModel, ModelError, builtin_model, check_derivatives

KINDS = [("GBM", (0.1, 0.3, 1.0)), ("OU", (1.0, 0.5, 0.0)), ("LinearSDE", (0.1, -0.3, 0.2, 0.4, 1.0)),
         ("ConstDiff", (0, 0.5, 0.1)), ("ConstDiff", (1, 0.5, 0.1)), ("ConstDiff", (2, 0.5, 0.1))]


def test_gbm_coefficients():
    m = builtin_model("GBM", (0.0, 0.2, 1.0))
    assert m.b(2.0) == pytest.approx(0.4)
    assert m.b1(2.0) == pytest.approx(0.2)
    assert m.b2(2.0) == 0


def test_ou_has_zero_kernel():
    m = builtin_model("OU", (1.0, 0.5, 0.0))
    xs = np.linspace(-3, 3, 11)
    assert np.all(m.b1(xs) == 0)
    assert np.all(m.b(xs) * m.b1(xs) == 0)


def test_gbm_exact_solution():
    m = builtin_model("GBM", (0.1, 0.2, 1.0))
    assert m.exact_solution(np.array([1.0]), np.array([0.0]))[0] == pytest.approx(np.exp(0.08), rel=1e-15)


@pytest.mark.parametrize("kind,params", KINDS)
def test_exact_at_zero_and_derivatives(kind, params):
    m = builtin_model(kind, params)
    if m.has_exact:
        assert np.all(m.exact_solution(np.zeros(4), np.zeros(4)) == m.x0)
    x0 = m.x0
    xs = np.linspace(0.5, 2.0, 100) if kind == "GBM" else np.linspace(x0 - 1, x0 + 1, 100)
    rep = check_derivatives(m, xs)
    assert rep.ok, rep.failed


def test_gbm_mismatch_small():
    rep = check_derivatives(builtin_model("GBM", (0.0, 0.2, 1.0)), [0.5, 1, 2], h=1e-4)
    assert max(rep.mismatch.values()) < 1e-7


def test_wrong_derivative_is_flagged():
    m = builtin_model("GBM", (0.0, 0.2, 1.0))
    bad = dataclasses.replace(m, b1=lambda x: 0.25 + 0 * np.asarray(x, float))
    rep = check_derivatives(bad, [0.5, 1, 2], h=1e-4)
    assert not rep.ok
    assert any("b1" in str(f) for f in rep.failed)


def test_constdiff_diffusion_mismatch_zero():
    m = builtin_model("ConstDiff", (0, 0.5, 0.0))
    rep = check_derivatives(m, np.linspace(-2, 2, 9))
    for pair, v in rep.mismatch.items():
        if pair[0].startswith("b"):
            assert v == 0.0


@pytest.mark.parametrize("kind,params", [("Heston", (1, 2, 3)), ("GBM", (0.1, 0.2)),
                                         ("GBM", (0.1, 0.0, 1.0)), ("OU", (1.0, -0.5, 0.0)),
                                         ("ConstDiff", (7, 0.5, 0.0))])
def test_builtin_rejects(kind, params):
    with pytest.raises(ModelError):
        builtin_model(kind, params)


def test_model_is_immutable():
    m = builtin_model("GBM", (0.0, 0.2, 1.0))
    with pytest.raises(dataclasses.FrozenInstanceError):
        m.x0 = 2.0
    assert isinstance(m, DiffusionModel)
