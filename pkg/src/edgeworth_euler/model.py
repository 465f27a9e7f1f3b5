"""Scalar diffusions dX = a(X)dt + b(X)dW with coded derivatives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Fn = Callable[[np.ndarray], np.ndarray]
# (fine times (N+1,), Brownian values (P, N+1)) -> states (P, N+1)
ExactFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ModelError(ValueError):
    pass


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _const(c: float) -> Fn:
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


@dataclass(frozen=True)
class DiffusionModel:
    """Drift ``a`` and diffusion ``b`` with derivatives.

    ``a3`` (third drift derivative) is only read by the second Malliavin
    derivative of the Σ process; it defaults to zero for user models that
    leave it out.  ``constant_variation`` declares a′ and b′ constant, which
    makes Σ an explicit function of (t, W).  ``pointwise_exact`` declares that
    the exact solution at time t depends on W_t alone (not on the grid), so
    terminal quantities can be computed from the coarse points only.
    """

    name: str
    params: tuple
    a: Fn
    a1: Fn
    a2: Fn
    b: Fn
    b1: Fn
    b2: Fn
    b3: Fn
    x0: float
    a3: Fn = field(default=_zero)
    exact_solution: Optional[ExactFn] = None
    constant_variation: bool = False
    pointwise_exact: bool = False

    @property
    def has_exact(self) -> bool:
        return self.exact_solution is not None


def _gbm(mu, sigma, x0):
    def exact(t, W):
        return x0 * np.exp((mu - 0.5 * sigma ** 2) * t + sigma * W)

    return DiffusionModel(
        "GBM", (mu, sigma, x0),
        a=lambda x: mu * np.asarray(x, dtype=float), a1=_const(mu), a2=_zero,
        b=lambda x: sigma * np.asarray(x, dtype=float), b1=_const(sigma), b2=_zero, b3=_zero,
        x0=x0, exact_solution=exact, constant_variation=True, pointwise_exact=True)


def _ou_exact(theta, sigma, x0):
    # variation of constants with the stochastic integral taken as a
    # left-point sum on the supplied grid (strong error O(step))
    def exact(t, W):
        dW = np.diff(W, axis=-1)
        acc = np.cumsum(np.exp(theta * t[:-1]) * dW, axis=-1)
        acc = np.concatenate([np.zeros(acc.shape[:-1] + (1,)), acc], axis=-1)
        return np.exp(-theta * t) * (x0 + sigma * acc)

    return exact


def _ou(theta, sigma, x0):
    return DiffusionModel(
        "OU", (theta, sigma, x0),
        a=lambda x: -theta * np.asarray(x, dtype=float), a1=_const(-theta), a2=_zero,
        b=_const(sigma), b1=_zero, b2=_zero, b3=_zero,
        x0=x0, exact_solution=_ou_exact(theta, sigma, x0), constant_variation=True)


def _linear(alpha, beta, gamma, delta, x0):
    return DiffusionModel(
        "LinearSDE", (alpha, beta, gamma, delta, x0),
        a=lambda x: alpha + beta * np.asarray(x, dtype=float), a1=_const(beta), a2=_zero,
        b=lambda x: gamma + delta * np.asarray(x, dtype=float), b1=_const(delta),
        b2=_zero, b3=_zero, x0=x0, constant_variation=True)


def _constdiff(choice, sigma, x0):
    choice = int(choice)
    common = dict(b=_const(sigma), b1=_zero, b2=_zero, b3=_zero, x0=x0)
    params = (choice, sigma, x0)
    if choice == 0:
        return DiffusionModel(
            "ConstDiff", params, a=_zero, a1=_zero, a2=_zero,
            exact_solution=lambda t, W: x0 + sigma * W, constant_variation=True,
            pointwise_exact=True, **common)
    if choice == 1:
        return DiffusionModel(
            "ConstDiff", params, a=lambda x: -np.asarray(x, dtype=float), a1=_const(-1.0),
            a2=_zero, exact_solution=_ou_exact(1.0, sigma, x0), constant_variation=True,
            **common)
    return DiffusionModel(
        "ConstDiff", params, a=np.sin, a1=np.cos, a2=lambda x: -np.sin(x),
        a3=lambda x: -np.cos(x), **common)


_BUILTIN = {"GBM": (3, _gbm), "OU": (3, _ou), "LinearSDE": (5, _linear),
            "ConstDiff": (3, _constdiff)}


def builtin_model(kind: str, params: Sequence[float]) -> DiffusionModel:
    """Built-in test models.

    Parameter orders: GBM (mu, sigma, x0); OU (theta, sigma, x0);
    LinearSDE (alpha, beta, gamma, delta, x0) with b = gamma + delta x;
    ConstDiff (choice, sigma, x0) with drift 0, -x or sin x for choice 0, 1, 2.
    """
    if kind not in _BUILTIN:
        raise ModelError(f"unknown model kind {kind!r}; expected one of {sorted(_BUILTIN)}")
    size, make = _BUILTIN[kind]
    params = tuple(float(p) for p in params)
    if len(params) != size:
        raise ModelError(f"{kind} takes {size} parameters, got {len(params)}")
    if not all(np.isfinite(params)):
        raise ModelError(f"{kind} parameters must be finite")
    if kind in ("GBM", "OU", "ConstDiff") and params[1] <= 0:
        raise ModelError(f"{kind}: sigma must be positive, got {params[1]}")
    if kind == "LinearSDE" and params[2] == 0 and params[3] == 0:
        raise ModelError("LinearSDE: gamma and delta cannot both vanish")
    if kind == "ConstDiff" and params[0] not in (0.0, 1.0, 2.0):
        raise ModelError(f"ConstDiff: drift choice must be 0, 1 or 2, got {params[0]}")
    return make(*params)


_PAIRS = (("a", "a1", "a2"), ("a1", "a2", "a3"), ("a2", "a3", None),
          ("b", "b1", "b2"), ("b1", "b2", "b3"), ("b2", "b3", None))


@dataclass
class DerivativeReport:
    mismatch: dict
    threshold: dict

    @property
    def failed(self) -> list:
        return [k for k, v in self.mismatch.items() if v > self.threshold[k]]

    @property
    def ok(self) -> bool:
        return not self.failed


def check_derivatives(model: DiffusionModel, xs, h: float = 1e-4) -> DerivativeReport:
    """Central differences against the coded derivatives.

    A pair fails when its mismatch exceeds 10 h^2 (1 + |f''|), with f'' the
    coded next derivative (or a difference quotient for the last one).
    """
    if h <= 0:
        raise ModelError("h must be positive")
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ModelError("xs must be nonempty")
    mism, thr = {}, {}
    for f, df, d2f in _PAIRS:
        F, DF = getattr(model, f), getattr(model, df)
        fd = (F(xs + h) - F(xs - h)) / (2 * h)
        mism[f"{f}/{df}"] = float(np.max(np.abs(fd - DF(xs))))
        if d2f is not None:
            second = np.abs(getattr(model, d2f)(xs))
        else:
            second = np.abs((DF(xs + h) - DF(xs - h)) / (2 * h))
        thr[f"{f}/{df}"] = float(10 * h * h * (1 + np.max(second)))
    return DerivativeReport(mism, thr)
