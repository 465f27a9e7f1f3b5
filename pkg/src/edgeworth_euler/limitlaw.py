"""Ingredients of the limit laws, by quadrature along the reference path.

dt-integrals use the trapezoid rule and dW-integrals left-point sums.
Every function takes a :class:`CoupledPaths` batch and a fine index ``J``
(the evaluation time T = t_J) and returns per-path arrays.

Two variants of the second-order limit are available.  ``"corrected"``
(default) carries the extra Itô terms that come from expanding Σ_tΣ_φ^{-1}
inside the leading term; ``"literal"`` is the uncorrected form.  They differ
in A(3), in the feedback term of μ and in the random part Q of N.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errorproc import VARIANTS
from .pathsim import CoupledPaths


def trapezoid_weights(dt: np.ndarray, J: int) -> np.ndarray:
    """weights ω_0..ω_J of the trapezoid rule on [t_0, t_J]"""
    w = np.zeros(J + 1)
    w[:-1] += 0.5 * dt[:J]
    w[1:] += 0.5 * dt[:J]
    return w


def _cumtrapz(f: np.ndarray, dt: np.ndarray) -> np.ndarray:
    inc = 0.5 * (f[:, 1:] + f[:, :-1]) * dt[: f.shape[1] - 1]
    return np.concatenate([np.zeros((f.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


def kernel_and_C(cp: CoupledPaths, J: int):
    """K = −Σ^{-1} b b'(X) on [0, t_J] and C_T = ½∫K^2."""
    m = cp.model
    X = cp.X_ref[:, : J + 1]
    with np.errstate(all="ignore"):
        K = -m.b(X) * m.b1(X) / cp.Sigma[:, : J + 1]
    w = trapezoid_weights(cp.grid.dt, J)
    return K, 0.5 * (K * K) @ w


def clt_coefficients(cp: CoupledPaths, J: int | None = None) -> dict:
    """v², u¹¹, u¹³, u²², u³³ on the fine grid up to index J."""
    m = cp.model
    J = cp.grid.N if J is None else J
    X = cp.X_ref[:, : J + 1]
    Si = 1.0 / cp.Sigma[:, : J + 1]
    with np.errstate(all="ignore"):
        a, a1 = m.a(X), m.a1(X)
        b, b1, b2 = m.b(X), m.b1(X), m.b2(X)
        k = Si * b * b1
        v2 = Si * (b * b1 ** 2 - 0.5 * (a * b1 + a1 * b) - 0.25 * b * b * b2)
        br = (b * b * ((b1 ** 2 - a1) ** 2 + (b1 ** 2 - 0.5 * b * b2) * (4 * b1 ** 2 - 1.5 * b * b2 - a1))
              + (a * b1) ** 2 - a * b * b1 * (3 * b1 ** 2 - a1 - b * b2))
        return {"v2": v2, "u11": 0.5 * k ** 2, "u13": -k ** 3 / 3.0,
                "u22": Si * Si * br / 3.0, "u33": k ** 4 / 3.0}


def _a3_integrand(m, X, variant):
    a, a1, a2 = m.a(X), m.a1(X), m.a2(X)
    b, b1, b2 = m.b(X), m.b1(X), m.b2(X)
    if variant == "literal":
        return (0.5 * a * b1 ** 2 + 0.5 * b * b1 ** 3 - 0.5 * a * a1
                - 0.25 * a2 * b * b - 0.25 * b * b * b1 * b2)
    return (0.5 * a * b1 ** 2 - 0.5 * a * a1 - 0.25 * a2 * b * b
            + 0.75 * b * b * b1 * b2 - 0.5 * b * b1 ** 3 + 0.5 * a1 * b * b1)


def feedback_weights(cp: CoupledPaths, J: int, variant: str = "corrected"):
    """(w1, w2) with Q = ½∫w1 (L¹)^2 ds + ½∫w2 (L¹)^2 dW."""
    m = cp.model
    X = cp.X_ref[:, : J + 1]
    S = cp.Sigma[:, : J + 1]
    with np.errstate(all="ignore"):
        if variant == "literal":
            return S * (m.a2(X) + m.b2(X) - m.b1(X) * m.b2(X)), np.zeros_like(X)
        return S * (m.a2(X) - m.b1(X) * m.b2(X)), S * m.b2(X)


def A3_and_mu(cp: CoupledPaths, J: int, u11: np.ndarray, v2: np.ndarray,
              variant: str = "corrected"):
    """A(3)_T and the conditional mean μ_T of N."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    g, m = cp.grid, cp.model
    X = cp.X_ref[:, : J + 1]
    w = trapezoid_weights(g.dt, J)
    dW = cp.path.increments[:, :J]
    with np.errstate(all="ignore"):
        A3 = (_a3_integrand(m, X, variant) / cp.Sigma[:, : J + 1]) @ w
        c = _cumtrapz(u11[:, : J + 1], g.dt)
        w1, w2 = feedback_weights(cp, J, variant)
        mu = (np.sum(v2[:, :J] * dW, axis=1) + A3 + 0.5 * (w1 * c) @ w
              + 0.5 * np.sum((w2 * c)[:, :J] * dW, axis=1))
    return A3, mu


def _feedback_e(cp, J, variant):
    w1, w2 = feedback_weights(cp, J, variant)
    e = w1 * trapezoid_weights(cp.grid.dt, J)
    e[:, :J] += w2[:, :J] * cp.path.increments[:, :J]
    return e


def var_Q_analytic(e: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Var(½Σ e_j L_j²) for a Gaussian martingale L with ⟨L⟩ = c.

    Cov(L_i², L_j²) = 2 c_{min(i,j)}², so the double sum collapses to
    ½[Σ e_j² c_j² + 2 Σ_j e_j c_j² Σ_{i>j} e_i], an O(N) expression.
    """
    c2 = c * c
    tail = np.cumsum(e[:, ::-1], axis=1)[:, ::-1] - e
    return 0.5 * (np.sum(e * e * c2, axis=1) + 2 * np.sum(e * c2 * tail, axis=1))


def _inner_mc(e, c, u11, u13, u33, w, J, seed, streams, draws, points):
    """Var Q, Cov(Q, L¹_T), Cov(Q, L³_T) by antithetic simulation of (L¹, L³)."""
    P = e.shape[0]
    edges = np.unique(np.linspace(0, J, min(points, J) + 1).round().astype(int))
    half = draws // 2
    out = np.empty((P, 3))
    for p in range(P):
        # block sums of the quadrature weights, L evaluated at block ends
        eb = np.add.reduceat(e[p], edges[:-1])
        s11 = np.add.reduceat(u11[p] * w, edges[:-1])
        s13 = np.add.reduceat(u13[p] * w, edges[:-1])
        s33 = np.add.reduceat(u33[p] * w, edges[:-1])
        z = rng.normals(seed, np.array([streams[p]]), rng.INNER, 2 * half * eb.size)
        z = z.reshape(half, eb.size, 2)
        l11 = np.sqrt(np.maximum(s11, 0))
        safe = np.where(l11 > 0, l11, 1.0)
        l21 = np.where(l11 > 0, s13 / safe, 0.0)
        l22 = np.sqrt(np.maximum(s33 - l21 ** 2, 0))
        d1 = l11 * z[..., 0]
        d3 = l21 * z[..., 0] + l22 * z[..., 1]
        L1 = np.cumsum(np.concatenate([d1, -d1]), axis=1)
        L3 = np.cumsum(np.concatenate([d3, -d3]), axis=1)
        Q = 0.5 * (L1 * L1) @ eb
        out[p] = (np.var(Q, ddof=1), np.cov(Q, L1[:, -1])[0, 1], np.cov(Q, L3[:, -1])[0, 1])
    return out


THETA_NOTES = {
    "11": "∫u11",
    "31": "∫u13",
    "33": "∫u33",
    "21": "Cov(Q, L1_T) = 0: odd Gaussian moment",
    "32": "Cov(Q, L3_T) = 0: odd Gaussian moment",
    "22": "∫(u22 − v2²) + Var(Q | F)",
}


def theta_blocks(cp: CoupledPaths, J: int, coeffs: dict, variant: str = "corrected",
                 method: str = "analytic", draws: int = 10_000, points: int = 256) -> dict:
    """Conditional covariances of (M, N, Ĉ) at T = t_J.

    N = μ + ∫(u²² − v²v²)^{1/2}dB + Q with Q a quadratic form in L¹, so the
    N-block needs Var(Q | F).  ``method="analytic"`` uses the exact O(N)
    formula; ``"inner_mc"`` simulates L¹, L³ on a coarser block grid with
    ``draws`` antithetic draws from the INNER substream, giving also the
    (zero in theory) cross terms.
    """
    g = cp.grid
    w = trapezoid_weights(g.dt, J)
    u11, u13, u22, u33, v2 = (coeffs[k][:, : J + 1] for k in ("u11", "u13", "u22", "u33", "v2"))
    c = _cumtrapz(u11, g.dt)
    e = _feedback_e(cp, J, variant)
    th = {"11": u11 @ w, "31": u13 @ w, "33": u33 @ w}
    base22 = (u22 - v2 * v2) @ w
    if method == "analytic":
        vq = var_Q_analytic(e, c)
        th["21"] = np.zeros(cp.P)
        th["32"] = np.zeros(cp.P)
    elif method == "inner_mc":
        r = _inner_mc(e, c, u11, u13, u33, w, J, cp.path.seed, cp.path.streams, draws, points)
        vq = r[:, 0]
        th["21"], th["32"] = r[:, 1], r[:, 2]
    else:
        raise ValueError(f"unknown method {method!r}")
    th["22"] = base22 + vq
    th["varQ"] = vq
    return th


def psd_violations(coeffs: dict, J: int, tol: float = 1e-12) -> np.ndarray:
    """count of grid points per path where u − v v^T fails to be PSD"""
    u11, u13, u33 = (coeffs[k][:, : J + 1] for k in ("u11", "u13", "u33"))
    d22 = coeffs["u22"][:, : J + 1] - coeffs["v2"][:, : J + 1] ** 2
    scale = tol * (1 + np.abs(u11) + np.abs(u33) + np.abs(coeffs["u22"][:, : J + 1]))
    det13 = u11 * u33 - u13 * u13
    bad = (d22 < -scale) | (u11 < -scale) | (u33 < -scale) | (det13 < -scale * (1 + np.abs(u11 * u33)))
    return bad.sum(axis=1)


@dataclass
class LimitLawProfile:
    T: float
    J: int
    variant: str
    K: np.ndarray
    C: np.ndarray
    S: np.ndarray
    coeffs: dict
    A3: np.ndarray
    mu: np.ndarray
    Theta: dict
    psd_violations: np.ndarray
    Sigma_T: np.ndarray
    notes: dict = field(default_factory=lambda: dict(THETA_NOTES))

    @property
    def P(self) -> int:
        return self.C.shape[0]


def profile(cp: CoupledPaths, T: float = 1.0, variant: str = "corrected",
            theta_method: str = "analytic", **theta_kw) -> LimitLawProfile:
    g = cp.grid
    k = list(g.T_points).index(min(g.T_points, key=lambda s: abs(s - T)))
    if abs(g.T_points[k] - T) > 1e-12:
        raise ValueError(f"T = {T} is not an evaluation time of the grid")
    J = int(g.T_index[k])
    K, C = kernel_and_C(cp, J)
    co = clt_coefficients(cp, J)
    A3, mu = A3_and_mu(cp, J, co["u11"], co["v2"], variant)
    th = theta_blocks(cp, J, co, variant, theta_method, **theta_kw)
    ST = cp.Sigma[:, J]
    return LimitLawProfile(float(g.T_points[k]), J, variant, K, C, ST * ST * C, co, A3, mu, th,
                           psd_violations(co, J), ST.copy())


PROFILE_COLUMNS = ("stream", "C_T", "S_T", "Sigma_T", "A3_T", "mu_T", "Theta11", "Theta21",
                   "Theta31", "Theta22", "Theta33", "Theta32", "psd_violations")


def profile_rows(pr: LimitLawProfile, streams) -> list:
    th = pr.Theta
    return [[int(s), pr.C[i], pr.S[i], pr.Sigma_T[i], pr.A3[i], pr.mu[i], th["11"][i], th["21"][i],
             th["31"][i], th["22"][i], th["33"][i], th["32"][i], int(pr.psd_violations[i])]
            for i, s in enumerate(streams)]


def write_profile_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(PROFILE_COLUMNS)
        for r in rows:
            wr.writerow([x if isinstance(x, int) else f"{x:.17g}" for x in r])
