"""Malliavin derivatives along the reference path and the symbol coefficients.

Derivatives are taken with respect to the fine Brownian increments: D_k
means ∂/∂ΔW_k, which moves every state X_j with j ≥ k+1.  On the fine grid
these are exact derivatives of the discrete path functionals, so a bump of
ΔW_k reproduces them up to O(ε).

Write Y for the first variation, β_k = s_k / Y_{k+1} with s_k the
sensitivity of X_{k+1} to ΔW_k, and

    Γ_j = Σ_{i<j} Y_i (b''_i ΔW_i + (a'' − b'b'')_i h_i).

Then D_kX_j = β_k Y_j and D_kΣ_j = Σ_j Λ^k_j with Λ^k_j = α_k + β_k Γ_j,
α_k = b'_k − β_k Γ_{k+1}.  Everything downstream (D_kC, the diagonal second
derivatives, the symbol integrals) reduces to reverse cumulative sums, so a
whole path costs O(N).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .limitlaw import LimitLawProfile, trapezoid_weights
from .pathsim import BrownianPath, CoupledPaths, couple


class DegenerateModelError(ValueError):
    pass


@dataclass
class VariationState:
    """First variation Y (P, N+1) and increment sensitivity s (P, N)."""

    Y: np.ndarray
    s: np.ndarray

    b_left: np.ndarray | None = None

    @property
    def beta(self) -> np.ndarray:
        return self.s / self.Y[:, 1:]

    @property
    def beta_pred(self) -> np.ndarray:
        """b(X_k)/Y_k: the same factor without the current increment"""
        return self.b_left / self.Y[:, :-1]


def first_variation(cp: CoupledPaths) -> VariationState:
    """dY = a'(X)Y dt + b'(X)Y dW, Y_0 = 1, consistent with the reference scheme.

    For an exact reference with constant a', b' we have Y = Σ.  When instead
    X_t = F(t, W_t) for a general model, Itô gives F_W = b(F), so the exact
    pathwise derivative is D_kX_j = b(X_j) and Y = b(X)/b(x0); the Itô-sum Σ
    only matches that to O(h^{1/2}).  For a fine-Euler reference Y is the
    Euler product, the exact derivative of the discrete path.
    """
    m, g = cp.model, cp.grid
    X = cp.X_ref[:, :-1]
    if cp.ref_exact:
        b0 = float(m.b(m.x0))
        if m.pointwise_exact and not m.constant_variation and b0 != 0.0:
            Y = m.b(cp.X_ref) / b0
        else:
            Y = cp.Sigma
        s = m.b(X) * Y[:, 1:] / Y[:, :-1]
    else:
        f = 1.0 + m.a1(X) * g.dt + m.b1(X) * cp.path.increments
        Y = np.concatenate([np.ones((cp.P, 1)), np.cumprod(f, axis=1)], axis=1)
        s = m.b(X)
    return VariationState(Y, s, m.b(X))


def _excl_cumsum(x: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)


def _rev_tail(x: np.ndarray) -> np.ndarray:
    """out[:, k] = Σ_{j>k} x[:, j] for k = 0..N-1"""
    r = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    return r[:, 1:]


class _Pieces:
    """shared per-path arrays for derivative formulas"""

    def __init__(self, cp: CoupledPaths, vs: VariationState, local: str = "discrete"):
        m, g = cp.model, cp.grid
        X = cp.X_ref
        dW = cp.path.increments
        h = g.dt
        Y = vs.Y
        Yl = Y[:, :-1]
        self.b, self.b1, self.b2, self.b3 = m.b(X), m.b1(X), m.b2(X), m.b3(X)
        a2, a3 = m.a2(X), m.a3(X)
        b1, b2, b3 = self.b1, self.b2, self.b3
        drift2 = (a2 - b1 * b2)[:, :-1]
        self.Gam = _excl_cumsum(Yl * (b2[:, :-1] * dW + drift2 * h))
        if local == "discrete":
            self.beta = vs.beta
        elif local == "predictable":
            self.beta = vs.beta_pred
        else:
            raise ValueError(f"unknown local convention {local!r}")
        self.alpha = b1[:, :-1] - self.beta * self.Gam[:, 1:]
        self.Y = Y
        self.Sigma = cp.Sigma
        self.rho = Y / cp.Sigma
        Y2 = Yl * Yl
        self.Pc = _excl_cumsum(Y2 * (b3[:, :-1] * dW + (a3 - b2 * b2 - b1 * b3)[:, :-1] * h))
        base = Yl * (b2[:, :-1] * dW + drift2 * h)
        self.Qc = _excl_cumsum(base)
        self.Rc = _excl_cumsum(base * self.Gam[:, :-1])
        self.cdiag = b2[:, :-1] * vs.s
        self.K = -self.b * b1 / cp.Sigma
        self.g1 = b1 * b1 + self.b * b2
        self.g2 = 3 * b1 * b2 + self.b * b3
        self.E = self.g1 * self.rho + self.K * self.Gam

    def Lam(self, J):
        """Λ^k_J for all k < J"""
        return self.alpha[:, :J] + self.beta[:, :J] * self.Gam[:, J:J + 1]

    def Delta(self, J):
        """Δ_k(J) for all k < J"""
        A, B = self.alpha[:, :J], self.beta[:, :J]
        k1 = slice(1, J + 1)
        return (B * (self.Pc[:, J:J + 1] - self.Pc[:, k1]) + A * (self.Qc[:, J:J + 1] - self.Qc[:, k1])
                + B * (self.Rc[:, J:J + 1] - self.Rc[:, k1]))


def malliavin_DX(cp: CoupledPaths, vs: VariationState, r, t) -> np.ndarray:
    """D_{t_r} X_{t_t} per path; zero unless t > r."""
    r, t = int(r), int(t)
    if t <= r:
        return np.zeros(cp.P)
    return vs.beta[:, r] * vs.Y[:, t]


def malliavin_DSigma(cp: CoupledPaths, vs: VariationState, r, t) -> np.ndarray:
    r, t = int(r), int(t)
    if t <= r:
        return np.zeros(cp.P)
    pc = _Pieces(cp, vs)
    return cp.Sigma[:, t] * (pc.alpha[:, r] + pc.beta[:, r] * pc.Gam[:, t])


@dataclass
class DerivativeSet:
    """D_k and diagonal D_kD_k of C, Σ_T and X_T for k < J, each (P, J)."""

    J: int
    DC: np.ndarray
    DDC: np.ndarray
    DSigma: np.ndarray
    DDSigma: np.ndarray
    DX: np.ndarray
    DDX: np.ndarray


def derivatives(cp: CoupledPaths, vs: VariationState, J: int,
                local: str = "predictable") -> DerivativeSet:
    """All first and diagonal second derivatives needed by the symbol.

    ``local="discrete"`` gives the exact derivatives in ΔW_k of the fine-grid
    functionals.  With a fine-Euler reference these carry the factor
    1/(1 + a'h + b'ΔW_k) from the current step, an O(h^{1/2}) fluctuation
    that cancellation inside D_kC can magnify.  ``"predictable"`` (default)
    drops it, which is the natural discretisation of the continuous-time
    objects D_t, D_tD_t and is what the symbol integrates.
    """
    pc = _Pieces(cp, vs, local)
    w = np.zeros(cp.grid.N + 1)
    w[: J + 1] = trapezoid_weights(cp.grid.dt, J)
    K, E, Gam = pc.K, pc.E, pc.Gam
    A, B = pc.alpha[:, :J], pc.beta[:, :J]

    def S(f):
        return _rev_tail(w * f)[:, :J]

    SK2 = S(K * K)
    DC = -B * S(K * E) - A * SK2
    PR = pc.Pc + pc.Rc
    DDC = (2 * A * A * SK2
           + A * B * (3 * S(K * E) + S(K * K * Gam) - S(K * K * pc.Qc) + pc.Qc[:, 1:J + 1] * SK2)
           + B * B * (S(E * E) + S(K * E * Gam) - S(K * K * PR) + PR[:, 1:J + 1] * SK2
                      - S(K * pc.g2 * pc.rho * pc.Y))
           - pc.cdiag[:, :J] * SK2)
    Lam = pc.Lam(J)
    ST = cp.Sigma[:, J:J + 1]
    YT = pc.Y[:, J:J + 1]
    DS = ST * Lam
    DDS = ST * (Lam * Lam + pc.cdiag[:, :J] + B * pc.Delta(J))
    DX = B * YT
    DDX = B * YT * Lam
    return DerivativeSet(J, DC, DDC, DS, DDS, DX, DDX)


def malliavin_DC(cp: CoupledPaths, vs: VariationState, J: int, local: str = "discrete"):
    return derivatives(cp, vs, J, local).DC


def malliavin_DDC(cp: CoupledPaths, vs: VariationState, J: int, local: str = "predictable"):
    return derivatives(cp, vs, J, local).DDC


# ---------------------------------------------------------------- bump oracles

def _C_of(cp: CoupledPaths, J: int) -> np.ndarray:
    X = cp.X_ref[:, : J + 1]
    K = -cp.model.b(X) * cp.model.b1(X) / cp.Sigma[:, : J + 1]
    return 0.5 * (K * K) @ trapezoid_weights(cp.grid.dt, J)


def _bumped(cp: CoupledPaths, shifts: Sequence[tuple]) -> CoupledPaths:
    dW = cp.path.increments.copy()
    for k, eps in shifts:
        dW[:, k] += eps
    p = BrownianPath.from_increments(cp.grid, dW, cp.path.seed, cp.path.streams)
    return couple(cp.model, p)


def bump_first(cp: CoupledPaths, k: int, J: int, eps: float = 1e-4) -> dict:
    """central differences of X_J, Σ_J and C_T = C(t_J) in ΔW_k"""
    up, dn = _bumped(cp, [(k, eps)]), _bumped(cp, [(k, -eps)])
    return {"X": (up.X_ref[:, J] - dn.X_ref[:, J]) / (2 * eps),
            "Sigma": (up.Sigma[:, J] - dn.Sigma[:, J]) / (2 * eps),
            "C": (_C_of(up, J) - _C_of(dn, J)) / (2 * eps)}


def bump_second_C(cp: CoupledPaths, k: int, J: int, eps: float = 1e-3) -> np.ndarray:
    """mixed difference ∂²C/∂ΔW_{k-1}∂ΔW_k, the discrete s↑t limit"""
    s = k - 1
    vals = {}
    for i in (-1, 1):
        for j in (-1, 1):
            vals[i, j] = _C_of(_bumped(cp, [(s, i * eps), (k, j * eps)]), J)
    return (vals[1, 1] - vals[1, -1] - vals[-1, 1] + vals[-1, -1]) / (4 * eps * eps)


# ------------------------------------------------------------ symbol

MONOMIALS = ((1, 0), (2, 0), (1, 1), (3, 0), (1, 2), (3, 1), (5, 0))
G_CHOICES = ("C", "Sigma", "X")


@dataclass
class SymbolCoefficients:
    """Random symbol coefficients per path.

    Adaptive part: H1 z (iu)^2 + (H2 + H3 z)(iu).  Anticipative part, for a
    functional G with q components: H4 (iu)^3 + H5·(iu)(iv) + H6 (iu)^5
    + H7:(iu)(iv)(iv) + H8·(iu)^3(iv).
    """

    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    H4: np.ndarray
    H5: np.ndarray   # (P, q)
    H6: np.ndarray
    H7: np.ndarray   # (P, q, q)
    H8: np.ndarray   # (P, q)
    C: np.ndarray
    Sigma_T: np.ndarray
    G: np.ndarray    # (P, q)
    G_names: tuple
    weight: str

    @property
    def P(self) -> int:
        return self.C.shape[0]

    def scalar(self) -> dict:
        """H1..H8 as (P,) arrays, using the first G component"""
        return {"H1": self.H1, "H2": self.H2, "H3": self.H3, "H4": self.H4,
                "H5": self.H5[:, 0], "H6": self.H6, "H7": self.H7[:, 0, 0], "H8": self.H8[:, 0]}


def h_coefficients(cp: CoupledPaths, profile: LimitLawProfile, vs: VariationState | None = None,
                   G: Sequence[str] = ("C",), weight: str = "pathwise") -> SymbolCoefficients:
    """Symbol coefficients from the profile and the Malliavin derivatives.

    ``weight`` chooses the kernel factor of the anticipative integral:
    ``"pathwise"`` uses K(t), ``"terminal"`` uses K(T) on t < T.
    """
    th = profile.Theta
    if np.any(th["11"] <= 0):
        raise DegenerateModelError("Θ11 ≤ 0 on some path: the expansion is undefined (zero kernel)")
    if weight not in ("pathwise", "terminal"):
        raise ValueError(f"unknown weight {weight!r}")
    G = tuple(G)
    for name in G:
        if name not in G_CHOICES:
            raise ValueError(f"unknown functional {name!r}; expected one of {G_CHOICES}")
    vs = first_variation(cp) if vs is None else vs
    J = profile.J
    d = derivatives(cp, vs, J)
    K = profile.K
    h = cp.grid.dt[:J]
    wt = (K[:, :J] if weight == "pathwise" else K[:, J:J + 1]) * h

    first = {"C": d.DC, "Sigma": d.DSigma, "X": d.DX}
    second = {"C": d.DDC, "Sigma": d.DDSigma, "X": d.DDX}
    value = {"C": profile.C, "Sigma": profile.Sigma_T, "X": cp.X_ref[:, J]}

    def integ(f):
        return np.sum(wt * f, axis=1)

    H4 = 0.25 * integ(d.DDC)
    H6 = 0.125 * integ(d.DC * d.DC)
    H5 = np.stack([0.5 * integ(second[a]) for a in G], axis=1)
    H8 = np.stack([0.5 * integ(d.DC * first[a]) for a in G], axis=1)
    H7 = np.stack([np.stack([0.5 * integ(first[a] * first[b]) for b in G], axis=1) for a in G], axis=1)
    H1 = th["31"] / (2 * th["11"])
    H3 = th["21"] / th["11"]
    Gv = np.stack([value[a] for a in G], axis=1)
    return SymbolCoefficients(H1, profile.mu.copy(), H3, H4, H5, H6, H7, H8, profile.C.copy(),
                              profile.Sigma_T.copy(), Gv, G, weight)


def gradient_check(cp: CoupledPaths, ks: Sequence[int], J: int | None = None,
                   eps1: float = 1e-4, eps2: float = 1e-3) -> dict:
    """Relative errors of the derivative formulas against bump differences.

    First order (X, Sigma, C): max over paths and ks of the pointwise relative
    error, using the exact discrete convention.  Second order (DDC): per path,
    the norm-wise relative error over ks of the predictable D_kD_kC against
    the adjacent mixed bump, then the max over paths.  An entry is the
    absolute size of the formula when the bump is identically ~0.
    """
    J = cp.grid.N if J is None else J
    ks = [int(k) for k in ks]
    vs = first_variation(cp)
    d1 = derivatives(cp, vs, J, "discrete")
    d2 = derivatives(cp, vs, J, "predictable")
    out = {}
    an = {"X": d1.DX, "Sigma": d1.DSigma, "C": d1.DC}
    fd = {name: np.stack([bump_first(cp, k, J, eps1)[name] for k in ks], axis=1) for name in an}
    for name in an:
        a, f = an[name][:, ks], fd[name]
        if np.max(np.abs(f)) < 1e-12:
            out[name] = float(np.max(np.abs(a)))
        else:
            out[name] = float(np.max(np.abs(a - f) / np.maximum(np.abs(f), 1e-12)))
    f2 = np.stack([bump_second_C(cp, k, J, eps2) for k in ks], axis=1)
    a2 = d2.DDC[:, ks]
    nf = np.linalg.norm(f2, axis=1)
    if np.max(nf) < 1e-10:
        out["DDC"] = float(np.max(np.abs(a2)))
    else:
        out["DDC"] = float(np.max(np.linalg.norm(a2 - f2, axis=1) / np.maximum(nf, 1e-300)))
    return out
