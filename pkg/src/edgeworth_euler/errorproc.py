"""Normalized Euler error and its first- and second-order expansion terms.

Everything works on a :class:`CoupledPaths` batch and returns arrays of
shape (P, N+1) on the fine grid.

The leading term is evaluated in closed form per coarse interval.  Inside
one coarse interval the integrand weight is frozen, and
∫_φ^t (W_s − W_φ) dW_s = ((W_t − W_φ)^2 − (t − φ))/2, so no fine-step
quadrature error enters.  A left-point sum would add a variance error of
order 1/m, which is then multiplied by √n in the second-order term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pathsim import CoupledPaths

VARIANTS = ("corrected", "literal")


@dataclass
class ErrorFunctionals:
    U: np.ndarray
    V: np.ndarray
    Vbar: np.ndarray
    M: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    N: np.ndarray

    def residual(self, Sigma: np.ndarray, n: int) -> np.ndarray:
        """ρ = V − Σ(M + N/√n)"""
        return self.V - Sigma * (self.M + self.N / np.sqrt(n))


def error_process(cp: CoupledPaths):
    U = cp.X_euler - cp.X_ref
    return U, np.sqrt(cp.grid.n) * U


def _frozen(cp: CoupledPaths, f):
    """f evaluated at the Euler state of φ(t), on every fine point"""
    return f(cp.X_coarse)[:, cp.grid.coarse_of_fine]


def _dw_phi(cp: CoupledPaths):
    g = cp.grid
    return cp.path.W - cp.path.W[:, g.phi_index]


def leading_term(cp: CoupledPaths, method: str = "closed"):
    """V̄ and M = Σ^{-1} V̄ on the fine grid.

    ``method="left_point"`` gives the plain fine-grid Itô sum instead.
    """
    g, mdl = cp.grid, cp.model
    rn = np.sqrt(g.n)
    xc = cp.X_coarse
    with np.errstate(all="ignore"):
        k = mdl.b(xc) * mdl.b1(xc) / cp.Sigma[:, g.coarse_index]
        dwp = _dw_phi(cp)
        if method == "closed":
            dWc = np.diff(cp.path.W[:, g.coarse_index], axis=1)
            J = k[:, :-1] * 0.5 * (dWc * dWc - 1.0 / g.n)
            Jcum = np.concatenate([np.zeros((cp.P, 1)), np.cumsum(J, axis=1)], axis=1)
            c = g.coarse_of_fine
            I = Jcum[:, c] + k[:, c] * 0.5 * (dwp * dwp - g.tau)
        elif method == "left_point":
            inc = k[:, g.coarse_of_fine[:-1]] * dwp[:, :-1] * cp.path.increments
            I = np.concatenate([np.zeros((cp.P, 1)), np.cumsum(inc, axis=1)], axis=1)
        else:
            raise ValueError(f"unknown method {method!r}")
        M = -rn * I
        return cp.Sigma * M, M


def _r2_coeff(m):
    return lambda x: m.b(x) * m.b1(x) ** 2 - 0.5 * m.b(x) ** 2 * m.b2(x)


def remainder_increments(cp: CoupledPaths, V: np.ndarray, variant: str = "corrected"):
    """Drift and diffusion integrands R(1), R(2) of the remainder.

    The ``"corrected"`` variant adds √n(b b'^3 + b^2 b' b'')(X^n_φ)(W − W_φ)^2
    to R(1).  This term comes from expanding Σ_t Σ_φ^{-1} b'(X_t) in the dt
    part of the leading term's differential; without it E[√n(V − V̄)] is
    wrong already for geometric Brownian motion.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    g, m = cp.grid, cp.model
    rn = np.sqrt(g.n)
    X = cp.X_ref
    dwp = _dw_phi(cp)
    dw2 = dwp * dwp
    tau = g.tau

    def c1(x):
        return m.b(x) * (m.b1(x) ** 2 - m.a1(x))

    def aa1(x):
        return m.a(x) * m.a1(x)

    def q1(x):
        out = -0.5 * m.b(x) ** 2 * m.a2(x)
        if variant == "corrected":
            out = out + m.b(x) * m.b1(x) ** 3 + m.b(x) ** 2 * m.b1(x) * m.b2(x)
        return out

    def ab1(x):
        return m.a(x) * m.b1(x)

    with np.errstate(all="ignore"):
        V2 = V * V
        R1 = (0.5 / rn * m.a2(X) * V2 + rn * _frozen(cp, c1) * dwp
              - rn * _frozen(cp, aa1) * tau + rn * _frozen(cp, q1) * dw2)
        R2 = (0.5 / rn * m.b2(X) * V2 + rn * _frozen(cp, _r2_coeff(m)) * dw2
              - rn * _frozen(cp, ab1) * tau)
    return R1, R2


def second_order_term(cp: CoupledPaths, R1, R2, V=None, milstein: bool = True):
    """N = √n ∫ Σ^{-1}(dR − b'(X) R(2) ds) by left-point sums.

    With ``milstein`` (needs V) the dW-integral gets the correction
    ½ σ_Y (ΔW^2 − Δt), σ_Y being the diffusion coefficient of Σ^{-1}R(2).
    This lowers the fine-grid error of the stochastic integral from
    order (nm)^{-1/2} to (nm)^{-1}; plain sums leave an error that does not
    vanish once multiplied by √n at moderate m.
    """
    g, m = cp.grid, cp.model
    rn = np.sqrt(g.n)
    X = cp.X_ref[:, :-1]
    Si = 1.0 / cp.Sigma[:, :-1]
    dW = cp.path.increments
    r1, r2 = R1[:, :-1], R2[:, :-1]
    with np.errstate(all="ignore"):
        b1 = m.b1(X)
        inc = Si * ((r1 - b1 * r2) * g.dt + r2 * dW)
        if milstein:
            if V is None:
                raise ValueError("the Milstein correction needs V")
            v = V[:, :-1]
            sig_v = rn * (_frozen(cp, m.b)[:, :-1] - m.b(X))
            dwp = _dw_phi(cp)[:, :-1]
            sig_r2 = (0.5 / rn * (m.b3(X) * m.b(X) * v * v + 2 * m.b2(X) * v * sig_v)
                      + rn * _frozen(cp, _r2_coeff(m))[:, :-1] * 2 * dwp)
            sig_y = Si * (sig_r2 - b1 * r2)
            inc = inc + 0.5 * sig_y * (dW * dW - g.dt)
        N = np.concatenate([np.zeros((cp.P, 1)), np.cumsum(inc, axis=1)], axis=1)
    return rn * N


def functionals(cp: CoupledPaths, variant: str = "corrected", milstein: bool = True,
                leading: str = "closed") -> ErrorFunctionals:
    U, V = error_process(cp)
    Vbar, M = leading_term(cp, leading)
    R1, R2 = remainder_increments(cp, V, variant)
    N = second_order_term(cp, R1, R2, V, milstein)
    return ErrorFunctionals(U, V, Vbar, M, R1, R2, N)


def _interval_integrals(cp: CoupledPaths):
    """cumulative ∫(W_s − W_φ(s))ds and ∫(W_s − W_φ(s))^2 ds, trapezoid per fine step"""
    g = cp.grid
    W = cp.path.W
    left = W[:, :-1] - W[:, g.phi_index[:-1]]
    right = W[:, 1:] - W[:, g.phi_index[:-1]]
    z = np.zeros((cp.P, 1))
    c1 = np.concatenate([z, np.cumsum(0.5 * (left + right) * g.dt, axis=1)], axis=1)
    c2 = np.concatenate([z, np.cumsum(0.5 * (left ** 2 + right ** 2) * g.dt, axis=1)], axis=1)
    return c1, c2


def clt_pieces(cp: CoupledPaths, J: int) -> dict:
    """Per-path M_T, A^n(1)_T, A^n(2)_T and W_T at fine index J.

    A(1) and A(2) are the martingales whose brackets give u^{22} and u^{33};
    each coarse interval is integrated by parts so that only ∫ΔW ds and
    ∫ΔW^2 ds need quadrature.
    """
    g, mdl = cp.grid, cp.model
    n = g.n
    W = cp.path.W
    ci = g.coarse_index
    cJ = int(g.coarse_of_fine[J])
    c1cum, c2cum = _interval_integrals(cp)
    # full intervals 0..cJ-1 then the partial interval [φ(T), T]
    ends = np.append(ci[1:cJ + 1], J)
    starts = ci[:cJ + 1]
    dWT = W[:, ends] - W[:, starts]
    I1 = c1cum[:, ends] - c1cum[:, starts]
    I2 = c2cum[:, ends] - c2cum[:, starts]
    tT = g.fine_times[ends] - g.fine_times[starts]
    rest = 1.0 / n - tT
    xc = cp.X_coarse[:, :cJ + 1]
    Si = 1.0 / cp.Sigma[:, starts]
    with np.errstate(all="ignore"):
        b, b1, b2 = mdl.b(xc), mdl.b1(xc), mdl.b2(xc)
        c1 = b * (b1 ** 2 - mdl.a1(xc))
        c3 = b * b1 ** 2 - 0.5 * b ** 2 * b2
        ab1 = mdl.a(xc) * b1
        k = Si * b * b1
        J1 = rest * dWT + I1
        J2 = tT * dWT - I1
        J3 = dWT ** 3 / 3.0 - I1
        J4 = rest * 0.5 * (dWT ** 2 - tT) + 0.5 * I2 - 0.25 * tT ** 2
        A1 = n * np.sum(Si * (c1 * J1 - ab1 * J2 + c3 * J3), axis=1)
        A2 = 2 * n ** 1.5 * np.sum(k * k * J4, axis=1)
        M = -np.sqrt(n) * np.sum(k * 0.5 * (dWT ** 2 - tT), axis=1)
    return {"M": M, "A1": A1, "A2": A2, "W": W[:, J].copy()}
