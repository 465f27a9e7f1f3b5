"""Edgeworth-corrected densities built from a Monte Carlo sample of symbols.

Three kinds are provided:

* studentized: density of V_T / √S_T, φ(y)(1 + n^{-1/2}(a1 y + a2(y²−1) + a3 y³));
* pair: joint density of (Z, C), Z = Σ_T^{-1} V_T, with a kernel estimate of
  the law of C and Nadaraya-Watson estimates of the conditional symbol
  moments;
* marginal_V: density of V_T itself, averaged over the sampled paths.

Each correction term of the symbol, a coefficient c(z) in front of
(iu)^m (iv)^k, contributes (−∂_z)^m (−∂_x)^k [φ(z; 0, C) c(z)] to the density.
Integrating by parts, ∫ h p_j = E[∫ ∂_z^m ∂_x^k h(z, G) c(z) φ(z; 0, C) dz],
which is how expectations and the V-marginal are evaluated without any
density estimate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e as He
from scipy import stats

from .malliavin import DegenerateModelError, SymbolCoefficients

_SQRT2PI = np.sqrt(2 * np.pi)
DETERMINISTIC_SD = 1e-10


def hermite(order: int, y):
    """Probabilists' Hermite polynomial He_3 or He_5."""
    if order not in (3, 5):
        raise ValueError(f"hermite order must be 3 or 5, got {order}")
    c = np.zeros(order + 1)
    c[-1] = 1.0
    return He.hermeval(y, c)


def normal_pdf(z, var):
    return np.exp(-0.5 * z * z / var) / np.sqrt(2 * np.pi * var)


# ---------------------------------------------------------------- studentized

@dataclass(frozen=True)
class StudentizedCoeffs:
    a1: float
    a2: float
    a3: float
    se1: float = 0.0
    se2: float = 0.0
    se3: float = 0.0

    @property
    def a(self):
        return (self.a1, self.a2, self.a3)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise DegenerateModelError("non-finite symbol moments (degenerate C?)")
    se = x.std(ddof=1) / np.sqrt(x.size) if x.size > 1 else 0.0
    return float(x.mean()), float(se)


def studentized_coeffs(H: dict, C, h5_sign: str = "derived") -> StudentizedCoeffs:
    """(a1, a2, a3) with Monte Carlo standard errors.

    ``H`` maps "H1".."H6" to per-path arrays (scalar functional G = C).
    Combining the (1,1) and (3,0) terms with H4 = H5/2 leaves
    −½H5 C^{-3/2} y in the density, hence the minus sign on the H5 moment;
    ``h5_sign="literal"`` flips it to +½.
    """
    C = np.asarray(C, dtype=float)
    with np.errstate(all="ignore"):
        r = C ** -0.5
        s5 = -0.5 if h5_sign == "derived" else 0.5
        q1 = (H["H2"] * r - 3 * H["H1"] * r + s5 * H["H5"] * r ** 3 + 3 * H["H6"] * r ** 5)
        a1, s1 = _mean_se(q1)
        a2, s2 = _mean_se(H["H3"])
        a3, s3 = _mean_se(H["H1"] * r)
    return StudentizedCoeffs(a1, a2, a3, s1, s2, s3)


class StudentizedDensity:
    kind = "studentized"

    def __init__(self, coeffs: StudentizedCoeffs, n: int):
        if n < 1:
            raise ValueError("n must be ≥ 1")
        self.coeffs = coeffs
        self.n = n

    def parts(self, y):
        """(phi, correction, total); total may dip below 0 in the tails"""
        y = np.asarray(y, dtype=float)
        a1, a2, a3 = self.coeffs.a
        phi = stats.norm.pdf(y)
        corr = phi * (a1 * y + a2 * (y * y - 1) + a3 * y ** 3) / np.sqrt(self.n)
        return phi, corr, phi + corr

    def pdf(self, y):
        return self.parts(y)[2]

    def negative(self, y) -> np.ndarray:
        return self.pdf(y) < 0

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        a1, a2, a3 = self.coeffs.a
        phi = stats.norm.pdf(y)
        return stats.norm.cdf(y) - phi * (a1 + a2 * y + a3 * (y * y + 2)) / np.sqrt(self.n)

    def rectified(self, y):
        """clip at 0 and renormalize on the given (uniform) grid"""
        p = np.clip(self.pdf(y), 0, None)
        return p / np.trapezoid(p, y)

    def integral(self, order: int = 80):
        """Gauss-Hermite integrals of the order-0 part and of the correction"""
        x, w = He.hermegauss(order)
        w = w / _SQRT2PI
        a1, a2, a3 = self.coeffs.a
        corr = (a1 * x + a2 * (x * x - 1) + a3 * x ** 3) / np.sqrt(self.n)
        return float(w.sum()), float(w @ corr)


# ------------------------------------------------------------ symbol terms

@dataclass(frozen=True)
class Term:
    m: int          # order in (iu)
    k: tuple        # multi-index in (iv), one entry per G component
    c0: np.ndarray  # coefficient c(z) = c0 + c1 z, per path
    c1: np.ndarray


def symbol_terms(sym: SymbolCoefficients) -> list:
    """the seven monomials of the symbol with per-path coefficients"""
    q = len(sym.G_names)
    zero = np.zeros(sym.P)
    out = [Term(1, (0,) * q, sym.H2, sym.H3), Term(2, (0,) * q, zero, sym.H1),
           Term(3, (0,) * q, sym.H4, zero), Term(5, (0,) * q, sym.H6, zero)]
    for a in range(q):
        e = tuple(int(i == a) for i in range(q))
        out.append(Term(1, e, sym.H5[:, a], zero))
        out.append(Term(3, e, sym.H8[:, a], zero))
        for b in range(q):
            e2 = tuple(int(i == a) + int(i == b) for i in range(q))
            out.append(Term(1, e2, sym.H7[:, a, b], zero))
    return out


def monomial_table(sym: SymbolCoefficients) -> set:
    return {(t.m, sum(t.k)) for t in symbol_terms(sym)}


# ---------------------------------------------------------------- pair density

def _silverman(u: np.ndarray) -> float:
    sd = u.std(ddof=1)
    iqr = np.subtract(*np.percentile(u, [75, 25]))
    s = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * s * u.size ** -0.2


def _dz_phi_affine(z, x, c0, c1, m):
    """∂_z^m [φ(z; 0, x)(c0 + c1 z)], broadcast over z and x"""
    sx = np.sqrt(x)
    y = z / sx
    phi = normal_pdf(z, x)

    def dphi(j):
        if j < 0:
            return 0.0
        c = np.zeros(j + 1)
        c[-1] = 1.0
        return (-1) ** j * x ** (-j / 2) * He.hermeval(y, c) * phi

    return c0 * dphi(m) + c1 * (z * dphi(m) + m * dphi(m - 1))


class PairDensity:
    """Joint density of (Z, C) with C smoothed by a kernel estimate in log C.

    p^C(x) E[c | C = x] is estimated by the kernel-weighted sum
    (1/x)(1/M) Σ_i K_h(log x − log C_i) c_i, so no division by the density
    estimate is ever needed.  z-derivatives are analytic; x-derivatives are
    central differences with a step tied to the bandwidth.
    """

    kind = "pair"

    def __init__(self, sym: SymbolCoefficients, n: int, bandwidth: float | None = None):
        if sym.G_names[0] != "C":
            raise ValueError("the pair density needs the symbol with G = C")
        C = np.asarray(sym.C, dtype=float)
        if C.size == 0:
            raise ValueError("empty sample")
        if np.any(C <= 0):
            raise DegenerateModelError("C ≤ 0 on some path: zero kernel")
        self.n = n
        self.sym = sym
        self.terms = [t for t in symbol_terms(sym)]
        self.deterministic = bool(C.std() < DETERMINISTIC_SD * max(1.0, C.mean()) or C.size < 2)
        self.u = np.log(C)
        if self.deterministic:
            self.C0 = float(C.mean())
            self.bw = 0.0
            return
        self.bw = float(bandwidth) if bandwidth else _silverman(self.u)
        if not self.bw > 0:
            raise ValueError("degenerate bandwidth")
        self.support = (float(np.exp(self.u.min() - 6 * self.bw)), float(np.exp(self.u.max() + 6 * self.bw)))

    # kernel sums ---------------------------------------------------------
    def _ksum(self, x, vals):
        """(1/x)(1/M) Σ K_h(log x − u_i) vals_i for each x"""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = (np.log(x)[:, None] - self.u[None, :]) / self.bw
        k = np.exp(-0.5 * d * d) / (_SQRT2PI * self.bw)
        return (k @ vals) / self.u.size / x

    def pC(self, x):
        if self.deterministic:
            raise ValueError("deterministic C has no density")
        return self._ksum(x, np.ones(self.u.size))

    def conditional_mean(self, x, vals):
        """Nadaraya-Watson estimate of E[vals | C = x]"""
        return self._ksum(x, vals) / self._ksum(x, np.ones(self.u.size))

    def flag_outside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.deterministic:
            return np.abs(x - self.C0) > 0
        return (x < self.support[0]) | (x > self.support[1])

    def _F(self, t: Term, z, x):
        """∂_z^m [φ(z;0,x) p^C(x) E[c(z)|C=x]] for z (nz,), x (nx,) -> (nz, nx)"""
        A = self._ksum(x, t.c0)
        B = self._ksum(x, t.c1)
        Z, X = np.meshgrid(z, x, indexing="ij")
        return _dz_phi_affine(Z, X, A[None, :], B[None, :], t.m)

    def parts(self, z, x):
        """(order0, correction) on the grid z × x"""
        if self.deterministic:
            raise ValueError("deterministic C: use parts_z")
        z = np.atleast_1d(np.asarray(z, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        Z, X = np.meshgrid(z, x, indexing="ij")
        order0 = normal_pdf(Z, X) * self.pC(x)[None, :]
        corr = np.zeros_like(order0)
        for t in self.terms:
            k = t.k[0]
            if not (np.any(t.c0) or np.any(t.c1)):
                continue
            sgn = (-1) ** (t.m + k)
            if k == 0:
                corr += sgn * self._F(t, z, x)
                continue
            # step in x proportional to the bandwidth in log C
            dx = x * self.bw * 0.25
            up, dn = self._F(t, z, x + dx), self._F(t, z, x - dx)
            if k == 1:
                corr += sgn * (up - dn) / (2 * dx)
            else:
                corr += sgn * (up - 2 * self._F(t, z, x) + dn) / dx ** 2
        return order0, corr / np.sqrt(self.n)

    def pdf(self, z, x):
        o, c = self.parts(z, x)
        return o + c

    def parts_z(self, z):
        """deterministic C: density of Z alone (x-derivative terms vanish)"""
        if not self.deterministic:
            raise ValueError("C is random: use parts")
        z = np.asarray(z, dtype=float)
        corr = np.zeros_like(z)
        for t in self.terms:
            if sum(t.k):
                continue
            corr += (-1) ** t.m * _dz_phi_affine(z, self.C0, t.c0.mean(), t.c1.mean(), t.m)
        return normal_pdf(z, self.C0), corr / np.sqrt(self.n)

    def integrals(self, nz: int = 401, nu: int = 401, zmax: float = 12.0) -> tuple:
        """(∫∫ order0, ∫∫ correction) by trapezoid in (z/√x, log x)"""
        if self.deterministic:
            y = np.linspace(-zmax, zmax, nz)
            z = y * np.sqrt(self.C0)
            o, c = self.parts_z(z)
            return float(np.trapezoid(o, z)), float(np.trapezoid(c, z))
        u = np.linspace(self.u.min() - 8 * self.bw, self.u.max() + 8 * self.bw, nu)
        x = np.exp(u)
        y = np.linspace(-zmax, zmax, nz)
        o_tot, c_tot = np.zeros(nu), np.zeros(nu)
        for i, xi in enumerate(x):
            z = y * np.sqrt(xi)
            o, c = self.parts(z, np.array([xi]))
            o_tot[i] = np.trapezoid(o[:, 0], z)
            c_tot[i] = np.trapezoid(c[:, 0], z)
        return float(np.trapezoid(o_tot * x, u)), float(np.trapezoid(c_tot * x, u))


# ---------------------------------------------------------------- marginal of V

def _dh_terms(m: int, k: int):
    """∂_y^k ∂_z^m h(yz) as a list of (coef, a, b, j): coef y^a z^b h^{(j)}(yz)"""
    if k == 0:
        return [(1, m, 0, m)]
    if k == 1:
        out = [(1, m, 1, m + 1)]
        if m:
            out.append((m, m - 1, 0, m))
        return out
    if k == 2:
        out = [(1, m, 2, m + 2)]
        if m:
            out.append((2 * m, m - 1, 1, m + 1))
        if m >= 2:
            out.append((m * (m - 1), m - 2, 0, m))
        return out
    raise ValueError("y-derivative order above 2")


class MarginalVDensity:
    """Density of V_T as a mixture over paths, corrections by duality.

    The symbol must be built with G = ("Sigma",) so that V = Σ_T Z.  Each
    term y^a z^b h^{(j)}(yz) of ∂_y^k∂_z^m h(yz), integrated against
    c(z)φ(z;0,C), becomes y^a (−1)^j (d/dw)^j [P(w) φ(w; 0, y²C)] at w = v with
    P(w) = (w/y)^b (c0 + c1 w/y).
    """

    kind = "marginal_V"

    def __init__(self, sym: SymbolCoefficients, n: int):
        if sym.G_names != ("Sigma",):
            raise ValueError("marginal_V needs the symbol with G = ('Sigma',)")
        if sym.P == 0:
            raise ValueError("empty sample")
        if np.any(sym.C <= 0):
            raise DegenerateModelError("C ≤ 0 on some path: zero kernel")
        self.n = n
        self.y = sym.Sigma_T
        self.S = sym.Sigma_T ** 2 * sym.C
        self.terms = [t for t in symbol_terms(sym) if np.any(t.c0) or np.any(t.c1)]

    def _term_values(self, v, t: Term, cdf: bool):
        """per-path contributions at points v, shape (P, nv)"""
        y = self.y[:, None]
        S = self.S[:, None]
        v = np.asarray(v, dtype=float)[None, :]
        phi = normal_pdf(v, S)
        total = 0.0
        for coef, a, b, j in _dh_terms(t.m, t.k[0]):
            # P(w) coefficients in w: (c0 w^b + c1 w^{b+1} / y) / y^b
            deg = b + 2 + j
            R = np.zeros((self.y.size, deg + 1))
            R[:, b] = t.c0 / self.y ** b
            R[:, b + 1] = t.c1 / self.y ** (b + 1)
            order = j - 1 if cdf else j
            for _ in range(order):
                # (R φ)' = (R' − w R / S) φ
                dR = np.zeros_like(R)
                dR[:, :-1] = R[:, 1:] * np.arange(1, deg + 1)
                shifted = np.zeros_like(R)
                shifted[:, 1:] = R[:, :-1]
                R = dR - shifted / self.S[:, None]
            val = np.zeros((self.y.size, v.shape[1]))
            for p in range(deg, -1, -1):
                val = val * v + R[:, p:p + 1]
            total = total + coef * y ** a * (-1) ** j * val * phi
        return total

    def parts(self, v):
        """(order0, correction, stderr of the total) at points v"""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        o = normal_pdf(v[None, :], self.S[:, None])
        c = sum((self._term_values(v, t, False) for t in self.terms), np.zeros_like(o))
        c = c / np.sqrt(self.n)
        tot = o + c
        se = tot.std(axis=0, ddof=1) / np.sqrt(tot.shape[0]) if tot.shape[0] > 1 else 0 * v
        return o.mean(0), c.mean(0), se

    def pdf(self, v):
        o, c, _ = self.parts(v)
        return o + c

    def cdf(self, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        o = stats.norm.cdf(v[None, :] / np.sqrt(self.S[:, None]))
        c = sum((self._term_values(v, t, True) for t in self.terms), np.zeros_like(o))
        return (o + c / np.sqrt(self.n)).mean(0)

    def moment(self, p: float, points: int = 4001, width: float = 12.0):
        """∫|v|^p p(v) dv on a uniform grid over ±width·max sd"""
        s = np.sqrt(self.S.max())
        v = np.linspace(-width * s, width * s, points)
        return float(np.trapezoid(np.abs(v) ** p * self.pdf(v), v))

    def second_moment(self) -> float:
        """∫v² p(v) dv in closed form: E[S] + 2 n^{-1/2} E[H3 S]"""
        lead = [t for t in self.terms if t.m == 1 and not sum(t.k)]
        extra = 2 * np.mean(lead[0].c1 * self.S) if lead else 0.0
        return float(np.mean(self.S) + extra / np.sqrt(self.n))

    def integrals(self, points: int = 4001, width: float = 14.0):
        s = np.sqrt(self.S.max())
        v = np.linspace(-width * s, width * s, points)
        o, c, _ = self.parts(v)
        return float(np.trapezoid(o, v)), float(np.trapezoid(c, v))


def expectation_correction(sym: SymbolCoefficients, dh) -> float:
    """Σ_terms E[∫ ∂_z^m ∂_G^k h(z, G) c(z) φ(z; 0, C) dz] by Gauss-Hermite in z.

    ``dh(m, k, z, G)`` returns the mixed derivative for z (P, nq), G (P, q).
    """
    x, w = He.hermegauss(40)
    w = w / _SQRT2PI
    z = np.sqrt(sym.C)[:, None] * x[None, :]
    tot = 0.0
    for t in symbol_terms(sym):
        if not (np.any(t.c0) or np.any(t.c1)):
            continue
        val = dh(t.m, t.k, z, sym.G)
        tot += np.mean((val * (t.c0[:, None] + t.c1[:, None] * z)) @ w)
    return float(tot)


def write_density_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([f"{float(v):.17g}" for v in r])
