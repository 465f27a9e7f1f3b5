"""Brownian paths, coupled reference / continuous Euler paths and Σ.

All arrays carry a leading path axis, so one object holds a batch of paths
driven by consecutive streams.  Fine grids are built from the coarse points
i/n together with the evaluation times, each such base interval cut into m
equal pieces.  Brownian values on the base points depend only on
``(seed, stream)``; refinement adds midpoints by Brownian bridge (m a power
of two) or by a conditioned draw, so coarse values never change with m and
dyadic refinements are nested.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import rng
from .model import DiffusionModel

_SNAP = 1e-12


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Coarse Euler grid i/n refined m times, with ``T_points`` embedded."""

    n: int
    m: int
    T_points: tuple = (1.0,)

    def __post_init__(self):
        if int(self.n) < 1 or int(self.m) < 1:
            raise GridError("n and m must be positive integers")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))
        pts = []
        for T in self.T_points:
            T = float(T)
            if not 0.0 < T <= 1.0:
                raise GridError(f"evaluation time {T} outside (0, 1]")
            k = round(T * self.n)
            pts.append(k / self.n if abs(T - k / self.n) < _SNAP else T)
        object.__setattr__(self, "T_points", tuple(sorted(set(pts))))

    @cached_property
    def base_times(self) -> np.ndarray:
        coarse = [i / self.n for i in range(self.n + 1)]
        return np.array(sorted(set(coarse) | set(self.T_points)))

    @cached_property
    def fine_times(self) -> np.ndarray:
        b = self.base_times
        frac = np.arange(self.m) / self.m
        body = (b[:-1, None] + (b[1:] - b[:-1])[:, None] * frac[None, :]).ravel()
        return np.append(body, 1.0)

    @property
    def N(self) -> int:
        """number of fine intervals"""
        return self.fine_times.size - 1

    @cached_property
    def dt(self) -> np.ndarray:
        return np.diff(self.fine_times)

    @cached_property
    def coarse_index(self) -> np.ndarray:
        """fine index of each coarse point i/n, i = 0..n"""
        b = self.base_times
        pos = np.searchsorted(b, np.arange(self.n + 1) / self.n)
        return pos * self.m

    @cached_property
    def T_index(self) -> np.ndarray:
        return np.searchsorted(self.base_times, np.array(self.T_points)) * self.m

    @cached_property
    def coarse_of_fine(self) -> np.ndarray:
        """number i of the coarse point φ(t_j) = i/n for each fine point"""
        return np.searchsorted(self.coarse_index, np.arange(self.N + 1), side="right") - 1

    @cached_property
    def phi_index(self) -> np.ndarray:
        """fine index of φ(t_j)"""
        return self.coarse_index[self.coarse_of_fine]

    @cached_property
    def tau(self) -> np.ndarray:
        """t_j − φ(t_j)"""
        return self.fine_times - self.fine_times[self.phi_index]

    def base_grid(self) -> "TimeGrid":
        return TimeGrid(self.n, 1, self.T_points)


@dataclass
class BrownianPath:
    grid: TimeGrid
    W: np.ndarray          # (P, N+1), W[:, 0] = 0
    seed: int
    streams: np.ndarray    # (P,)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.W, axis=1)

    @classmethod
    def from_increments(cls, grid: TimeGrid, dW, seed: int = 0, streams=None):
        dW = np.atleast_2d(np.asarray(dW, dtype=float))
        W = np.concatenate([np.zeros((dW.shape[0], 1)), np.cumsum(dW, axis=1)], axis=1)
        if streams is None:
            streams = np.arange(dW.shape[0])
        return cls(grid, W, seed, np.asarray(streams))


def sample_brownian(grid: TimeGrid, seed: int, streams) -> BrownianPath:
    """Brownian values on ``grid.fine_times`` for each stream."""
    streams = np.atleast_1d(np.asarray(streams, dtype=np.int64))
    b = grid.base_times
    hb = np.diff(b)
    P = streams.size
    z = rng.normals(seed, streams, rng.BASE, hb.size)
    W = np.zeros((P, b.size))
    np.cumsum(z * np.sqrt(hb), axis=1, out=W[:, 1:])
    m = grid.m
    if m == 1:
        return BrownianPath(grid, W, seed, streams)
    if m & (m - 1) == 0:
        length = hb.copy()
        level = 0
        while W.shape[1] - 1 < hb.size * m:
            level += 1
            K = W.shape[1] - 1
            zz = rng.normals(seed, streams, rng.REFINE + level, K)
            new = np.empty((P, 2 * K + 1))
            new[:, ::2] = W
            new[:, 1::2] = 0.5 * (W[:, :-1] + W[:, 1:]) + 0.5 * np.sqrt(length) * zz
            W = new
            length = np.repeat(length / 2, 2)
        return BrownianPath(grid, W, seed, streams)
    # general m: fine increments conditioned on each base increment
    zz = rng.normals(seed, streams, rng.REFINE + 64 + m, hb.size * m).reshape(P, hb.size, m)
    zz -= zz.mean(axis=2, keepdims=True)
    dB = np.diff(W, axis=1)
    inc = zz * np.sqrt(hb / m)[None, :, None] + (dB / m)[:, :, None]
    Wf = np.zeros((P, hb.size * m + 1))
    np.cumsum(inc.reshape(P, -1), axis=1, out=Wf[:, 1:])
    Wf[:, ::m] = W  # keep base values bit-exact
    return BrownianPath(grid, Wf, seed, streams)


@dataclass
class CoupledPaths:
    model: DiffusionModel
    path: BrownianPath
    X_ref: np.ndarray
    X_euler: np.ndarray
    X_coarse: np.ndarray    # Euler state at the coarse points, (P, n+1)
    Sigma: np.ndarray
    ref_exact: bool
    flags: np.ndarray       # True where a path produced non-finite values

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def Sigma_inv(self) -> np.ndarray:
        return 1.0 / self.Sigma

    @property
    def P(self) -> int:
        return self.X_ref.shape[0]


def _flag(x: np.ndarray) -> np.ndarray:
    return ~np.all(np.isfinite(x), axis=1)


def euler_coarse(model: DiffusionModel, path: BrownianPath) -> np.ndarray:
    """Classical Euler recursion on the coarse points."""
    g = path.grid
    dWc = np.diff(path.W[:, g.coarse_index], axis=1)
    X = np.empty((path.W.shape[0], g.n + 1))
    X[:, 0] = model.x0
    h = 1.0 / g.n
    with np.errstate(all="ignore"):
        for i in range(g.n):
            x = X[:, i]
            X[:, i + 1] = x + model.a(x) * h + model.b(x) * dWc[:, i]
    return X


def euler_path(model: DiffusionModel, path: BrownianPath, X_coarse=None) -> np.ndarray:
    """Continuous Euler scheme on the fine grid, coefficients frozen at φ(t)."""
    g = path.grid
    if X_coarse is None:
        X_coarse = euler_coarse(model, path)
    c = g.coarse_of_fine
    xp = X_coarse[:, c]
    with np.errstate(all="ignore"):
        return xp + model.a(xp) * g.tau + model.b(xp) * (path.W - path.W[:, g.phi_index])


def reference_path(model: DiffusionModel, path: BrownianPath) -> np.ndarray:
    """Exact solution on the fine grid when the model has one, else fine Euler."""
    g = path.grid
    if model.has_exact:
        with np.errstate(all="ignore"):
            return np.asarray(model.exact_solution(g.fine_times, path.W), dtype=float)
    dW = path.increments
    X = np.empty_like(path.W)
    X[:, 0] = model.x0
    with np.errstate(all="ignore"):
        for j in range(g.N):
            x = X[:, j]
            X[:, j + 1] = x + model.a(x) * g.dt[j] + model.b(x) * dW[:, j]
    return X


def sigma_path(model: DiffusionModel, X_ref: np.ndarray, path: BrownianPath) -> np.ndarray:
    """Σ_t = exp(∫b'(X)dW + ∫(a' − b'^2/2)(X)ds) with left-point sums."""
    x = X_ref[:, :-1]
    b1 = model.b1(x)
    with np.errstate(all="ignore"):
        inc = b1 * path.increments + (model.a1(x) - 0.5 * b1 * b1) * path.grid.dt
        expo = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)
        return np.exp(expo)


def couple(model: DiffusionModel, path: BrownianPath) -> CoupledPaths:
    Xr = reference_path(model, path)
    Xc = euler_coarse(model, path)
    Xe = euler_path(model, path, Xc)
    S = sigma_path(model, Xr, path)
    flags = _flag(Xr) | _flag(Xe) | _flag(S)
    return CoupledPaths(model, path, Xr, Xe, Xc, S, model.has_exact, flags)


def simulate(model: DiffusionModel, grid: TimeGrid, seed: int, streams) -> CoupledPaths:
    return couple(model, sample_brownian(grid, seed, streams))


# binary dump: magic, then n, m, count as little-endian int64, then the
# Brownian values of each path as little-endian float64 rows
_MAGIC = b"EWP1"


def dump_paths(fileobj, path: BrownianPath) -> None:
    g = path.grid
    fileobj.write(_MAGIC + struct.pack("<qqq", g.n, g.m, path.W.shape[0]))
    fileobj.write(np.ascontiguousarray(path.W, dtype="<f8").tobytes())


def load_paths(fileobj, T_points: Sequence[float] = (1.0,)) -> BrownianPath:
    head = fileobj.read(28)
    if head[:4] != _MAGIC:
        raise ValueError("not an EWP1 path dump")
    n, m, count = struct.unpack("<qqq", head[4:])
    g = TimeGrid(n, m, tuple(T_points))
    W = np.frombuffer(fileobj.read(), dtype="<f8").reshape(count, g.N + 1)
    return BrownianPath(g, W.astype(float), 0, np.arange(count))


# affine equations dY = (cY + c̃)dt + (dY + d̃)dW with coefficient processes
# given on the fine grid (arrays (P, N+1), read at left endpoints)

def affine_explicit(c, ct, d, dt_, y0, path: BrownianPath) -> np.ndarray:
    """Y = Σ[y0 + ∫Σ^{-1}((c̃ − d d̃)ds + d̃ dW)], Σ = exp(∫d dW + ∫(c − d²/2)ds)."""
    h = path.grid.dt
    dW = path.increments
    c, ct, d, dt_ = (np.broadcast_to(np.asarray(v, dtype=float), path.W.shape)[:, :-1]
                     for v in (c, ct, d, dt_))
    z = np.zeros((path.W.shape[0], 1))
    expo = np.concatenate([z, np.cumsum(d * dW + (c - 0.5 * d * d) * h, axis=1)], axis=1)
    S = np.exp(expo)
    inner = np.concatenate([z, np.cumsum(((ct - d * dt_) * h + dt_ * dW) / S[:, :-1], axis=1)], axis=1)
    return S * (y0 + inner)


def affine_euler(c, ct, d, dt_, y0, path: BrownianPath) -> np.ndarray:
    h = path.grid.dt
    dW = path.increments
    c, ct, d, dt_ = (np.broadcast_to(np.asarray(v, dtype=float), path.W.shape)
                     for v in (c, ct, d, dt_))
    Y = np.empty(path.W.shape)
    Y[:, 0] = y0
    for j in range(h.size):
        y = Y[:, j]
        Y[:, j + 1] = y + (c[:, j] * y + ct[:, j]) * h[j] + (d[:, j] * y + dt_[:, j]) * dW[:, j]
    return Y
