"""Pathwise compensated integrals, running maxima and stochastic convolutions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .grid import GridSpace, PathBatch, PoissonPath, sample_batch
from .processes import NormEstimate, SimpleAdaptedProcess, lp_estimate
from .spaces import Hilbert

__all__ = [
    "MissingJumpTimes",
    "ito_integral",
    "maximal_path",
    "mc_moment",
    "SemigroupSpec",
    "stochastic_convolution",
    "convolution_maximal",
]


class MissingJumpTimes(ValueError):
    """The computation needs jump times; sample with ``with_jump_times=True``."""


def _as_batch(path) -> tuple[PathBatch, bool]:
    if isinstance(path, PoissonPath):
        return path.as_batch(), True
    return path, False


def _mark_mask(phi: SimpleAdaptedProcess, marks) -> np.ndarray:
    cells = phi.grid.cells
    if marks is None:
        return np.ones(len(cells), dtype=bool)
    marks = set(marks)
    return np.array([c.mark in marks for c in cells])


def ito_integral(phi: SimpleAdaptedProcess, path, t: float = math.inf, marks=None):
    """``int_{(0,t] x B} phi dNtilde`` with ``B`` the union of ``marks`` (all marks by default)."""
    batch, single = _as_batch(path)
    grid = phi.grid
    Y = phi.cell_values(batch)
    keep = _mark_mask(phi, marks)
    out = np.zeros((batch.size, phi.space.dim))
    for ci, cell in enumerate(grid.cells):
        if not keep[ci] or not np.any(Y[:, ci, :]):
            continue
        r = cell.restrict(t)
        if r is None:
            continue
        if r != cell and batch.jumps is None:
            raise MissingJumpTimes(f"t={t} falls inside {cell}; sample with jump times")
        tilde = batch.region_count(r) - grid.measure(r)
        out += tilde[:, None] * Y[:, ci, :]
    return out[0] if single else out


def maximal_path(phi: SimpleAdaptedProcess, path, marks=None):
    """Exact ``sup_t ||int_{(0,t] x B} phi dNtilde||`` per sample.

    Between jumps the integral moves along a straight line (the compensator
    drift), so the supremum of the convex norm is attained at an interval
    end, a jump time, or just before a jump.
    """
    batch, single = _as_batch(path)
    if batch.jumps is None:
        raise MissingJumpTimes("the running maximum needs jump times")
    grid = phi.grid
    norm = phi.space.norm
    Y = phi.cell_values(batch) * _mark_mask(phi, marks)[None, :, None]
    nm = len(grid.marks)
    w = np.array([mk.weight for mk in grid.marks])
    m, d = batch.size, phi.space.dim
    X = np.zeros((m, d))
    best = np.zeros(m)
    for i in range(grid.n_intervals):
        a, b = grid.times[i], grid.times[i + 1]
        cols = range(i * nm, (i + 1) * nm)
        drift = -np.einsum("j,mjd->md", w, Y[:, i * nm:(i + 1) * nm, :])
        ss, tt, vv = [], [], []
        for j, col in enumerate(cols):
            cj = batch.jumps[col]
            if cj.sample.size:
                ss.append(cj.sample)
                tt.append(cj.time)
                vv.append(Y[cj.sample, col, :])
        J = np.zeros((m, d))
        if ss:
            s, tau, v = np.concatenate(ss), np.concatenate(tt), np.concatenate(vv)
            order = np.lexsort((tau, s))
            s, tau, v = s[order], tau[order], v[order]
            cum = np.cumsum(v, axis=0)
            starts = np.r_[0, np.flatnonzero(np.diff(s)) + 1]
            group = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, s.size]))
            offset = np.where(starts[group, None] > 0, cum[starts[group] - 1], 0.0)
            left = X[s] + drift[s] * (tau - a)[:, None] + (cum - v - offset)
            cand = np.maximum(norm(left), norm(left + v))
            np.maximum.at(best, s, cand)
            np.add.at(J, s, v)
        X = X + drift * (b - a) + J
        best = np.maximum(best, norm(X))
    return float(best[0]) if single else best


def mc_moment(
    functional: Callable[[PathBatch], np.ndarray],
    grid: GridSpace,
    p: float,
    m: int,
    seed: int,
    with_jump_times: bool = False,
) -> NormEstimate:
    """``(E functional**p)**(1/p)`` from ``m`` seeded paths."""
    batch = sample_batch(grid, seed, m, with_jump_times=with_jump_times)
    return lp_estimate(np.asarray(functional(batch), dtype=float), p)


@dataclass(frozen=True, eq=False)
class SemigroupSpec:
    """``S(u) = exp(-u A)`` for a generator whose symmetric part is positive semidefinite."""

    generator: np.ndarray

    def __post_init__(self):
        A = np.array(self.generator, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("generator must be a square matrix")
        if not np.all(np.isfinite(A)):
            raise ValueError("generator entries must be finite")
        object.__setattr__(self, "generator", A)
        scale = max(1.0, float(np.abs(A).max()))
        if np.linalg.eigvalsh((A + A.T) / 2.0).min() < -1e-12 * scale:
            raise ValueError("not a contraction generator: symmetric part is not positive semidefinite")
        for u in np.r_[0.0, np.geomspace(1e-3, 1e3, 13)]:
            if np.linalg.norm(self.operator(u), 2) > 1.0 + 1e-10:
                raise ValueError(f"not a contraction generator: ||S({u:g})|| > 1")

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, damping: float = 1.0, rotation: float = 1.0):
        B = rng.standard_normal((d, d)) / math.sqrt(d)
        C = rng.standard_normal((d, d)) / math.sqrt(d)
        return cls(damping * B @ B.T + rotation * (C - C.T))

    def operator(self, u: float) -> np.ndarray:
        return expm(-u * self.generator)

    def integral(self, h: float) -> np.ndarray:
        """``int_0^h S(v) dv`` from the exponential of an augmented matrix."""
        d = self.dim
        M = np.zeros((2 * d, 2 * d))
        M[:d, :d] = -self.generator
        M[:d, d:] = np.eye(d)
        return expm(h * M)[:d, d:]

    @cached_property
    def _eig(self):
        lam, V = np.linalg.eig(self.generator)
        if np.linalg.cond(V) > 1e8:
            return None
        Vinv = np.linalg.inv(V)
        for u in (0.1, 1.0):
            approx = (V * np.exp(-lam * u)) @ Vinv
            if np.abs(approx - self.operator(u)).max() > 1e-10:
                return None
        return lam, V, Vinv

    def propagate(self, Z: np.ndarray, r: np.ndarray, h: np.ndarray) -> np.ndarray:
        """``S(h) Z - (int_0^h S) r`` row-wise, ``h`` of shape (m,)."""
        eig = self._eig
        if eig is not None:
            lam, V, Vinv = eig
            zh, rh = Z @ Vinv.T, r @ Vinv.T
            lh = lam[None, :] * h[:, None]
            decay = np.exp(-lh)
            small = np.abs(lh) < 1e-12
            safe = np.where(small, 1.0, lam[None, :])
            phi1 = np.where(small, h[:, None] + 0j, -np.expm1(-lh) / safe)
            return np.real((decay * zh - phi1 * rh) @ V.T)
        d = self.dim
        M = np.zeros((h.size, 2 * d, 2 * d))
        M[:, :d, :d] = -self.generator
        M[:, :d, d:] = np.eye(d)
        E = expm(M * h[:, None, None])
        return np.einsum("mij,mj->mi", E[:, :d, :d], Z) - np.einsum("mij,mj->mi", E[:, :d, d:], r)


def _check_convolution(phi: SimpleAdaptedProcess, semigroup: SemigroupSpec, batch: PathBatch):
    if not isinstance(phi.space, Hilbert):
        raise ValueError("stochastic convolutions are implemented for Euclidean spaces")
    if semigroup.dim != phi.space.dim:
        raise ValueError("semigroup and process dimensions differ")
    if batch.jumps is None:
        raise MissingJumpTimes("stochastic convolutions need jump times")


def stochastic_convolution(phi: SimpleAdaptedProcess, path, semigroup: SemigroupSpec, t: float, marks=None):
    """``int_{(0,t] x B} S(t-u) phi(u) dNtilde``, summed jump by jump with ``expm``."""
    batch, single = _as_batch(path)
    _check_convolution(phi, semigroup, batch)
    grid = phi.grid
    Y = phi.cell_values(batch) * _mark_mask(phi, marks)[None, :, None]
    out = np.zeros((batch.size, phi.space.dim))
    for ci, cell in enumerate(grid.cells):
        if cell.t0 >= t or not np.any(Y[:, ci, :]):
            continue
        cj = batch.jumps[ci]
        hit = cj.time <= t
        if np.any(hit):
            S = expm(-(t - cj.time[hit])[:, None, None] * semigroup.generator)
            np.add.at(out, cj.sample[hit], np.einsum("kij,kj->ki", S, Y[cj.sample[hit], ci, :]))
        hi = min(cell.t1, t)
        w = grid.weights[cell.mark]
        K = semigroup.operator(t - hi) @ semigroup.integral(hi - cell.t0)
        out -= w * Y[:, ci, :] @ K.T
    return out[0] if single else out


def convolution_maximal(phi: SimpleAdaptedProcess, path, semigroup: SemigroupSpec, t_grid, marks=None):
    """``max ||Z_t||`` over ``t_grid``, the process grid times and every jump time.

    ``Z`` solves ``dZ = -A Z dt + phi dNtilde``; it is advanced exactly between
    consecutive candidate times.  This is a lower approximation of the
    supremum that can only grow when ``t_grid`` gets denser.
    """
    batch, single = _as_batch(path)
    _check_convolution(phi, semigroup, batch)
    grid = phi.grid
    m, d = batch.size, phi.space.dim
    Y = phi.cell_values(batch) * _mark_mask(phi, marks)[None, :, None]
    nm = len(grid.marks)
    w = np.array([mk.weight for mk in grid.marks])
    # drift per sample and interval; zero past the horizon
    R = np.einsum("j,mijd->mid", w, Y.reshape(m, grid.n_intervals, nm, d))
    R = np.concatenate([R, np.zeros((m, 1, d))], axis=1)

    common = np.unique(np.r_[np.asarray(t_grid, dtype=float), np.asarray(grid.times)])
    common = common[common > 0]
    ss = [np.repeat(np.arange(m), common.size)]
    tt = [np.tile(common, m)]
    vv = [np.zeros((m * common.size, d))]
    for ci in range(len(grid.cells)):
        cj = batch.jumps[ci]
        if cj.sample.size:
            ss.append(cj.sample)
            tt.append(cj.time)
            vv.append(Y[cj.sample, ci, :])
    s, tau, v = np.concatenate(ss), np.concatenate(tt), np.concatenate(vv)
    order = np.lexsort((tau, s))
    s, tau, v = s[order], tau[order], v[order]
    counts = np.bincount(s, minlength=m)
    K = int(counts.max())
    starts = np.r_[0, np.cumsum(counts)[:-1]]
    pos = np.arange(s.size) - starts[s]
    T = np.zeros((m, K))
    V = np.zeros((m, K, d))
    T[s, pos] = tau
    V[s, pos] = v
    last = T[np.arange(m), counts - 1]
    pad = np.arange(K)[None, :] >= counts[:, None]
    T = np.where(pad, last[:, None], T)
    interval = np.clip(np.searchsorted(grid.times, T, side="left") - 1, 0, grid.n_intervals)
    interval = np.where(T > grid.horizon, grid.n_intervals, interval)

    norm = phi.space.norm
    Z = np.zeros((m, d))
    best = np.zeros(m)
    prev = np.zeros(m)
    rows = np.arange(m)
    for k in range(K):
        h = T[:, k] - prev
        Z = semigroup.propagate(Z, R[rows, interval[:, k]], h)
        left = norm(Z)
        Z = Z + V[:, k]
        best = np.maximum(best, np.maximum(left, norm(Z)))
        prev = T[:, k]
    return float(best[0]) if single else best
