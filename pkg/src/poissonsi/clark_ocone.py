"""Adapted projection on slice refinements and the Clark-Ocone reconstruction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cylindrical import (
    DEFAULT_CAP,
    CylindricalFunctional,
    conditional_expectation,
    evaluate,
    expectation,
)
from .grid import _EPS, Cell, GridMismatch, GridSpace, refine_grid, sample_batch
from .ito import ito_integral
from .malliavin import DerivativeField, derivative
from .processes import NormEstimate, SimpleAdaptedProcess, lp_estimate

__all__ = ["SliceRefinement", "project_adapted", "reconstruct_residual"]


@dataclass(frozen=True)
class SliceRefinement:
    """Every interval of ``base`` cut into ``K`` equal slices."""

    base: GridSpace
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @property
    def grid(self) -> GridSpace:
        return self.base.subdivided(self.K)


def _conditioned(G: CylindricalFunctional, tau: float, tolerance: float, cap: int):
    """``E[G | F_tau]`` on the grid trace: earlier rectangles stay symbolic, straddling ones split."""
    observed, residual = {}, {}
    weights = G.grid.weights
    for c in G.cells:
        if c.t1 <= tau + _EPS:
            observed[c] = c
        elif c.t0 < tau - _EPS:
            observed[c] = Cell(c.t0, tau, c.mark)
            residual[c] = (c.t1 - tau) * weights[c.mark]
    out = conditional_expectation(G, observed, residual, tolerance, cap)
    if isinstance(out, np.ndarray):
        return CylindricalFunctional.constant(out, G.space, G.grid) if np.any(out) else None
    return out


def project_adapted(
    field: DerivativeField | SimpleAdaptedProcess,
    K: int,
    tolerance: float = 1e-12,
    cap: int = DEFAULT_CAP,
) -> SimpleAdaptedProcess:
    """Adapted projection of a random simple field onto the ``K``-slice refinement.

    The coefficient on a slice starting at ``tau`` is the conditional
    expectation of the field's coefficient given the counts up to ``tau``.
    Every entry rectangle must be a union of grid cells.
    """
    if isinstance(field, SimpleAdaptedProcess):
        base = field.grid
        entries = list(field.coefficients().items())
        space = field.space
    else:
        base = refine_grid(field.grid)
        entries = list(field.entries)
        space = field.space
    fine = SliceRefinement(base, K).grid
    terms = []
    for cell, G in entries:
        G = G.rebind(fine)
        pieces = [c for c in fine.cells_in(cell)]
        if not pieces or any(not cell.contains(c) for c in pieces):
            raise GridMismatch(f"{cell} is not a union of grid cells")
        if abs(sum(c.t1 - c.t0 for c in pieces) - (cell.t1 - cell.t0)) > 1e-9:
            raise GridMismatch(f"{cell} is not a union of grid cells")
        cache: dict = {}
        for c in pieces:
            if c.t0 not in cache:
                cache[c.t0] = _conditioned(G, c.t0, tolerance, cap)
            H = cache[c.t0]
            if H is not None and H.terms:
                terms.append((fine.interval_of(c.t0, c.t1), c.mark, H))
    return SimpleAdaptedProcess(fine, space, tuple(terms))


def reconstruct_residual(
    F: CylindricalFunctional,
    K: int,
    p: float = 2.0,
    m: int = 10_000,
    seed: int = 0,
    tolerance: float = 1e-12,
    cap: int = DEFAULT_CAP,
) -> NormEstimate:
    """``(E||F - E F - I(P_K DF)||**p)**(1/p)`` on one set of paths.

    Slice counts come from the jump times of the same paths that ``F`` is
    evaluated on, so both sides share one probability space.
    """
    mean = expectation(F, tolerance, cap)
    phi = project_adapted(derivative(F, cap=cap), K, tolerance, cap)
    batch = sample_batch(refine_grid(F.grid), seed, m, with_jump_times=True)
    fine = batch.refine(phi.grid)
    resid = evaluate(F, batch) - mean[None, :] - ito_integral(phi, fine)
    values = F.space.norm(resid)
    est = lp_estimate(values, p)
    est.extra["max_abs"] = float(np.max(values))
    return est
