"""Add-one difference operator on cylindrical functionals and its adjoint on simple elements."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .cylindrical import (
    DEFAULT_CAP,
    Add,
    Const,
    Count,
    CylindricalFunctional,
    NormalFormTooLarge,
    evaluate,
    expectation,
    mc_expectation,
    shift,
)
from .grid import Cell, GridMismatch, GridSpace
from .ito import ito_integral
from .processes import SimpleAdaptedProcess
from .spaces import Hilbert

__all__ = [
    "DerivativeField",
    "derivative",
    "product_rule_residual",
    "IBPResult",
    "ibp_check",
    "divergence_elementary",
    "divergence_duality",
    "skorohod_vs_ito",
]


@dataclass(frozen=True)
class DerivativeField:
    """``DF = sum_m (F(N + e_m) - F(N)) 1_{B_m}`` as ``(B_m, coefficient)`` entries."""

    grid: GridSpace
    space: object
    entries: tuple

    def coefficient(self, cell: Cell) -> CylindricalFunctional:
        for c, G in self.entries:
            if c == cell:
                return G
        return CylindricalFunctional.zero(self.space, self.grid)

    @property
    def cells(self) -> list[Cell]:
        return [c for c, _ in self.entries]

    def evaluate(self, path) -> dict:
        return {c: evaluate(G, path) for c, G in self.entries}

    def scale(self, a: float) -> "DerivativeField":
        return DerivativeField(self.grid, self.space, tuple((c, G.scale(a)) for c, G in self.entries))


def derivative(F: CylindricalFunctional, prune: bool = True, cap: int = DEFAULT_CAP) -> DerivativeField:
    entries = []
    for cell in sorted(F.cells):
        G = (shift(F, cell) - F).simplified(cap)
        if prune and not G.terms:
            continue
        entries.append((cell, G))
    return DerivativeField(F.grid, F.space, tuple(entries))


def _as_scalar(F: CylindricalFunctional) -> None:
    if F.space.dim != 1:
        raise ValueError("the product rule is checked for scalar functionals")


def product_rule_residual(F: CylindricalFunctional, G: CylindricalFunctional, path, relative: bool = False):
    """Largest gap between ``D(FG)`` and ``(DF)G + F(DG) + DF DG`` over the referenced cells.

    With ``relative=True`` each gap is divided by ``max(1, |D(FG)|)``.
    """
    _as_scalar(F)
    _as_scalar(G)
    FG = F.times(G)
    DFG = derivative(FG, prune=False)
    DF = derivative(F, prune=False)
    DG = derivative(G, prune=False)
    f, g = evaluate(F, path)[..., 0], evaluate(G, path)[..., 0]
    worst = 0.0
    for cell in sorted(FG.cells):
        lhs = evaluate(DFG.coefficient(cell), path)[..., 0]
        df = evaluate(DF.coefficient(cell), path)[..., 0]
        dg = evaluate(DG.coefficient(cell), path)[..., 0]
        gap = np.abs(lhs - (df * g + f * dg + df * dg))
        if relative:
            gap = gap / np.maximum(1.0, np.abs(lhs))
        worst = max(worst, float(np.max(gap)))
    return worst


@dataclass(frozen=True)
class IBPResult:
    lhs: np.ndarray
    rhs: np.ndarray
    engine: str
    lhs_se: np.ndarray | None = None
    rhs_se: np.ndarray | None = None

    def __iter__(self):
        yield self.lhs
        yield self.rhs


def _check_regions(B: Iterable[Cell], F: CylindricalFunctional) -> list[Cell]:
    B = list(B)
    for a_i, a in enumerate(B):
        if a.mark not in F.grid.weights:
            raise GridMismatch(f"{a} uses a mark outside the grid")
        for b in B[a_i + 1:]:
            if a.overlaps(b):
                raise ValueError(f"regions {a} and {b} overlap")
        for c in F.cells:
            if a.overlaps(c) and a != c:
                raise ValueError(f"region {a} cuts through the referenced rectangle {c}")
    return B


def _compensated_sum(B: list[Cell], grid: GridSpace) -> CylindricalFunctional:
    terms = [(Add((Count(b), Const(-grid.measure(b)))), (1.0,)) for b in B if grid.measure(b) > 0]
    return CylindricalFunctional(Hilbert(1), grid, tuple(terms))


def ibp_check(
    F: CylindricalFunctional,
    B: Iterable[Cell],
    tolerance: float = 1e-10,
    mode: str = "exact",
    m: int = 100_000,
    seed: int = 0,
    cap: int = DEFAULT_CAP,
) -> IBPResult:
    """Both sides of ``E int_B DF dmu = E(Ntilde(B) F)``.

    Each region of ``B`` must equal a rectangle read by ``F`` or be disjoint
    from all of them.  ``mode="auto"`` falls back to Monte Carlo when the
    exact engine exceeds its size cap.
    """
    if mode not in ("exact", "monte_carlo", "auto"):
        raise ValueError(f"unknown mode {mode!r}")
    B = _check_regions(B, F)
    grid = F.grid
    DF = derivative(F, cap=cap)
    lhs_f = CylindricalFunctional.zero(F.space, grid)
    for cell, G in DF.entries:
        if cell in B:
            lhs_f = lhs_f + G.scale(grid.measure(cell))
    rhs_f = F.times(_compensated_sum(B, grid))
    if mode != "monte_carlo":
        try:
            return IBPResult(
                expectation(lhs_f, tolerance, cap), expectation(rhs_f, tolerance, cap), "exact"
            )
        except NormalFormTooLarge:
            if mode == "exact":
                raise
    lv, ls = mc_expectation(lhs_f, m, seed)
    rv, rs = mc_expectation(rhs_f, m, seed)
    return IBPResult(lv, rv, "monte_carlo", ls, rs)


def divergence_elementary(B: Iterable[Cell], F: CylindricalFunctional) -> CylindricalFunctional:
    """``delta(1_B F) = Ntilde(B) F`` for ``B`` disjoint from the rectangles read by ``F``."""
    B = list(B)
    for b in B:
        for c in F.cells:
            if b.overlaps(c):
                raise ValueError(f"{b} is not disjoint from {c}, which F depends on")
    for a_i, a in enumerate(B):
        for b in B[a_i + 1:]:
            if a.overlaps(b):
                raise ValueError(f"regions {a} and {b} overlap")
    return F.times(_compensated_sum(B, F.grid))


def divergence_duality(
    G: CylindricalFunctional,
    B: Iterable[Cell],
    F: CylindricalFunctional,
    tolerance: float = 1e-10,
    cap: int = DEFAULT_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """``E <DG, 1_B F>_{L^2(mu)}`` and ``E <G, delta(1_B F)>``, both exact."""
    B = _check_regions(B, G)
    grid = G.grid
    DG = derivative(G, cap=cap)
    lhs = CylindricalFunctional.zero(Hilbert(1), grid)
    for cell, H in DG.entries:
        if cell in B:
            lhs = lhs + H.pair(F).scale(grid.measure(cell))
    rhs = G.pair(divergence_elementary(B, F))
    return float(expectation(lhs, tolerance, cap)[0]) if lhs.terms else 0.0, float(
        expectation(rhs, tolerance, cap)[0]
    ) if rhs.terms else 0.0


def skorohod_vs_ito(phi: SimpleAdaptedProcess, path, relative: bool = False):
    """Gap between ``sum_terms Ntilde(cell) F`` and the Ito integral of ``phi`` on ``path``."""
    total = 0.0
    for term in phi.terms:
        cell = phi.cell(term)
        total = total + evaluate(divergence_elementary([cell], term[2]), path)
    ito = ito_integral(phi, path)
    gap = np.abs(np.asarray(total) - ito)
    if relative:
        gap = gap / np.maximum(1.0, np.abs(ito))
    return float(np.max(gap)) if np.size(gap) else 0.0
