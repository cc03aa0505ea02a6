"""Seeded random instances for the identity checks."""
from __future__ import annotations

import numpy as np

from ..cylindrical import Add, Const, Count, CylindricalFunctional, Expr, IndicatorLe, Mul, Pow
from ..grid import Cell, GridSpace, MarkSet
from ..processes import SimpleAdaptedProcess
from ..spaces import Hilbert, SpaceSpec

__all__ = ["random_grid", "random_expr", "random_functional", "random_adapted", "random_regions"]


def random_grid(rng: np.random.Generator, max_intervals: int = 3, max_marks: int = 2) -> GridSpace:
    n = int(rng.integers(1, max_intervals + 1))
    k = int(rng.integers(1, max_marks + 1))
    steps = rng.uniform(0.2, 1.0, n)
    times = np.r_[0.0, np.cumsum(steps)]
    weights = rng.uniform(0.2, 1.0, k)
    return GridSpace(tuple(times), tuple(MarkSet(j, float(w)) for j, w in enumerate(weights)))


def random_expr(rng: np.random.Generator, cells: list[Cell], depth: int = 3) -> Expr:
    """Small expression over ``cells``: sums, products, powers up to 3, indicators."""
    if not cells or depth <= 0 or rng.random() < 0.25:
        if cells and rng.random() < 0.7:
            c = cells[int(rng.integers(len(cells)))]
            if rng.random() < 0.2:
                return IndicatorLe(c, int(rng.integers(0, 3)))
            return Count(c)
        return Const(float(np.round(rng.normal(), 3)))
    kind = rng.choice(["add", "mul", "pow", "ind"], p=[0.4, 0.3, 0.2, 0.1])
    if kind == "add":
        return Add((random_expr(rng, cells, depth - 1), random_expr(rng, cells, depth - 1)))
    if kind == "mul":
        return Mul((random_expr(rng, cells, depth - 1), random_expr(rng, cells, depth - 1)))
    if kind == "pow":
        return Pow(random_expr(rng, cells, depth - 2), int(rng.integers(0, 4)))
    c = cells[int(rng.integers(len(cells)))]
    return IndicatorLe(c, int(rng.integers(0, 3)))


def random_functional(
    rng: np.random.Generator,
    grid: GridSpace,
    space: SpaceSpec | None = None,
    cells: list[Cell] | None = None,
    n_terms: int = 2,
    depth: int = 3,
) -> CylindricalFunctional:
    space = space or Hilbert(1)
    cells = grid.cells if cells is None else cells
    terms = tuple(
        (random_expr(rng, cells, depth), tuple(np.round(rng.normal(size=space.dim), 3)))
        for _ in range(n_terms)
    )
    return CylindricalFunctional(space, grid, terms)


def random_adapted(rng: np.random.Generator, grid: GridSpace, space: SpaceSpec, n_terms: int = 4):
    """Random adapted process on ``grid`` (cell measures must already be at most one)."""
    cells = grid.cells
    terms = []
    for _ in range(n_terms):
        c = cells[int(rng.integers(len(cells)))]
        i = grid.interval_of(c.t0, c.t1)
        past = [b for b in cells if b.t1 <= c.t0 + 1e-12]
        F = random_functional(rng, grid, space, past, n_terms=1, depth=2)
        terms.append((i, c.mark, F))
    return SimpleAdaptedProcess(grid, space, tuple(terms))


def random_regions(rng: np.random.Generator, grid: GridSpace, k: int | None = None) -> list[Cell]:
    cells = grid.cells
    k = int(rng.integers(0, len(cells) + 1)) if k is None else k
    idx = rng.choice(len(cells), size=min(k, len(cells)), replace=False)
    return [cells[i] for i in sorted(idx)]
