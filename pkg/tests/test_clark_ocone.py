import numpy as np
import pytest

from poissonsi.clark_ocone import SliceRefinement, project_adapted, reconstruct_residual
from poissonsi.cylindrical import CylindricalFunctional, compensated, const, count, evaluate, indicator_le
from poissonsi.grid import Cell, GridSpace, MarkSet, sample_batch
from poissonsi.malliavin import derivative
from poissonsi.processes import SimpleAdaptedProcess
from poissonsi.spaces import Hilbert

G = GridSpace((0.0, 1.0), (MarkSet(0, 1.0),))
B = G.cells[0]


def quadratic():
    return CylindricalFunctional.scalar(count(B) ** 2, G)


def coefficients(phi):
    return sorted(phi.coefficients().items())


def test_slice_refinement():
    fine = SliceRefinement(GridSpace.uniform(2.0, 2, [1.0]), 4).grid
    assert fine.n_intervals == 8
    with pytest.raises(ValueError):
        SliceRefinement(G, 0)


@pytest.mark.parametrize("K", [1, 2, 4])
def test_deterministic_field_is_unchanged(K):
    g = GridSpace.uniform(1.0, 2, [1.0, 0.5])
    x = [(1.0, 2.0), (0.0, -1.0), (3.0, 0.5), (-2.0, 1.0)]
    F = CylindricalFunctional(
        Hilbert(2), g, tuple((compensated(c, g), v) for c, v in zip(g.cells, x))
    )
    phi = project_adapted(derivative(F), K)
    vals = {c: evaluate(H, {}) for c, H in phi.coefficients().items()}
    for c, v in zip(g.cells, x):
        pieces = [k for k in vals if c.contains(k)]
        assert len(pieces) == K
        for k in pieces:
            np.testing.assert_allclose(vals[k], v)


def test_quadratic_one_slice():
    phi = project_adapted(derivative(quadratic()), 1)
    (cell, H), = coefficients(phi)
    assert cell == B
    assert H.is_deterministic
    assert evaluate(H, {})[0] == pytest.approx(3.0, abs=1e-10)


def test_quadratic_two_slices():
    phi = project_adapted(derivative(quadratic()), 2)
    (c1, H1), (c2, H2) = coefficients(phi)
    assert (c1, c2) == (Cell(0.0, 0.5, 0), Cell(0.5, 1.0, 0))
    assert evaluate(H1, {})[0] == pytest.approx(3.0, abs=1e-10)
    for n in range(6):
        assert evaluate(H2, {c1: n})[0] == pytest.approx(2 * (n + 0.5) + 1, abs=1e-10)


def test_projection_is_idempotent():
    g = GridSpace.uniform(1.0, 2, [1.0])
    F = CylindricalFunctional.scalar(count(g.cells[0]) ** 2 * count(g.cells[1]) + indicator_le(g.cells[1], 1), g)
    once = project_adapted(derivative(F), 2)
    twice = project_adapted(once, 1)
    a = {c: H for c, H in once.coefficients().items()}
    b = {c: H for c, H in twice.coefficients().items()}
    assert set(a) == set(b)
    batch = sample_batch(once.grid, 0, 500, with_jump_times=True)
    for c in a:
        np.testing.assert_allclose(evaluate(a[c], batch), evaluate(b[c], batch), atol=1e-10)


def test_projection_slices_a_coarse_process():
    g = GridSpace.uniform(1.0, 1, [1.0])
    phi = SimpleAdaptedProcess(g, Hilbert(1), ((0, 0, CylindricalFunctional.scalar(const(1.0), g)),))
    assert len(project_adapted(phi, 3).terms) == 3


@pytest.mark.parametrize("K", [1, 3])
def test_linear_functional_reconstructs_exactly(K):
    g = GridSpace.uniform(1.0, 2, [1.0, 0.5])
    F = CylindricalFunctional(Hilbert(2), g, tuple((compensated(c, g), (1.0, -1.0)) for c in g.cells))
    est = reconstruct_residual(F, K, m=2000, seed=1)
    assert est.extra["max_abs"] <= 1e-12
    const_F = CylindricalFunctional.constant((2.0, 1.0), Hilbert(2), g)
    assert reconstruct_residual(const_F, K, m=100, seed=1).value == 0.0


def test_quadratic_residual_one_slice():
    est = reconstruct_residual(quadratic(), 1, p=2.0, m=100_000, seed=0)
    assert abs(est.value**2 - 2.0) <= 4 * 2 * est.value * est.standard_error


def test_quadratic_residual_decreases():
    vals = [reconstruct_residual(quadratic(), K, m=50_000, seed=3) for K in (1, 2, 4, 8)]
    for a, b in zip(vals, vals[1:]):
        assert b.value <= a.value + 4 * np.hypot(a.standard_error, b.standard_error)
    assert vals[-1].value < vals[0].value / 2
