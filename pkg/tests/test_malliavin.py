import math

import numpy as np
import pytest

from poissonsi.cylindrical import CylindricalFunctional, compensated, const, count, evaluate, indicator_le, normal_form
from poissonsi.grid import Cell, GridSpace, MarkSet, PoissonPath, refine_grid, sample_batch
from poissonsi.harness.instances import random_adapted, random_functional, random_grid, random_regions
from poissonsi.malliavin import (
    derivative,
    divergence_duality,
    divergence_elementary,
    ibp_check,
    product_rule_residual,
    skorohod_vs_ito,
)
from poissonsi.processes import SimpleAdaptedProcess
from poissonsi.spaces import Hilbert

G = GridSpace((0.0, 1.0, 2.0), (MarkSet(0, 0.8), MarkSet(1, 0.3)))
B, B2 = Cell(0.0, 1.0, 0), Cell(1.0, 2.0, 1)
X = (2.0, -1.0)


def vec(expr):
    return CylindricalFunctional(Hilbert(2), G, ((expr, X),))


def only_nf(F):
    assert len(F.terms) == 1
    return normal_form(F.terms[0][0])


def test_derivative_examples():
    DF = derivative(vec(compensated(B, G)))
    assert DF.cells == [B]
    assert only_nf(DF.coefficient(B)) == {(): 1.0}
    assert DF.coefficient(B).terms[0][1] == X
    DF2 = derivative(vec(count(B) ** 2))
    for n in range(5):
        got = evaluate(DF2.coefficient(B), PoissonPath(G, (n, 0, 0, 0), 0, 0))
        np.testing.assert_allclose(got, (2 * n + 1) * np.array(X))
    assert not derivative(vec(count(B) ** 3)).coefficient(B2).terms


def test_constants_are_annihilated_and_derivative_is_linear():
    assert not derivative(CylindricalFunctional.constant(X, Hilbert(2), G)).entries
    rng = np.random.default_rng(0)
    batch = sample_batch(G, 1, 200)
    for _ in range(20):
        F = random_functional(rng, G, Hilbert(2))
        H = random_functional(rng, G, Hilbert(2))
        a = float(rng.normal())
        lhs = derivative(F.scale(a) + H)
        dF, dH = derivative(F, prune=False), derivative(H, prune=False)
        for cell in G.cells:
            np.testing.assert_allclose(
                evaluate(lhs.coefficient(cell), batch),
                a * evaluate(dF.coefficient(cell), batch) + evaluate(dH.coefficient(cell), batch),
                atol=1e-9,
            )


def scalar(expr, grid=G):
    return CylindricalFunctional.scalar(expr, grid)


def test_product_rule_examples():
    path = PoissonPath(G, (3, 1, 0, 2), 0, 0)
    assert product_rule_residual(scalar(count(B)), scalar(count(B)), path) == 0.0
    F = scalar(count(B) ** 2 * indicator_le(B2, 1))
    assert product_rule_residual(F, scalar(const(1.0)), path) == 0.0


def test_product_rule_on_random_pairs():
    rng = np.random.default_rng(3)
    for i in range(200):
        grid = refine_grid(random_grid(rng))
        F, H = random_functional(rng, grid), random_functional(rng, grid)
        batch = sample_batch(grid, i, 20)
        assert product_rule_residual(F, H, batch, relative=True) <= 1e-9


@pytest.mark.parametrize("lam", [0.3, 1.0, 2.5])
def test_ibp_examples(lam):
    g = GridSpace((0.0, 1.0), (MarkSet(0, lam),))
    c = g.cells[0]
    lhs, rhs = ibp_check(scalar(count(c), g), [c])
    assert lhs[0] == pytest.approx(lam, abs=1e-10) and rhs[0] == pytest.approx(lam, abs=1e-10)
    lhs, rhs = ibp_check(scalar(indicator_le(c, 0), g), [c], tolerance=1e-12)
    expected = -lam * math.exp(-lam)
    assert lhs[0] == pytest.approx(expected, abs=1e-12)
    assert rhs[0] == pytest.approx(expected, abs=1e-12)
    lhs, rhs = ibp_check(scalar(const(4.0), g), [c])
    assert lhs[0] == 0.0 and abs(rhs[0]) <= 1e-12


def test_ibp_on_random_functionals():
    rng = np.random.default_rng(5)
    for _ in range(100):
        grid = refine_grid(random_grid(rng))
        F = random_functional(rng, grid, Hilbert(2))
        regions = random_regions(rng, grid)
        res = ibp_check(F, regions, tolerance=1e-10)
        np.testing.assert_allclose(res.lhs, res.rhs, atol=2e-10)


def test_ibp_monte_carlo_mode_agrees():
    F = vec(count(B) ** 2 * indicator_le(B2, 1) + compensated(B2, G))
    exact = ibp_check(F, [B, B2])
    mc = ibp_check(F, [B, B2], mode="monte_carlo", m=200_000, seed=2)
    assert mc.engine == "monte_carlo"
    assert np.all(np.abs(mc.lhs - exact.lhs) <= 4 * mc.lhs_se + 1e-12)
    assert np.all(np.abs(mc.rhs - exact.rhs) <= 4 * mc.rhs_se + 1e-12)
    with pytest.raises(ValueError):
        ibp_check(F, [Cell(0.0, 0.5, 0)])


def test_divergence_examples():
    one = CylindricalFunctional.constant(X, Hilbert(2), G)
    out = divergence_elementary([B], one)
    batch = sample_batch(G, 0, 100)
    np.testing.assert_allclose(
        evaluate(out, batch), (batch.region_count(B) - G.measure(B))[:, None] * np.array(X)
    )
    g0 = GridSpace((0.0, 1.0, 2.0), (MarkSet(0, 0.0), MarkSet(1, 1.0)))
    zero = divergence_elementary([Cell(0.0, 1.0, 0)], CylindricalFunctional.constant(X, Hilbert(2), g0))
    assert not np.any(evaluate(zero, sample_batch(g0, 0, 50)))
    with pytest.raises(ValueError):
        divergence_elementary([B], vec(count(B)))


def test_divergence_duality_on_random_pairs():
    rng = np.random.default_rng(6)
    for _ in range(60):
        grid = refine_grid(random_grid(rng))
        cells = grid.cells
        regions = random_regions(rng, grid, k=1)
        free = [c for c in cells if c not in regions]
        G_ = random_functional(rng, grid, Hilbert(2))
        F = random_functional(rng, grid, Hilbert(2), cells=free) if free else CylindricalFunctional.constant(
            (1.0, 1.0), Hilbert(2), grid
        )
        lhs, rhs = divergence_duality(G_, regions, F)
        assert lhs == pytest.approx(rhs, abs=1e-9 * max(1.0, abs(rhs)))


def test_skorohod_examples():
    g = GridSpace.uniform(2.0, 2, [1.0])
    c1, c2 = g.cells
    det = SimpleAdaptedProcess.from_cells(g, Hilbert(1), [(c1, scalar(const(2.0), g)), (c2, scalar(const(-1.0), g))])
    rnd = SimpleAdaptedProcess.from_cells(g, Hilbert(1), [(c2, scalar(count(c1), g))])
    for n1, n2 in [(0, 0), (2, 3), (5, 1)]:
        path = PoissonPath(g, (n1, n2), 0, 0)
        assert skorohod_vs_ito(det, path) == 0.0
        assert skorohod_vs_ito(rnd, path) == 0.0


def test_skorohod_on_random_adapted_processes():
    rng = np.random.default_rng(7)
    for i in range(200):
        grid = refine_grid(random_grid(rng))
        phi = random_adapted(rng, grid, Hilbert(2))
        batch = sample_batch(grid, i, 20)
        assert skorohod_vs_ito(phi, batch, relative=True) <= 1e-9
