import math

import numpy as np
import pytest
from scipy import integrate

from poissonsi.cylindrical import CylindricalFunctional, compensated, count
from poissonsi.grid import GridSpace, MarkSet, PoissonPath, sample_batch
from poissonsi.ito import (
    MissingJumpTimes,
    SemigroupSpec,
    convolution_maximal,
    ito_integral,
    maximal_path,
    mc_moment,
    stochastic_convolution,
)
from poissonsi.processes import EnsembleConfig, SimpleAdaptedProcess, lp_estimate, random_ensemble
from poissonsi.spaces import Hilbert

H1 = Hilbert(1)


def unit(mu=1.0, x=1.0, space=H1):
    g = GridSpace((0.0, 1.0), (MarkSet(0, mu),))
    F = CylindricalFunctional.constant(np.full(space.dim, x), space, g)
    return SimpleAdaptedProcess.from_cells(g, space, [(g.cells[0], F)])


@pytest.mark.parametrize("n", [0, 1, 4])
def test_single_cell_integral(n):
    phi = unit()
    assert ito_integral(phi, PoissonPath(phi.grid, (n,), 0, 0))[0] == pytest.approx(n - 1)
    assert ito_integral(phi, PoissonPath(phi.grid, (n,), 0, 0), t=0.0)[0] == 0.0


@pytest.mark.parametrize("n1,n2", [(0, 3), (2, 0), (3, 5)])
def test_past_count_coefficient(n1, n2):
    g = GridSpace.uniform(2.0, 2, [1.0])
    F = CylindricalFunctional.scalar(count(g.cells[0]), g)
    phi = SimpleAdaptedProcess.from_cells(g, H1, [(g.cells[1], F)])
    got = ito_integral(phi, PoissonPath(phi.grid, (n1, n2), 0, 0))
    assert got[0] == pytest.approx(n1 * (n2 - 1))


def test_integral_needs_jump_times_inside_a_cell():
    phi = unit()
    with pytest.raises(MissingJumpTimes):
        ito_integral(phi, PoissonPath(phi.grid, (2,), 0, 0), t=0.5)
    with pytest.raises(MissingJumpTimes):
        maximal_path(phi, PoissonPath(phi.grid, (2,), 0, 0))


def test_maximal_drift_only():
    phi = unit(mu=0.6, x=1.0, space=Hilbert(2))
    path = PoissonPath(phi.grid, (0,), 0, 0, ((),))
    assert maximal_path(phi, path) == pytest.approx(0.6 * math.sqrt(2))
    assert maximal_path(SimpleAdaptedProcess.zero(phi.grid, Hilbert(2)), path) == 0.0


def dense_sup(phi, path, n=4001):
    ts = np.linspace(0.0, phi.grid.horizon, n)
    jumps = [t for times in path.jump_times for t in times]
    ts = np.unique(np.r_[ts, jumps, [t - 1e-12 for t in jumps]])
    return max(float(np.linalg.norm(ito_integral(phi, path, t=t))) for t in ts if t > 0)


@pytest.mark.parametrize("u", [0.1, 0.5, 0.83])
def test_maximal_single_jump(u):
    phi = unit()
    path = PoissonPath(phi.grid, (1,), 0, 0, ((u,),))
    got = maximal_path(phi, path)
    assert got == pytest.approx(max(u, 1 - u))
    assert got == pytest.approx(dense_sup(phi, path), abs=1e-6)


def test_maximal_matches_dense_search_on_random_processes():
    cfg = EnsembleConfig(space=Hilbert(2), members=6, terms=4, coefficients="polynomial", degree=1)
    for phi in random_ensemble(cfg):
        batch = sample_batch(phi.grid, 5, 8, with_jump_times=True)
        exact = maximal_path(phi, batch)
        for k in range(batch.size):
            ref = dense_sup(phi, batch.path(k), n=801)
            assert ref <= exact[k] + 1e-9
            assert exact[k] - ref <= 1e-6 * max(1.0, exact[k])


def test_mc_moment_examples():
    g = GridSpace((0.0, 1.0), (MarkSet(0, 1.0),))
    est = mc_moment(lambda b: np.full(b.size, 2.0), g, 3.0, 100, 0)
    assert est.value == 2.0 and est.standard_error == 0.0
    tilde = lambda b: np.abs(b.counts[:, 0] - b.grid.measures()[0])
    est = mc_moment(tilde, g, 2.0, 200_000, 1)
    assert abs(est.value - 1.0) <= 4 * est.standard_error
    g2 = GridSpace((0.0, 1.0), (MarkSet(0, 0.5),))
    est = mc_moment(tilde, g2, 4.0, 400_000, 2)
    assert abs(est.value - 1.25**0.25) <= 4 * est.standard_error


def test_integral_has_mean_zero_and_doob_bound():
    cfg = EnsembleConfig(space=Hilbert(2), members=4, terms=4, coefficients="polynomial", degree=2)
    for i, phi in enumerate(random_ensemble(cfg)):
        batch = sample_batch(phi.grid, i, 50_000, with_jump_times=True)
        I = ito_integral(phi, batch)
        se = I.std(axis=0, ddof=1) / math.sqrt(batch.size)
        assert np.all(np.abs(I.mean(axis=0)) <= 4 * se + 1e-12)
        sup = lp_estimate(maximal_path(phi, batch), 2.0)
        end = lp_estimate(np.linalg.norm(I, axis=1), 2.0)
        assert end.value <= sup.value + 1e-12
        assert sup.value <= 2 * end.value + 4 * (sup.standard_error + 2 * end.standard_error)


def test_semigroup_validation():
    with pytest.raises(ValueError):
        SemigroupSpec(-np.eye(2))
    with pytest.raises(ValueError):
        SemigroupSpec(np.ones((2, 3)))
    sg = SemigroupSpec.random(3, np.random.default_rng(0))
    for u in (0.0, 0.3, 5.0):
        assert np.linalg.norm(sg.operator(u), 2) <= 1 + 1e-12


def random_process(d, seed):
    cfg = EnsembleConfig(space=Hilbert(d), members=1, terms=5, coefficients="polynomial", degree=1, seed=seed)
    return random_ensemble(cfg)[0]


def test_identity_semigroup_is_the_integral():
    phi = random_process(3, 1)
    batch = sample_batch(phi.grid, 2, 300, with_jump_times=True)
    sg = SemigroupSpec(np.zeros((3, 3)))
    for t in (0.3, 0.75, 1.0):
        np.testing.assert_allclose(
            stochastic_convolution(phi, batch, sg, t), ito_integral(phi, batch, t=t), atol=1e-10
        )
    zero = SimpleAdaptedProcess.zero(phi.grid, Hilbert(3))
    assert not np.any(stochastic_convolution(zero, batch, sg, 1.0))
    assert not np.any(convolution_maximal(zero, batch, sg, [0.5, 1.0]))


@pytest.mark.parametrize("a", [0.5, 2.0])
def test_scalar_drift_closed_form(a):
    phi = unit()
    path = PoissonPath(phi.grid, (0,), 0, 0, ((),))
    got = stochastic_convolution(phi, path, SemigroupSpec(np.array([[a]])), 1.0)[0]
    quad, _ = integrate.quad(lambda u: -math.exp(-a * (1 - u)), 0.0, 1.0)
    assert got == pytest.approx(-(1 - math.exp(-a)) / a, abs=1e-12)
    assert got == pytest.approx(quad, abs=1e-10)


def test_convolution_maximal_against_maximal_path():
    phi = random_process(2, 3)
    batch = sample_batch(phi.grid, 4, 200, with_jump_times=True)
    sg = SemigroupSpec(np.zeros((2, 2)))
    exact = maximal_path(phi, batch)
    n = 512
    approx = convolution_maximal(phi, batch, sg, np.linspace(0, 1, n + 1))
    Y = phi.cell_values(batch)
    speed = np.einsum("c,mcd->md", np.repeat([m.weight for m in phi.grid.marks], phi.grid.n_intervals * 0 + 1)
                      if False else np.tile([m.weight for m in phi.grid.marks], phi.grid.n_intervals), np.abs(Y))
    slack = np.linalg.norm(speed, axis=1) / n
    assert np.all(approx <= exact + 1e-9)
    assert np.all(exact - approx <= slack + 1e-9)


def test_convolution_maximal_grows_with_the_grid():
    phi = random_process(3, 5)
    sg = SemigroupSpec.random(3, np.random.default_rng(1))
    batch = sample_batch(phi.grid, 6, 500, with_jump_times=True)
    prev = None
    for n in (4, 8, 16, 32):
        cur = convolution_maximal(phi, batch, sg, np.linspace(0, 1, n + 1))
        if prev is not None:
            assert np.all(cur >= prev - 1e-12)
        prev = cur
