import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from poissonsi.grid import (
    Cell,
    GridMismatch,
    GridSpace,
    MarkSet,
    PoissonPath,
    compensated_count,
    refine_grid,
    sample_batch,
    sample_given_total,
    sample_path,
)


def one_cell(weight):
    return GridSpace((0.0, 1.0), (MarkSet(0, weight),))


def test_refine_leaves_small_cells_alone():
    g = one_cell(0.5)
    assert refine_grid(g) == g


def test_refine_splits_heavy_cell():
    r = refine_grid(one_cell(3.0))
    assert r.n_intervals == 4
    np.testing.assert_allclose(r.measures(), 0.75)


def test_refine_two_marks():
    g = GridSpace((0.0, 1.0), (MarkSet(0, 1.0), MarkSet(1, 2.0)))
    r = refine_grid(g)
    assert len(r.cells) >= 4
    assert np.all(r.measures() <= 1.0 + 1e-12)
    assert r.refines(g)


grids = st.builds(
    lambda steps, weights: GridSpace(
        tuple(np.concatenate([[0.0], np.cumsum(steps)])),
        tuple(MarkSet(j, w) for j, w in enumerate(weights)),
    ),
    st.lists(st.floats(0.05, 2.0), min_size=1, max_size=4),
    st.lists(st.floats(0.0, 8.0), min_size=1, max_size=3),
)


@settings(max_examples=50, deadline=None)
@given(grids)
def test_refinement_is_idempotent_and_bounded(g):
    r = refine_grid(g)
    assert refine_grid(r) == r
    assert np.all(r.measures() <= 1.0 + 1e-12)
    assert r.refines(g)


def test_invalid_grids():
    with pytest.raises(ValueError):
        GridSpace((0.0, 1.0, 1.0), (MarkSet(0, 1.0),))
    with pytest.raises(ValueError):
        GridSpace((0.5, 1.0), (MarkSet(0, 1.0),))
    with pytest.raises(ValueError):
        MarkSet(0, -1.0)
    with pytest.raises(ValueError):
        GridSpace((0.0, 1.0), (MarkSet(0, 1.0), MarkSet(0, 2.0)))


def test_cells_are_lexicographic():
    g = GridSpace.uniform(1.0, 2, [1.0, 2.0])
    assert g.cells == [Cell(0, 0.5, 0), Cell(0, 0.5, 1), Cell(0.5, 1, 0), Cell(0.5, 1, 1)]


def test_zero_measure_gives_zero_counts():
    batch = sample_batch(one_cell(0.0), seed=3, m=5000)
    assert not batch.counts.any()


def test_unit_cell_moments():
    m = 1_000_000
    batch = sample_batch(one_cell(1.0), seed=0, m=m)
    n = batch.counts[:, 0]
    assert abs(n.mean() - 1.0) <= 4e-3
    assert abs(n.var() - 1.0) <= 4 * np.sqrt(2.0 / m) * 2


@pytest.mark.parametrize("mu", [0.01, 0.3, 1.0])
def test_mean_and_variance_within_4se(mu):
    m = 200_000
    n = sample_batch(one_cell(mu), seed=11, m=m).counts[:, 0].astype(float)
    assert abs(n.mean() - mu) <= 4 * np.sqrt(mu / m)
    # Var of the sample variance for Poisson is mu/m + 2 mu^2/m
    assert abs(n.var(ddof=1) - mu) <= 4 * np.sqrt((mu + 2 * mu**2) / m)


def test_sampling_is_deterministic_and_addressable():
    g = GridSpace.uniform(2.0, 3, [0.7, 1.3])
    full = sample_batch(g, seed=5, m=3000, with_jump_times=True)
    again = sample_batch(g, seed=5, m=3000, with_jump_times=True)
    np.testing.assert_array_equal(full.counts, again.counts)
    part = sample_batch(g, seed=5, m=700, start=1500, with_jump_times=True)
    np.testing.assert_array_equal(part.counts, full.counts[1500:2200])
    assert part.path(3) == full.path(1503)
    assert sample_path(g, 5, 2999, with_jump_times=True) == full.path(2999)
    other = sample_batch(g, seed=6, m=3000)
    assert not np.array_equal(other.counts, full.counts)


def test_jump_times_match_counts():
    g = GridSpace.uniform(1.0, 2, [3.0])
    batch = sample_batch(g, seed=1, m=50, with_jump_times=True)
    for k in range(50):
        path = batch.path(k)  # validation happens in PoissonPath
        assert sum(len(t) for t in path.jump_times) == sum(path.counts)


def test_given_total_paths():
    g = GridSpace.uniform(1.0, 3, [0.4, 0.1])
    batch = sample_given_total(g, seed=4, n=3, m=20_000, with_jump_times=True)
    assert set(batch.counts.sum(axis=1)) == {3}
    for k in range(0, 20_000, 997):
        batch.path(k)
    share = g.measures() / g.measures().sum()
    freq = batch.counts.sum(axis=0) / (3 * 20_000)
    assert np.all(np.abs(freq - share) <= 4 * np.sqrt(share * (1 - share) / (3 * 20_000)))
    again = sample_given_total(g, seed=4, n=3, m=20_000)
    np.testing.assert_array_equal(again.counts, batch.counts)
    assert sample_given_total(g, seed=4, n=0, m=5).counts.sum() == 0
    with pytest.raises(ValueError):
        sample_given_total(g, seed=4, n=-1, m=5)


def test_given_total_strata_recover_expectation():
    g = GridSpace.uniform(1.0, 4, [0.05, 0.02])
    mu = g.measures()
    lam = mu.sum()
    exact = (mu[0] + mu[0] ** 2) * mu[3] + mu[5]
    est = var = 0.0
    for n in range(0, 8):
        P = stats.poisson.pmf(n, lam)
        c = sample_given_total(g, seed=9, n=n, m=40_000).counts
        f = c[:, 0] ** 2 * c[:, 3] + c[:, 5]
        est += P * f.mean()
        var += P**2 * f.var() / f.size
    # f <= N**3 + N bounds what the dropped totals could add
    tail = sum(stats.poisson.pmf(n, lam) * (n**3 + n) for n in range(8, 60))
    assert abs(est - exact) <= 4 * np.sqrt(var) + tail


def test_region_count_through_jump_times():
    g = GridSpace.uniform(1.0, 1, [4.0])
    batch = sample_batch(g, seed=2, m=4000, with_jump_times=True)
    left = batch.region_count(Cell(0.0, 0.25, 0))
    right = batch.region_count(Cell(0.25, 1.0, 0))
    np.testing.assert_array_equal(left + right, batch.counts[:, 0])
    assert abs(left.mean() - 1.0) <= 4 * np.sqrt(1.0 / 4000)
    no_times = sample_batch(g, seed=2, m=10)
    with pytest.raises(ValueError):
        no_times.region_count(Cell(0.0, 0.25, 0))


def test_compensated_count_examples():
    g = one_cell(1.5)
    assert compensated_count(PoissonPath(g, (3,), 0, 0), g.cells) == pytest.approx(1.5)
    assert compensated_count(PoissonPath(g, (3,), 0, 0), []) == 0.0
    g2 = GridSpace((0.0, 1.0), (MarkSet(0, 1.0), MarkSet(1, 0.5)))
    assert compensated_count(PoissonPath(g2, (2, 0), 0, 0), g2.cells) == pytest.approx(0.5)
    with pytest.raises(GridMismatch):
        compensated_count(PoissonPath(g, (3,), 0, 0), [Cell(0.0, 0.5, 0)])


@settings(max_examples=30, deadline=None)
@given(grids, st.integers(0, 10_000), st.data())
def test_compensated_count_is_additive(g, seed, data):
    path = sample_path(g, seed, 0)
    cells = g.cells
    mask = data.draw(st.lists(st.booleans(), min_size=len(cells), max_size=len(cells)))
    a = [c for c, keep in zip(cells, mask) if keep]
    b = [c for c, keep in zip(cells, mask) if not keep]
    total = compensated_count(path, cells)
    assert total == pytest.approx(compensated_count(path, a) + compensated_count(path, b), abs=1e-9)


def test_serialisation():
    g = GridSpace.uniform(2.0, 3, [0.7, 1.3])
    assert GridSpace.from_dict(g.to_dict()) == g
    text = sample_batch(g, seed=0, m=2).to_csv().splitlines()
    assert text[0] == "sample_index,cell_i,cell_j,count"
    assert len(text) == 1 + 2 * len(g.cells)
