import math

import cvxpy as cp
import numpy as np
import pytest

from poissonsi.cylindrical import CylindricalFunctional, compensated, const, count
from poissonsi.grid import Cell, GridSpace, MarkSet, sample_batch
from poissonsi.norms import (
    D,
    Field,
    Intersect,
    NormSpec,
    S,
    Sum,
    dual_expr,
    evaluate_norm,
    parse_norm,
    sum_norm,
)
from poissonsi.processes import (
    EnsembleConfig,
    SimpleAdaptedProcess,
    combined_norm,
    lp_estimate,
    nu_p_norm,
    outer_Lp,
    pathwise_Lq_norm,
    pathwise_square_function,
    random_ensemble,
    stratified_lp_estimate,
)
from poissonsi.spaces import Hilbert, WeightedLq

H2 = Hilbert(2)
X = np.array([3.0, 4.0])


def det(grid, space, cells_values):
    return SimpleAdaptedProcess.from_cells(
        grid, space, [(c, CylindricalFunctional.constant(v, space, grid)) for c, v in cells_values]
    )


def test_pathwise_lq_examples():
    g = GridSpace((0.0, 1.0), (MarkSet(0, 1.0),))
    phi = det(g, H2, [(g.cells[0], X)])
    path = sample_batch(phi.grid, 0, 1).path(0)
    assert pathwise_Lq_norm(phi, path, 3.0) == pytest.approx(5.0)
    assert pathwise_Lq_norm(SimpleAdaptedProcess.zero(g, H2), path, 2.0) == 0.0
    g2 = GridSpace.uniform(1.0, 2, [1.0])
    phi2 = det(g2, H2, [(g2.cells[0], X), (g2.cells[1], -X)])
    assert pathwise_Lq_norm(phi2, sample_batch(g2, 0, 1).path(0), 2.0) == pytest.approx(5.0)


def test_square_function_examples():
    g = GridSpace((0.0, 1.0), (MarkSet(0, 1.0),))
    sp = WeightedLq(3.0, (1.0,))
    path = sample_batch(g, 0, 1).path(0)
    assert pathwise_square_function(det(g, sp, [(g.cells[0], [1.0])]), path) == pytest.approx(1.0)
    assert pathwise_square_function(SimpleAdaptedProcess.zero(g, sp), path) == 0.0
    with pytest.raises(ValueError):
        pathwise_square_function(det(g, H2, [(g.cells[0], X)]), path)


def test_adaptedness_is_enforced():
    g = GridSpace.uniform(2.0, 2, [1.0])
    later = CylindricalFunctional(H2, g, ((count(g.cells[1]), tuple(X)),))
    with pytest.raises(ValueError):
        SimpleAdaptedProcess.from_cells(g, H2, [(g.cells[0], later)])
    with pytest.raises(ValueError):
        SimpleAdaptedProcess(GridSpace.uniform(1.0, 1, [3.0]), H2, ())


def test_outer_lp_examples():
    g = GridSpace.uniform(2.0, 2, [0.5])
    phi = det(g, H2, [(g.cells[0], X)])
    est = outer_Lp(lambda f, b: pathwise_Lq_norm(f, b, 2.0), phi, 3.0, 100, 0)
    assert est.standard_error == 0.0
    assert est.value == pytest.approx(5.0 * math.sqrt(0.5))
    # constant inner value on a random process
    x = np.array([1.0, 0.0])
    rand = SimpleAdaptedProcess.from_cells(
        g, H2, [(g.cells[1], CylindricalFunctional(H2, g, ((compensated(g.cells[0], g), tuple(x)),)))]
    )
    const_inner = outer_Lp(lambda f, b: np.full(b.size, 2.5), rand, 4.0, 1000, 0)
    assert const_inner.value == 2.5 and const_inner.standard_error == 0.0
    # |Ntilde(c')| times the later cell's measure w: second moment w**2 mu(c')
    est = outer_Lp(lambda f, b: pathwise_Lq_norm(f, b, 1.0), rand, 2.0, 200_000, 3)
    assert abs(est.value**2 - 0.25 * 0.5) <= 4 * 2 * est.value * est.standard_error


def test_lp_estimate_constant_and_scaling():
    assert lp_estimate(np.full(10, 3.0), 2.5).value == 3.0
    v = np.random.default_rng(0).exponential(size=5000)
    a, b = lp_estimate(v, 3.0), lp_estimate(7 * v, 3.0)
    assert b.value == pytest.approx(7 * a.value)
    assert b.standard_error == pytest.approx(7 * a.standard_error)


def test_stratified_lp_estimate():
    v = np.random.default_rng(1).exponential(size=5000)
    one, plain = stratified_lp_estimate([(1.0, v)], 3.0), lp_estimate(v, 3.0)
    assert one.value == pytest.approx(plain.value)
    assert one.standard_error == pytest.approx(plain.standard_error)
    two = stratified_lp_estimate([(0.25, np.full(4, 2.0)), (0.75, np.full(9, 1.0))], 2.0)
    assert two.value == pytest.approx(math.sqrt(0.25 * 4 + 0.75))
    assert two.standard_error == 0.0
    with pytest.raises(ValueError):
        stratified_lp_estimate([(0.5, np.array([]))], 2.0)


def test_parse_and_dual():
    e = parse_norm("Sum(Intersect(S(3),D(3)),D(1.5))")
    assert e == Sum((Intersect((S(3.0), D(3.0))), D(1.5)))
    assert dual_expr(e) == Intersect((Sum((S(1.5), D(1.5))), D(3.0)))
    with pytest.raises(ValueError):
        parse_norm("D(0.5)")
    with pytest.raises(ValueError):
        parse_norm("Max(D(2))")


def random_field(rng, m, C, space, p):
    Y = rng.normal(size=(m, C, space.dim)) * rng.choice([0.1, 1.0, 5.0], size=(1, C, 1))
    mu = rng.uniform(0.05, 1.0, size=C)
    return Field(Y, mu, space, p)


def test_combined_norm_examples():
    g = GridSpace((0.0, 1.0), (MarkSet(0, 0.3),))
    c = -2.0
    phi = det(g, Hilbert(1), [(g.cells[0], [c])])
    for s, p in [(1.5, 3.0), (3.0, 1.5), (2.0, 4.0)]:
        got = combined_norm(NormSpec(Sum((D(s), D(p))), p), phi)
        assert got.value == pytest.approx(min(0.3 ** (1 / s), 0.3 ** (1 / p)) * abs(c), rel=1e-6)
    rng = np.random.default_rng(4)
    g2 = GridSpace.uniform(1.0, 3, [0.8, 0.2])
    phi2 = det(g2, H2, [(cell, rng.normal(size=2)) for cell in g2.cells])
    single = combined_norm(NormSpec(D(3.0), 2.0), phi2)
    same = combined_norm(NormSpec(Sum((D(3.0), D(3.0))), 2.0), phi2)
    assert same.value == pytest.approx(single.value, rel=1e-6)
    both = combined_norm(NormSpec(Intersect((D(2.0), D(4.0))), 3.0), phi2)
    d2 = combined_norm(NormSpec(D(2.0), 3.0), phi2).value
    d4 = combined_norm(NormSpec(D(4.0), 3.0), phi2).value
    assert both.value == pytest.approx(max(d2, d4))


def test_square_function_needs_matching_space():
    g = GridSpace((0.0, 1.0), (MarkSet(0, 1.0),))
    with pytest.raises(ValueError):
        combined_norm(NormSpec(S(2.0), 2.0), det(g, H2, [(g.cells[0], X)]))
    sp = WeightedLq(3.0, (1.0, 1.0))
    with pytest.raises(ValueError):
        combined_norm(NormSpec(S(2.0), 2.0), det(g, sp, [(g.cells[0], X)]))


def cvx_leaf(expr, Z, mu, space, p, m):
    """Convex model of one member norm for an (m, C, d) list of variables."""
    inners = []
    for k in range(m):
        Zk = Z[k]
        if isinstance(expr, D):
            if isinstance(space, Hilbert):
                a = cp.norm(Zk, 2, axis=1)
            else:
                wq = np.asarray(space.weights) ** (1 / space.q)
                a = cp.hstack([cp.pnorm(cp.multiply(Zk[c], wq), space.q) for c in range(Zk.shape[0])])
            inners.append(cp.pnorm(cp.multiply(mu ** (1 / expr.q), a), expr.q))
        else:
            b = cp.hstack([cp.norm(cp.multiply(Zk[:, j], np.sqrt(mu)), 2) for j in range(Zk.shape[1])])
            inners.append(cp.pnorm(cp.multiply(np.asarray(space.weights) ** (1 / expr.q), b), expr.q))
    return m ** (-1 / p) * cp.pnorm(cp.hstack(inners), p)


def cvx_sum_norm(members, f):
    m, C, d = f.values.shape
    parts = [[cp.Variable((C, d)) for _ in range(m)] for _ in members[:-1]]
    last = [f.values[k] - sum(P[k] for P in parts) for k in range(m)]
    parts.append(last)
    obj = sum(cvx_leaf(e, P, f.mu, f.space, f.p, m) for e, P in zip(members, parts))
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve()
    return prob.value


@pytest.mark.parametrize(
    "space,members,p",
    [
        (Hilbert(2), (D(2.0), D(1.5)), 1.5),
        (Hilbert(2), (D(4.0), D(2.0)), 2.5),
        (WeightedLq(1.5, (1.0, 0.5, 2.0)), (S(1.5), D(1.5), D(1.2)), 1.2),
        (WeightedLq(3.0, (1.0, 1.0)), (D(3.0), D(1.5)), 1.5),
    ],
)
def test_sum_norm_matches_convex_solver(space, members, p):
    rng = np.random.default_rng(7)
    f = random_field(rng, 6, 4, space, p)
    ours = sum_norm(Sum(members), f)
    oracle = cvx_sum_norm(members, f)
    assert ours.lower <= oracle * (1 + 1e-6)
    assert oracle <= ours.upper * (1 + 1e-6)
    assert ours.upper == pytest.approx(oracle, rel=5e-3)


def test_sum_norm_bracket_on_desk_sized_instance():
    rng = np.random.default_rng(8)
    f = random_field(rng, 256, 64, Hilbert(3), 1.5)
    res = evaluate_norm(Sum((D(2.0), D(1.5))), f)
    assert 0 < res.lower <= res.upper
    assert res.gap <= 0.05


def test_sum_norm_is_homogeneous():
    rng = np.random.default_rng(9)
    f = random_field(rng, 20, 5, Hilbert(2), 3.0)
    a = sum_norm(Sum((D(2.0), D(3.0))), f).upper
    b = sum_norm(Sum((D(2.0), D(3.0))), f.with_values(-2.5 * f.values)).upper
    assert b == pytest.approx(2.5 * a, rel=1e-3)


def test_nu_p_examples():
    g = GridSpace.uniform(1.0, 4, [1.0, 0.5])
    rng = np.random.default_rng(0)
    f = [(c, rng.normal(size=2)) for c in g.cells[:5]]
    est = nu_p_norm(f, g, H2, 2.0, 200_000, 1)
    exact_sq = sum(g.measure(c) * float(x @ x) for c, x in f)
    assert est.exact == pytest.approx(math.sqrt(exact_sq))
    assert abs(est.value**2 - exact_sq) <= 4 * 2 * est.value * est.standard_error
    lam = 0.7
    g1 = GridSpace((0.0, 1.0), (MarkSet(0, lam),))
    est4 = nu_p_norm([(g1.cells[0], [1.0])], g1, Hilbert(1), 4.0, 400_000, 2)
    assert abs(est4.value**4 - (lam + 3 * lam**2)) <= 4 * 4 * est4.value**3 * est4.standard_error
    zero = nu_p_norm([(g.cells[0], [0.0, 0.0])], g, H2, 3.0, 100, 0)
    assert zero.value == 0.0


def test_random_ensemble_contract():
    base = dict(space=H2, members=4, terms=3, coefficients="polynomial", degree=2, levels=(0, 1))
    a = random_ensemble(EnsembleConfig(**base))
    b = random_ensemble(EnsembleConfig(**base))
    assert [x.to_dict() for x in a] == [x.to_dict() for x in b]
    assert len(a) == 8
    zero = random_ensemble(EnsembleConfig(**{**base, "terms": 0}))
    assert all(not p.terms for p in zero)
    dets = random_ensemble(EnsembleConfig(**{**base, "coefficients": "deterministic"}))
    assert all(p.is_deterministic for p in dets)
    # rescaling by four moves draw k from level 0 to level 1
    shifted = random_ensemble(EnsembleConfig(**base), kappa=4.0)
    assert shifted[0].to_dict() == a[1].to_dict()
    with pytest.raises(ValueError):
        EnsembleConfig(space=H2, coefficients="wild")


def test_process_round_trip():
    p = random_ensemble(EnsembleConfig(space=H2, members=1, coefficients="polynomial"))[0]
    assert SimpleAdaptedProcess.from_dict(p.to_dict()).to_dict() == p.to_dict()
