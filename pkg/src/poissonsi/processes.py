"""Simple adapted processes and the deterministic-norm side of the inequalities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .cylindrical import Const, CylindricalFunctional, Mul, compensated, count, evaluate
from .grid import _EPS, Cell, GridMismatch, GridSpace, PathBatch, PoissonPath, refine_grid, sample_batch
from .norms import (
    D,
    Field,
    Intersect,
    NormSpec,
    S,
    Sum,
    compress_field,
    evaluate_norm,
    exact_norm,
    leaf_inner,
)
from .spaces import Hilbert, SpaceSpec, WeightedLq, space_from_dict

__all__ = [
    "SimpleAdaptedProcess",
    "NormEstimate",
    "lp_estimate",
    "stratified_lp_estimate",
    "pathwise_Lq_norm",
    "pathwise_square_function",
    "outer_Lp",
    "process_field",
    "combined_norm",
    "nu_p_norm",
    "EnsembleConfig",
    "random_ensemble",
]


@dataclass(frozen=True)
class SimpleAdaptedProcess:
    """``sum_{i,j} F_ij 1_{(t_i, t_{i+1}]} 1_{A_j}`` with ``F_ij`` known at time ``t_i``.

    ``terms`` holds ``(i, mark, coefficient)``; repeated cells add up.
    """

    grid: GridSpace
    space: SpaceSpec
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((int(i), int(j), F) for i, j, F in self.terms))
        for i, j, F in self.terms:
            if not 0 <= i < self.grid.n_intervals:
                raise GridMismatch(f"interval index {i} out of range")
            self.grid.mark_position(j)
            if F.space != self.space:
                raise ValueError("coefficient lives in a different space")
            if F.grid.weights != self.grid.weights:
                raise GridMismatch("coefficient is bound to a grid with other mark weights")
            start = self.grid.times[i]
            for c in F.cells:
                if c.t1 > start + _EPS:
                    raise ValueError(
                        f"not adapted: coefficient on interval {i} reads {c}, which ends after {start}"
                    )
        if max(self.grid.measures()) > 1.0 + 1e-12:
            raise ValueError("cell measures exceed one; build the process on refine_grid(grid)")

    @classmethod
    def from_cells(cls, grid: GridSpace, space: SpaceSpec, items) -> "SimpleAdaptedProcess":
        """Build from ``(Cell, coefficient)`` pairs on ``grid``, refining it first."""
        fine = refine_grid(grid)
        terms = []
        for cell, F in items:
            F = F.rebind(fine)
            for c in fine.cells_in(cell):
                if cell.contains(c):
                    terms.append((fine.interval_of(c.t0, c.t1), c.mark, F))
        return cls(fine, space, tuple(terms))

    @classmethod
    def zero(cls, grid: GridSpace, space: SpaceSpec) -> "SimpleAdaptedProcess":
        return cls(refine_grid(grid), space, ())

    @property
    def is_deterministic(self) -> bool:
        return all(F.is_deterministic for _, _, F in self.terms)

    def cell(self, term) -> Cell:
        i, j, _ = term
        return Cell(self.grid.times[i], self.grid.times[i + 1], j)

    def coefficients(self) -> dict[Cell, CylindricalFunctional]:
        out: dict = {}
        for term in self.terms:
            c = self.cell(term)
            out[c] = out[c] + term[2] if c in out else term[2]
        return out

    def cell_values(self, path: PoissonPath | PathBatch) -> np.ndarray:
        """Coefficient values ``(m, C, d)`` in ``grid.cells`` order."""
        batch = path.as_batch() if isinstance(path, PoissonPath) else path
        if batch.grid != self.grid:
            raise GridMismatch("path was sampled on a different grid")
        out = np.zeros((batch.size, len(self.grid.cells), self.space.dim))
        for term in self.terms:
            out[:, self.grid.cell_index(self.cell(term)), :] += evaluate(term[2], batch)
        return out

    def deterministic_values(self) -> np.ndarray:
        """``(C, d)`` values of a deterministic process."""
        if not self.is_deterministic:
            raise ValueError("process has random coefficients")
        out = np.zeros((len(self.grid.cells), self.space.dim))
        for term in self.terms:
            out[self.grid.cell_index(self.cell(term))] += evaluate(term[2], {})
        return out

    def scale(self, c: float) -> "SimpleAdaptedProcess":
        return SimpleAdaptedProcess(self.grid, self.space, tuple((i, j, F.scale(c)) for i, j, F in self.terms))

    def __add__(self, other: "SimpleAdaptedProcess") -> "SimpleAdaptedProcess":
        if other.grid != self.grid:
            raise GridMismatch("processes live on different grids")
        return SimpleAdaptedProcess(self.grid, self.space, self.terms + other.terms)

    def restrict_marks(self, marks) -> "SimpleAdaptedProcess":
        """``phi 1_B`` for ``B`` a union of mark sets."""
        marks = set(marks)
        return SimpleAdaptedProcess(self.grid, self.space, tuple(t for t in self.terms if t[1] in marks))

    def on_grid(self, grid: GridSpace) -> "SimpleAdaptedProcess":
        """The same process written on a refinement of its grid."""
        if not grid.refines(self.grid):
            raise GridMismatch("target grid does not refine the process grid")
        terms = []
        for term in self.terms:
            F = term[2].rebind(grid)
            for c in grid.cells_in(self.cell(term)):
                terms.append((grid.interval_of(c.t0, c.t1), c.mark, F))
        return SimpleAdaptedProcess(grid, self.space, tuple(terms))

    def rescaled(self, kappa: float) -> "SimpleAdaptedProcess":
        """The same coefficients under the intensity ``kappa * nu``, on the re-refined grid.

        Constants inside coefficients (compensators, for instance) are kept as
        they are; ensembles that should be compensated under the new
        intensity are regenerated with ``random_ensemble(cfg, kappa)``.
        """
        grid = self.grid.scaled(kappa)
        items = [(c, F.rebind(grid)) for c, F in self.coefficients().items()]
        return SimpleAdaptedProcess.from_cells(grid, self.space, items)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "space": self.space.to_dict(),
            "terms": [{"i": i, "mark": j, "coefficient": F.to_dict()} for i, j, F in self.terms],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimpleAdaptedProcess":
        grid = GridSpace.from_dict(data["grid"])
        space = space_from_dict(data["space"])
        terms = tuple(
            (t["i"], t["mark"], CylindricalFunctional.from_dict(t["coefficient"], space, grid))
            for t in data["terms"]
        )
        return cls(grid, space, terms)


@dataclass
class NormEstimate:
    value: float
    standard_error: float
    engine: str
    samples: int
    lower: float | None = None
    upper: float | None = None
    exact: float | None = None
    batch_se: float | None = None
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.engine not in ("exact", "monte_carlo", "solver"):
            raise ValueError(f"unknown engine {self.engine!r}")

    def to_dict(self) -> dict:
        out = {
            "value": self.value,
            "standard_error": self.standard_error,
            "engine": self.engine,
            "samples": self.samples,
        }
        for k in ("lower", "upper", "exact", "batch_se"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        if self.engine == "solver":
            out["converged"] = self.converged
        return out


def lp_estimate(values: np.ndarray, p: float, n_batches: int = 10) -> NormEstimate:
    """``(mean values**p)**(1/p)`` with delta-method and batch-means errors."""
    v = np.abs(np.asarray(values, dtype=float))
    m = v.size
    if m < 2:
        raise ValueError("need at least two samples")
    if np.all(v == v[0]):
        return NormEstimate(float(v[0]), 0.0, "monte_carlo", m, batch_se=0.0)
    top = v.max()
    w = (v / top) ** p
    M = w.mean()
    se_M = w.std(ddof=1) / math.sqrt(m)
    value = top * M ** (1.0 / p)
    se = top * M ** (1.0 / p - 1.0) * se_M / p
    batch_se = None
    if m >= 2 * n_batches:
        k = m // n_batches
        means = w[: k * n_batches].reshape(n_batches, k).mean(axis=1)
        batch_se = float(top * M ** (1.0 / p - 1.0) * means.std(ddof=1) / math.sqrt(n_batches) / p)
    return NormEstimate(float(value), float(se), "monte_carlo", m, batch_se=batch_se)


def stratified_lp_estimate(parts, p: float) -> NormEstimate:
    """``(sum_n P_n mean(values_n**p))**(1/p)`` over strata ``(P_n, values_n)``.

    Strata with a single sample are treated as exact (zero variance).
    """
    parts = [(float(P), np.abs(np.asarray(v, dtype=float))) for P, v in parts]
    if not parts or any(P < 0 or v.size == 0 for P, v in parts):
        raise ValueError("each stratum needs a non-negative probability and samples")
    top = max(float(v.max()) for _, v in parts)
    m = sum(v.size for _, v in parts)
    if top == 0.0:
        return NormEstimate(0.0, 0.0, "monte_carlo", m)
    M = var = 0.0
    for P, v in parts:
        w = (v / top) ** p
        M += P * w.mean()
        if v.size > 1:
            var += P * P * w.var(ddof=1) / v.size
    value = top * M ** (1.0 / p)
    se = top * M ** (1.0 / p - 1.0) * math.sqrt(var) / p
    return NormEstimate(float(value), float(se), "monte_carlo", m)


def _inner_Lq(Y: np.ndarray, mu: np.ndarray, space: SpaceSpec, q: float) -> np.ndarray:
    return leaf_inner(D(q), Field(Y, mu, space, 2.0))


def pathwise_Lq_norm(phi: SimpleAdaptedProcess, path, q: float):
    """``(sum_cells mu ||phi||**q)**(1/q)``; float for a path, ``(m,)`` for a batch."""
    if q < 1.0:
        raise ValueError("q must be at least 1")
    out = _inner_Lq(phi.cell_values(path), phi.grid.measures(), phi.space, q)
    return float(out[0]) if isinstance(path, PoissonPath) else out


def pathwise_square_function(phi: SimpleAdaptedProcess, path, space: SpaceSpec | None = None):
    space = space or phi.space
    if not isinstance(space, WeightedLq):
        raise ValueError("the square function needs a weighted l^q space")
    out = leaf_inner(S(space.q), Field(phi.cell_values(path), phi.grid.measures(), space, 2.0))
    return float(out[0]) if isinstance(path, PoissonPath) else out


def outer_Lp(
    inner: Callable[[SimpleAdaptedProcess, PathBatch], np.ndarray],
    phi: SimpleAdaptedProcess,
    p: float,
    m: int,
    seed: int,
) -> NormEstimate:
    """``(E inner**p)**(1/p)``; deterministic processes are evaluated exactly."""
    if m < 2:
        raise ValueError("need at least two samples")
    if phi.is_deterministic:
        one = PathBatch(phi.grid, np.zeros((1, len(phi.grid.cells)), dtype=np.int64), seed, 0)
        v = float(np.abs(inner(phi, one))[0])
        return NormEstimate(v, 0.0, "exact", 0)
    batch = sample_batch(phi.grid, seed, m, with_jump_times=_needs_jumps(phi))
    return lp_estimate(inner(phi, batch), p)


def _needs_jumps(phi: SimpleAdaptedProcess) -> bool:
    return any(not phi.grid.aligned(c) for _, _, F in phi.terms for c in F.cells)


def process_field(phi: SimpleAdaptedProcess, p: float, batch: PathBatch | None = None) -> Field:
    """The sampled field of ``phi``; deterministic processes give a single sample."""
    if phi.is_deterministic:
        Y = phi.deterministic_values()[None]
    else:
        if batch is None:
            raise ValueError("a random process needs a sample batch")
        Y = phi.cell_values(batch)
    return Field(Y, phi.grid.measures(), phi.space, p)


def _has_sum(expr) -> bool:
    if isinstance(expr, Sum):
        return True
    if isinstance(expr, Intersect):
        return any(_has_sum(m) for m in expr.members)
    return False


def _leaf_se(expr, f: Field) -> float:
    """Delta-method standard error of a leaf or intersect estimate on ``f``."""
    if f.m < 2:
        return 0.0
    if isinstance(expr, (D, S)):
        return lp_estimate(leaf_inner(expr, f), f.p).standard_error
    if isinstance(expr, Intersect):
        vals = [(evaluate_norm(m, f).upper, m) for m in expr.members]
        return _leaf_se(max(vals, key=lambda t: t[0])[1], f)
    return 0.0


def _estimate_on_field(expr, f: Field, **solver_kw) -> NormEstimate:
    samples = 0 if f.m == 1 else f.m
    if not _has_sum(expr):
        if isinstance(expr, (D, S)):
            if f.m == 1:
                return NormEstimate(exact_norm(expr, f), 0.0, "exact", 0)
            return lp_estimate(leaf_inner(expr, f), f.p)
        parts = [_estimate_on_field(m, f, **solver_kw) for m in expr.members]
        best = max(parts, key=lambda e: e.value)
        return NormEstimate(best.value, best.standard_error, best.engine, samples)
    if isinstance(expr, Intersect):
        parts = [_estimate_on_field(m, f, **solver_kw) for m in expr.members]
        best = max(parts, key=lambda e: e.value)
        lower = max(e.lower if e.lower is not None else e.value for e in parts)
        upper = max(e.upper if e.upper is not None else e.value for e in parts)
        return NormEstimate(
            best.value, best.standard_error, "solver", samples, lower=lower, upper=upper,
            converged=all(e.converged for e in parts),
        )
    res = evaluate_norm(expr, f, **solver_kw)
    se = 0.0
    if f.m > 1 and res.parts is not None:
        # the optimal split held fixed: each member is a plug-in L^p estimate
        se = sum(_leaf_se(m, f.with_values(Z)) for m, Z in zip(expr.members, res.parts))
    return NormEstimate(
        res.upper, se, "solver", samples, lower=res.lower, upper=res.upper, converged=res.converged
    )


def combined_norm(
    spec: NormSpec,
    phi: SimpleAdaptedProcess,
    m: int = 256,
    seed: int = 0,
    batch: PathBatch | None = None,
    marks=None,
    **solver_kw,
) -> NormEstimate:
    """Estimate of ``||phi 1_B||`` in the norm ``spec``.

    ``Intersect`` is the max of its members, ``Sum`` the infimal
    decomposition norm with a ``[lower, upper]`` duality bracket.
    """
    _check_spec_space(spec.expr, phi.space)
    if marks is not None:
        phi = phi.restrict_marks(marks)
    if not phi.is_deterministic and batch is None:
        batch = sample_batch(phi.grid, seed, m, with_jump_times=_needs_jumps(phi))
    return _estimate_on_field(spec.expr, compress_field(process_field(phi, spec.p, batch)), **solver_kw)


def _check_spec_space(expr, space: SpaceSpec) -> None:
    if isinstance(expr, S):
        if not isinstance(space, WeightedLq):
            raise ValueError("S(q) needs a weighted l^q space")
        if abs(expr.q - space.q) > 1e-12:
            raise ValueError(f"S({expr.q:g}) does not match the space exponent {space.q:g}")
    elif isinstance(expr, (Intersect, Sum)):
        for mem in expr.members:
            _check_spec_space(mem, space)


def nu_p_norm(
    f: Sequence[tuple[Cell, Sequence[float]]],
    grid: GridSpace,
    space: SpaceSpec,
    p: float,
    m: int,
    seed: int,
    batch: PathBatch | None = None,
) -> NormEstimate:
    """Monte Carlo ``(E||sum_j Ntilde(B_j) x_j||**p)**(1/p)`` over disjoint grid cells."""
    cells = [c for c, _ in f]
    valid = set(grid.cells)
    for c in cells:
        if c not in valid:
            raise GridMismatch(f"{c} is not a grid cell")
    if len(set(cells)) != len(cells):
        raise ValueError("cells of a simple function must be distinct")
    X = np.array([np.asarray(x, dtype=float) for _, x in f]).reshape(len(f), space.dim)
    exact = None
    if isinstance(space, Hilbert) and p == 2.0:
        exact = math.sqrt(sum(grid.measure(c) * float(x @ x) for c, x in zip(cells, X)))
    if not np.any(X):
        return NormEstimate(0.0, 0.0, "exact", 0, exact=exact)
    if batch is None:
        batch = sample_batch(grid, seed, m)
    idx = [grid.cell_index(c) for c in cells]
    mu = grid.measures()[idx]
    tilde = batch.counts[:, idx] - mu[None, :]
    est = lp_estimate(space.norm(tilde @ X), p)
    est.exact = exact
    return est


# ---------------------------------------------------------------------------
# seeded ensembles


@dataclass(frozen=True)
class EnsembleConfig:
    """Random simple adapted processes on a uniform grid.

    ``coefficients`` is ``"deterministic"`` or ``"polynomial"``; polynomial
    coefficients are products of up to ``degree`` compensated counts of cells
    lying before the coefficient's interval.  Each of the ``members`` draws is
    paired with every intensity level: level ``l`` multiplies the mark weights
    by ``4**l``.
    """

    space: SpaceSpec
    members: int = 10
    n_intervals: int = 4
    horizon: float = 1.0
    weights: tuple = (1.0, 0.5)
    terms: int = 4
    coefficients: str = "deterministic"
    degree: int = 2
    levels: tuple = (0,)
    seed: int = 0

    def __post_init__(self):
        if self.coefficients not in ("deterministic", "polynomial", "mixed"):
            raise ValueError(f"unknown coefficient family {self.coefficients!r}")
        if self.members < 0 or self.terms < 0 or self.degree < 0:
            raise ValueError("counts must be non-negative")
        if self.degree > 3:
            raise ValueError("polynomial degree above 3 is outside the exact engine's budget")
        if not self.levels:
            raise ValueError("at least one intensity level is required")

    @property
    def size(self) -> int:
        return self.members * len(self.levels)

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "members": self.members,
            "n_intervals": self.n_intervals,
            "horizon": self.horizon,
            "weights": list(self.weights),
            "terms": self.terms,
            "coefficients": self.coefficients,
            "degree": self.degree,
            "levels": list(self.levels),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EnsembleConfig":
        data = dict(data)
        space = data.pop("space")
        if isinstance(space, Mapping):
            space = space_from_dict(space)
        for k in ("weights", "levels"):
            if k in data:
                data[k] = tuple(data[k])
        return cls(space=space, **data)


def _member(cfg: EnsembleConfig, k: int, level: float, kappa: float) -> SimpleAdaptedProcess:
    rng = np.random.default_rng([cfg.seed, k])
    weights = [w * 4.0**level * kappa for w in cfg.weights]
    grid = GridSpace.uniform(cfg.horizon, cfg.n_intervals, weights)
    if cfg.terms == 0:
        return SimpleAdaptedProcess.zero(grid, cfg.space)
    coarse = grid.cells
    d = cfg.space.dim
    random_coeffs = cfg.coefficients == "polynomial" or (cfg.coefficients == "mixed" and k % 2 == 1)
    items = []
    for _ in range(cfg.terms):
        cell = coarse[int(rng.integers(len(coarse)))]
        x = rng.standard_normal(d) * rng.choice([0.25, 1.0, 4.0])
        expr = Const(1.0)
        past = [c for c in coarse if c.t1 <= cell.t0 + _EPS]
        deg = int(rng.integers(min(1, cfg.degree), cfg.degree + 1))
        picks = [int(rng.integers(len(past))) for _ in range(deg)] if past else []
        shift = float(rng.standard_normal())
        if random_coeffs and picks:
            factors = [compensated(past[i], grid) for i in picks]
            expr = (Mul(tuple(factors)) if len(factors) > 1 else factors[0]) + shift
        items.append((cell, CylindricalFunctional(cfg.space, grid, ((expr, tuple(x)),))))
    return SimpleAdaptedProcess.from_cells(grid, cfg.space, items)


def random_ensemble(cfg: EnsembleConfig, kappa: float = 1.0) -> list[SimpleAdaptedProcess]:
    """Reproducible ensemble of ``members x levels`` processes; ``kappa`` rescales every intensity.

    Draw ``k`` uses the same coefficients at every level and every ``kappa``,
    so rescaling by 4 shifts the ensemble by one level.
    """
    if not (math.isfinite(kappa) and kappa > 0):
        raise ValueError("kappa must be positive")
    return [_member(cfg, k, lv, kappa) for k in range(cfg.members) for lv in cfg.levels]
