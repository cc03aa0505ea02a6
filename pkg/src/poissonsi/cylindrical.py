"""Cylindrical functionals ``F = sum_i f_i(N(B_1), ..., N(B_M)) x_i``.

Each ``f_i`` is an expression tree over the counts of rectangles ``B``
(:class:`~poissonsi.grid.Cell`).  Trees can be evaluated on sampled paths,
shifted (``N -> N + e_B``), and integrated exactly: the tree is expanded into
monomials ``prod_B N(B)**a_B 1{N(B) <= k_B}``, which factorise over the
independent counts, and each factor is a certified truncated Poisson series.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .grid import Cell, GridMismatch, GridSpace, PathBatch, PoissonPath
from .series import mixed_moment
from .spaces import Hilbert, SpaceSpec

__all__ = [
    "Expr",
    "Const",
    "Count",
    "Add",
    "Mul",
    "Pow",
    "IndicatorLe",
    "count",
    "const",
    "indicator_le",
    "compensated",
    "NormalFormTooLarge",
    "normal_form",
    "from_normal_form",
    "CylindricalFunctional",
    "evaluate",
    "shift",
    "expectation",
    "conditional_expectation",
    "parse_expr",
    "DEFAULT_CAP",
]

DEFAULT_CAP = 10_000


class NormalFormTooLarge(RuntimeError):
    """Expansion exceeded the monomial cap; use the Monte Carlo engine instead."""


class Expr:
    """Base class of count expressions.  Supports ``+``, ``-``, ``*`` and integer ``**``."""

    __slots__ = ()

    def __add__(self, other):
        return Add((self, _wrap(other)))

    __radd__ = __add__

    def __sub__(self, other):
        return Add((self, Mul((Const(-1.0), _wrap(other)))))

    def __rsub__(self, other):
        return Add((_wrap(other), Mul((Const(-1.0), self))))

    def __neg__(self):
        return Mul((Const(-1.0), self))

    def __mul__(self, other):
        return Mul((self, _wrap(other)))

    __rmul__ = __mul__

    def __pow__(self, n):
        return Pow(self, n)

    def __str__(self):
        return to_prefix(self)


def _wrap(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Const(float(x))


@dataclass(frozen=True)
class Const(Expr):
    value: float

    @property
    def cells(self) -> frozenset:
        return frozenset()

    degree = 0

    def evaluate(self, counts: Callable[[Cell], np.ndarray]):
        return self.value

    def shift(self, cell: Cell) -> Expr:
        return self


@dataclass(frozen=True)
class Count(Expr):
    cell: Cell

    @property
    def cells(self) -> frozenset:
        return frozenset((self.cell,))

    degree = 1

    def evaluate(self, counts):
        return counts(self.cell)

    def shift(self, cell: Cell) -> Expr:
        if cell == self.cell:
            return Add((self, Const(1.0)))
        return self


@dataclass(frozen=True)
class Add(Expr):
    args: tuple

    @cached_property
    def cells(self) -> frozenset:
        return frozenset().union(*(a.cells for a in self.args))

    @cached_property
    def degree(self) -> int:
        return max((a.degree for a in self.args), default=0)

    def evaluate(self, counts):
        out = 0.0
        for a in self.args:
            out = out + a.evaluate(counts)
        return out

    def shift(self, cell: Cell) -> Expr:
        if cell not in self.cells:
            return self
        return Add(tuple(a.shift(cell) for a in self.args))


@dataclass(frozen=True)
class Mul(Expr):
    args: tuple

    @cached_property
    def cells(self) -> frozenset:
        return frozenset().union(*(a.cells for a in self.args))

    @cached_property
    def degree(self) -> int:
        return sum(a.degree for a in self.args)

    def evaluate(self, counts):
        out = 1.0
        for a in self.args:
            out = out * a.evaluate(counts)
        return out

    def shift(self, cell: Cell) -> Expr:
        if cell not in self.cells:
            return self
        return Mul(tuple(a.shift(cell) for a in self.args))


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, (int, np.integer)) or self.exponent < 0:
            raise ValueError("intpow needs a non-negative integer exponent")

    @property
    def cells(self) -> frozenset:
        return self.base.cells

    @property
    def degree(self) -> int:
        return self.base.degree * self.exponent

    def evaluate(self, counts):
        return self.base.evaluate(counts) ** self.exponent

    def shift(self, cell: Cell) -> Expr:
        if cell not in self.cells:
            return self
        return Pow(self.base.shift(cell), self.exponent)


@dataclass(frozen=True)
class IndicatorLe(Expr):
    """``1{N(cell) <= k}``."""

    cell: Cell
    k: int

    @property
    def cells(self) -> frozenset:
        return frozenset((self.cell,))

    degree = 0

    def evaluate(self, counts):
        return (counts(self.cell) <= self.k) * 1.0

    def shift(self, cell: Cell) -> Expr:
        if cell == self.cell:
            return IndicatorLe(self.cell, self.k - 1)
        return self


def count(cell: Cell) -> Count:
    return Count(cell)


def const(value: float) -> Const:
    return Const(float(value))


def indicator_le(cell: Cell, k: int) -> IndicatorLe:
    return IndicatorLe(cell, int(k))


def compensated(cell: Cell, grid: GridSpace) -> Expr:
    """``N(cell) - mu(cell)``."""
    return Add((Count(cell), Const(-grid.measure(cell))))


# ---------------------------------------------------------------------------
# normal form
#
# A monomial is a sorted tuple of (cell, power, bound) with bound None meaning
# no indicator.  A normal form maps monomials to coefficients.

Monomial = tuple


def _merge(m1: Monomial, m2: Monomial) -> Monomial | None:
    if not m1:
        return m2
    if not m2:
        return m1
    acc: dict[Cell, list] = {}
    for cell, a, k in m1 + m2:
        cur = acc.get(cell)
        if cur is None:
            acc[cell] = [a, k]
        else:
            cur[0] += a
            if k is not None:
                cur[1] = k if cur[1] is None else min(cur[1], k)
    out = []
    for cell, (a, k) in acc.items():
        if k is not None and (k < 0 or (k == 0 and a > 0)):
            return None
        out.append((cell, a, k))
    out.sort(key=lambda f: (f[0], f[1], -1 if f[2] is None else f[2]))
    return tuple(out)


def _nf_mul(a: dict, b: dict, cap: int) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = _merge(ma, mb)
            if m is None:
                continue
            out[m] = out.get(m, 0.0) + ca * cb
            if len(out) > cap:
                raise NormalFormTooLarge(f"normal form exceeds {cap} monomials")
    return {m: c for m, c in out.items() if c != 0.0}


def _nf_add(parts: Iterable[dict], cap: int) -> dict:
    out: dict = {}
    for p in parts:
        for m, c in p.items():
            out[m] = out.get(m, 0.0) + c
        if len(out) > cap:
            raise NormalFormTooLarge(f"normal form exceeds {cap} monomials")
    return {m: c for m, c in out.items() if c != 0.0}


def normal_form(expr: Expr, cap: int = DEFAULT_CAP) -> dict:
    """Expand into ``{monomial: coefficient}``; raises :class:`NormalFormTooLarge`."""
    if isinstance(expr, Const):
        return {(): expr.value} if expr.value != 0.0 else {}
    if isinstance(expr, Count):
        return {((expr.cell, 1, None),): 1.0}
    if isinstance(expr, IndicatorLe):
        if expr.k < 0:
            return {}
        return {((expr.cell, 0, expr.k),): 1.0}
    if isinstance(expr, Add):
        return _nf_add((normal_form(a, cap) for a in expr.args), cap)
    if isinstance(expr, Mul):
        out = {(): 1.0}
        for a in expr.args:
            out = _nf_mul(out, normal_form(a, cap), cap)
            if not out:
                return {}
        return out
    if isinstance(expr, Pow):
        base = normal_form(expr.base, cap)
        out = {(): 1.0}
        for _ in range(expr.exponent):
            out = _nf_mul(out, base, cap)
        return out
    raise TypeError(f"unknown expression node {type(expr).__name__}")


def from_normal_form(nf: Mapping) -> Expr:
    terms = []
    for mono, c in sorted(nf.items(), key=lambda kv: (len(kv[0]), kv[0].__repr__())):
        factors: list[Expr] = []
        for cell, a, k in mono:
            if a == 1:
                factors.append(Count(cell))
            elif a > 1:
                factors.append(Pow(Count(cell), a))
            if k is not None:
                factors.append(IndicatorLe(cell, k))
        if not factors:
            terms.append(Const(c))
        elif c == 1.0:
            terms.append(factors[0] if len(factors) == 1 else Mul(tuple(factors)))
        else:
            terms.append(Mul((Const(c), *factors)))
    if not terms:
        return Const(0.0)
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


# ---------------------------------------------------------------------------
# prefix serialisation

def to_prefix(expr: Expr) -> str:
    if isinstance(expr, Const):
        return f"(const {expr.value!r})"
    if isinstance(expr, Count):
        c = expr.cell
        return f"(count {c.t0!r} {c.t1!r} {c.mark})"
    if isinstance(expr, IndicatorLe):
        c = expr.cell
        return f"(le {c.t0!r} {c.t1!r} {c.mark} {expr.k})"
    if isinstance(expr, Add):
        return "(add " + " ".join(to_prefix(a) for a in expr.args) + ")"
    if isinstance(expr, Mul):
        return "(mul " + " ".join(to_prefix(a) for a in expr.args) + ")"
    if isinstance(expr, Pow):
        return f"(pow {to_prefix(expr.base)} {expr.exponent})"
    raise TypeError(type(expr).__name__)


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_expr(text: str) -> Expr:
    """Inverse of ``str(expr)``: ``(add (count 0 1 0) (const 2.0))`` etc."""
    tokens = _TOKEN.findall(text)
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        return tok

    def node() -> Expr:
        if take() != "(":
            raise ValueError("expected '('")
        head = take()
        if head == "const":
            out = Const(float(take()))
        elif head == "count":
            out = Count(Cell(float(take()), float(take()), int(take())))
        elif head == "le":
            out = IndicatorLe(Cell(float(take()), float(take()), int(take())), int(take()))
        elif head == "pow":
            base = node()
            out = Pow(base, int(take()))
        elif head in ("add", "mul"):
            args = []
            while tokens[pos] != ")":
                args.append(node())
            out = (Add if head == "add" else Mul)(tuple(args))
        else:
            raise ValueError(f"unknown node {head!r}")
        if take() != ")":
            raise ValueError("expected ')'")
        return out

    expr = node()
    if pos != len(tokens):
        raise ValueError("trailing tokens after expression")
    return expr


# ---------------------------------------------------------------------------
# vector-valued functionals


def _check_disjoint(cells: Iterable[Cell]) -> None:
    cells = sorted(set(cells))
    for a_i, a in enumerate(cells):
        for b in cells[a_i + 1:]:
            if a.overlaps(b):
                raise ValueError(f"referenced rectangles {a} and {b} overlap")


@dataclass(frozen=True)
class CylindricalFunctional:
    """``sum_i f_i(N) x_i`` with every ``x_i`` in ``space``."""

    space: SpaceSpec
    grid: GridSpace
    terms: tuple

    def __post_init__(self):
        terms = tuple((e, tuple(float(v) for v in np.ravel(x))) for e, x in self.terms)
        for e, x in terms:
            if not isinstance(e, Expr):
                raise TypeError("term expressions must be Expr instances")
            if len(x) != self.space.dim:
                raise ValueError(f"vector of length {len(x)} in a space of dimension {self.space.dim}")
        object.__setattr__(self, "terms", terms)
        weights = self.grid.weights
        for c in self.cells:
            if c.mark not in weights:
                raise GridMismatch(f"mark {c.mark} of {c} is not part of the grid")
            if c.t1 > self.grid.horizon + 1e-12:
                raise GridMismatch(f"{c} extends past the grid horizon")
        _check_disjoint(self.cells)

    @classmethod
    def scalar(cls, expr: Expr, grid: GridSpace) -> "CylindricalFunctional":
        return cls(Hilbert(1), grid, ((expr, (1.0,)),))

    @classmethod
    def constant(cls, x, space: SpaceSpec, grid: GridSpace) -> "CylindricalFunctional":
        return cls(space, grid, ((Const(1.0), tuple(np.ravel(x))),))

    @classmethod
    def zero(cls, space: SpaceSpec, grid: GridSpace) -> "CylindricalFunctional":
        return cls(space, grid, ())

    @cached_property
    def cells(self) -> frozenset:
        return frozenset().union(*(e.cells for e, _ in self.terms)) if self.terms else frozenset()

    @property
    def is_deterministic(self) -> bool:
        return not self.cells

    def measure(self, cell: Cell) -> float:
        return self.grid.measure(cell)

    def vectors(self) -> np.ndarray:
        return np.array([x for _, x in self.terms]).reshape(len(self.terms), self.space.dim)

    def __add__(self, other: "CylindricalFunctional") -> "CylindricalFunctional":
        self._compatible(other)
        return CylindricalFunctional(self.space, self.grid, self.terms + other.terms)

    def __sub__(self, other: "CylindricalFunctional") -> "CylindricalFunctional":
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "CylindricalFunctional":
        return CylindricalFunctional(
            self.space, self.grid, tuple((e, tuple(c * v for v in x)) for e, x in self.terms)
        )

    def times(self, g: "CylindricalFunctional") -> "CylindricalFunctional":
        """Product with a scalar functional ``g``."""
        if g.space.dim != 1:
            raise ValueError("can only multiply by a scalar functional")
        terms = tuple(
            (Mul((ge, fe)), tuple(gx[0] * v for v in fx))
            for ge, gx in g.terms
            for fe, fx in self.terms
        )
        return CylindricalFunctional(self.space, self.grid, terms)

    def pair(self, other: "CylindricalFunctional") -> "CylindricalFunctional":
        """Scalar ``<F, G>``; ``other`` is read in the dual space."""
        if other.space.dim != self.space.dim:
            raise ValueError("dimension mismatch in pairing")
        terms = []
        for fe, fx in self.terms:
            for ge, gx in other.terms:
                c = float(self.space.pairing(np.array(fx), np.array(gx)))
                if c != 0.0:
                    terms.append((Mul((fe, ge)), (c,)))
        return CylindricalFunctional(Hilbert(1), self.grid, tuple(terms))

    def map_exprs(self, fn: Callable[[Expr], Expr]) -> "CylindricalFunctional":
        return CylindricalFunctional(self.space, self.grid, tuple((fn(e), x) for e, x in self.terms))

    def simplified(self, cap: int = DEFAULT_CAP) -> "CylindricalFunctional":
        """Collect like monomials per output coordinate; falls back to self on blow-up."""
        try:
            per_coord = [
                _nf_add(
                    ({m: c * x[s] for m, c in normal_form(e, cap).items()} for e, x in self.terms),
                    cap,
                )
                for s in range(self.space.dim)
            ]
        except NormalFormTooLarge:
            return self
        basis = np.eye(self.space.dim)
        terms = tuple(
            (from_normal_form(nf), tuple(basis[s])) for s, nf in enumerate(per_coord) if nf
        )
        if self.space.dim == 1:
            return CylindricalFunctional(self.space, self.grid, terms)
        # group monomials that share an expression across coordinates
        grouped: dict = {}
        for s, nf in enumerate(per_coord):
            for m, c in nf.items():
                grouped.setdefault(m, np.zeros(self.space.dim))[s] += c
        terms = tuple((from_normal_form({m: 1.0}), tuple(v)) for m, v in grouped.items())
        return CylindricalFunctional(self.space, self.grid, terms)

    def rebind(self, grid: GridSpace) -> "CylindricalFunctional":
        return CylindricalFunctional(self.space, grid, self.terms)

    def _compatible(self, other: "CylindricalFunctional") -> None:
        if other.space != self.space:
            raise ValueError("functionals live in different spaces")
        if other.grid.weights != self.grid.weights:
            raise GridMismatch("functionals are defined over different mark weights")

    def to_dict(self) -> dict:
        return {"terms": [{"expr": to_prefix(e), "vector": list(x)} for e, x in self.terms]}

    @classmethod
    def from_dict(cls, data: Mapping, space: SpaceSpec, grid: GridSpace) -> "CylindricalFunctional":
        return cls(space, grid, tuple((parse_expr(t["expr"]), tuple(t["vector"])) for t in data["terms"]))


def _counter(path: PoissonPath | PathBatch | Mapping):
    if isinstance(path, PoissonPath):
        batch = path.as_batch()
        return batch.region_count, 1
    if isinstance(path, PathBatch):
        return path.region_count, path.size
    values = dict(path)

    def lookup(cell):
        if cell not in values:
            raise GridMismatch(f"no count supplied for {cell}")
        return np.asarray([values[cell]], dtype=float)

    return lookup, 1


def evaluate(F: CylindricalFunctional, path) -> np.ndarray:
    """Values of ``F`` on a path (shape ``(d,)``) or batch (shape ``(m, d)``)."""
    if isinstance(path, (PoissonPath, PathBatch)) and path.grid.weights != F.grid.weights:
        raise GridMismatch("path grid and functional grid carry different mark weights")
    counts, m = _counter(path)
    out = np.zeros((m, F.space.dim))
    for e, x in F.terms:
        val = np.broadcast_to(np.asarray(e.evaluate(counts), dtype=float), (m,))
        out += val[:, None] * np.asarray(x)[None, :]
    if isinstance(path, PathBatch):
        return out
    return out[0]


def shift(F: CylindricalFunctional, cell: Cell) -> CylindricalFunctional:
    """``F`` evaluated at ``N + e_cell``."""
    return F.map_exprs(lambda e: e.shift(cell))


# ---------------------------------------------------------------------------
# exact integration


@dataclass(frozen=True)
class _Observation:
    """How one referenced cell is treated while integrating."""

    known: float | None = None      # observed count
    symbol: Cell | None = None      # observed part kept symbolic
    fresh: float = 0.0              # measure of the unobserved independent part


class _Integrator:
    def __init__(self, tau: float, cap: int):
        self.tau = tau
        self.cap = cap
        self._moments: dict = {}

    def moment(self, lam: float, a: int, k: int | None):
        key = (lam, a, k)
        hit = self._moments.get(key)
        if hit is None:
            r = mixed_moment(lam, a, k, self.tau)
            hit = (r.value, r.error_bound)
            self._moments[key] = hit
        return hit

    def factor(self, obs: _Observation, a: int, k: int | None) -> dict:
        """Conditional expectation of ``N**a 1{N <= k}`` as {mono: [value, err]}."""
        lam = obs.fresh
        if obs.known is not None:
            n = obs.known
            total_v, total_e = 0.0, 0.0
            for b in range(a + 1):
                bound = None if k is None else int(k - n)
                if bound is not None and bound < 0:
                    continue
                v, e = self.moment(lam, b, bound)
                w = math.comb(a, b) * n ** (a - b)
                total_v += w * v
                total_e += abs(w) * e
            return {(): [total_v, total_e]}
        S = obs.symbol
        if lam == 0.0:
            if a == 0 and k is None:
                return {(): [1.0, 0.0]}
            return {((S, a, k),): [1.0, 0.0]}
        if k is None:
            out = {}
            for b in range(a + 1):
                v, e = self.moment(lam, b, None)
                mono = () if a - b == 0 else ((S, a - b, None),)
                w = math.comb(a, b)
                out[mono] = [w * v, w * e]
            return out

        def h(n):
            hv, he = 0.0, 0.0
            for b in range(a + 1):
                v, e = self.moment(lam, b, k - n)
                w = math.comb(a, b) * n ** (a - b)
                hv += w * v
                he += w * e
            return hv, he

        hs = [h(n) for n in range(k + 1)] + [(0.0, 0.0)]
        out = {}
        for n in range(k + 1):
            v = hs[n][0] - hs[n + 1][0]
            e = hs[n][1] + hs[n + 1][1]
            if v != 0.0 or e != 0.0:
                out[((S, 0, n),)] = [v, e]
        return out

    def integrate(self, nf: dict, plan: Mapping[Cell, _Observation]) -> dict:
        out: dict = {}
        for mono, coef in nf.items():
            acc = {(): [coef, 0.0]}
            for cell, a, k in mono:
                fac = self.factor(plan[cell], a, k)
                nxt: dict = {}
                for m1, (v1, e1) in acc.items():
                    for m2, (v2, e2) in fac.items():
                        m = _merge(m1, m2)
                        if m is None:
                            continue
                        cur = nxt.setdefault(m, [0.0, 0.0])
                        cur[0] += v1 * v2
                        cur[1] += abs(v1) * e2 + abs(v2) * e1 + e1 * e2
                acc = nxt
            for m, (v, e) in acc.items():
                cur = out.setdefault(m, [0.0, 0.0])
                cur[0] += v
                cur[1] += e
            if len(out) > self.cap:
                raise NormalFormTooLarge(f"conditional expectation exceeds {self.cap} monomials")
        return out


def _plan(F: CylindricalFunctional, observed: Mapping, residual: Mapping) -> dict:
    plan = {}
    for cell in F.cells:
        if cell in observed:
            o = observed[cell]
            fresh = float(residual.get(cell, 0.0))
            if isinstance(o, Cell):
                if o.mark != cell.mark:
                    raise ValueError(f"observed part {o} of {cell} has a different mark")
                plan[cell] = _Observation(symbol=o, fresh=fresh)
            else:
                if int(o) != o or o < 0:
                    raise ValueError(f"observed count for {cell} must be a non-negative integer")
                plan[cell] = _Observation(known=float(o), fresh=fresh)
        else:
            plan[cell] = _Observation(known=0.0, fresh=float(residual.get(cell, F.measure(cell))))
    return plan


def _integrate_functional(F, plan, tolerance, cap):
    nfs = [(normal_form(e, cap), np.asarray(x)) for e, x in F.terms]
    scale = 1.0 + sum(abs(c) * np.abs(x).sum() for nf, x in nfs for c in nf.values())
    tau = tolerance / scale
    for _ in range(40):
        integ = _Integrator(tau, cap)
        per_term = [(integ.integrate(nf, plan), x) for nf, x in nfs]
        err = sum(e * np.abs(x).sum() for res, x in per_term for _, e in res.values())
        if err <= tolerance:
            return per_term
        tau /= 2.0 * err / tolerance
    raise ArithmeticError("could not certify the requested tolerance")


def expectation(F: CylindricalFunctional, tolerance: float = 1e-10, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Exact ``E F`` (error below ``tolerance``); raises :class:`NormalFormTooLarge`."""
    out = conditional_expectation(F, {}, {}, tolerance, cap)
    return out


def conditional_expectation(
    F: CylindricalFunctional,
    observed: Mapping,
    residual: Mapping | None = None,
    tolerance: float = 1e-10,
    cap: int = DEFAULT_CAP,
):
    """``E[F | observations]``.

    ``observed`` maps a referenced cell to its observed count, or to a
    sub-rectangle whose count stays symbolic.  A cell that also appears in
    ``residual`` is split: its count is the observed part plus an independent
    Poisson variable with the residual measure.  Cells missing from
    ``observed`` are integrated with their full measure.

    Returns a vector when nothing symbolic remains, otherwise a reduced
    :class:`CylindricalFunctional` over the symbolic sub-rectangles.
    """
    residual = residual or {}
    plan = _plan(F, observed, residual)
    per_term = _integrate_functional(F, plan, tolerance, cap)
    symbolic = any(m for res, _ in per_term for m in res)
    if not symbolic:
        total = np.zeros(F.space.dim)
        for res, x in per_term:
            total += sum(v for v, _ in res.values()) * x
        return total
    terms = []
    for res, x in per_term:
        nf = {m: v for m, (v, _) in res.items() if v != 0.0}
        if nf:
            terms.append((from_normal_form(nf), tuple(x)))
    return CylindricalFunctional(F.space, F.grid, tuple(terms)).simplified(cap)


def mc_expectation(F: CylindricalFunctional, m: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo fallback: sample mean and its standard error."""
    from .grid import sample_batch

    batch = sample_batch(F.grid, seed, m, with_jump_times=not all(F.grid.aligned(c) for c in F.cells))
    vals = evaluate(F, batch)
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(m)
