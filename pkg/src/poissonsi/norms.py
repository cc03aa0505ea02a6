"""Norm grammar ``D(q) | S(q) | Intersect(...) | Sum(...)`` on sampled fields.

A *field* is an array ``Y`` of shape ``(m, C, d)``: the values of a process on
``C`` cells with measures ``mu`` along ``m`` equally weighted sample paths.
Every leaf is an ``L^p`` norm over the samples of a pathwise norm:

* ``D(q)``: ``(sum_c mu_c ||Y_c||_X**q)**(1/q)``
* ``S(q)``: ``|| (sum_c mu_c |Y_c|**2)**(1/2) ||_{l^q_w}`` (square function)

``Intersect`` is the max of its members and ``Sum`` is the infimal
decomposition norm, computed by :func:`sum_norm` with a certified bracket
``[dual lower bound, primal value]``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .spaces import Hilbert, SpaceSpec, WeightedLq, dual_exponent

__all__ = [
    "D",
    "S",
    "Intersect",
    "Sum",
    "NormExpr",
    "NormSpec",
    "parse_norm",
    "dual_expr",
    "Field",
    "leaf_inner",
    "compress_field",
    "exact_norm",
    "SumResult",
    "sum_norm",
    "evaluate_norm",
]


@dataclass(frozen=True)
class D:
    q: float

    def __str__(self):
        return f"D({self.q:g})"


@dataclass(frozen=True)
class S:
    q: float

    def __str__(self):
        return f"S({self.q:g})"


@dataclass(frozen=True)
class Intersect:
    members: tuple

    def __str__(self):
        return "Intersect(" + ",".join(str(m) for m in self.members) + ")"


@dataclass(frozen=True)
class Sum:
    members: tuple

    def __str__(self):
        return "Sum(" + ",".join(str(m) for m in self.members) + ")"


NormExpr = D | S | Intersect | Sum


@dataclass(frozen=True)
class NormSpec:
    expr: NormExpr
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.p) and self.p > 1.0):
            raise ValueError(f"outer exponent must lie in (1, inf), got {self.p}")
        _validate(self.expr)

    def __str__(self):
        return f"{self.expr} @ p={self.p:g}"


def _validate(expr) -> None:
    if isinstance(expr, (D, S)):
        if not (math.isfinite(expr.q) and expr.q >= 1.0):
            raise ValueError(f"inner exponent must be >= 1, got {expr.q}")
        return
    if not expr.members:
        raise ValueError(f"{type(expr).__name__} needs at least one member")
    for m in expr.members:
        _validate(m)


_TOK = re.compile(r"\s*(Intersect|Sum|D|S|\(|\)|,|[0-9.eE+-]+)")


def parse_norm(text: str) -> NormExpr:
    """Parse e.g. ``"Sum(Intersect(S(3),D(3)),D(1.5))"``."""
    tokens, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _TOK.match(text, pos)
        if not m:
            raise ValueError(f"cannot parse norm at {text[pos:]!r}")
        tokens.append(m.group(1))
        pos = m.end()
    i = 0

    def expect(tok):
        nonlocal i
        if i >= len(tokens) or tokens[i] != tok:
            raise ValueError(f"expected {tok!r} in {text!r}")
        i += 1

    def node():
        nonlocal i
        head = tokens[i]
        i += 1
        expect("(")
        if head in ("D", "S"):
            q = float(tokens[i])
            i += 1
            expect(")")
            return D(q) if head == "D" else S(q)
        if head not in ("Intersect", "Sum"):
            raise ValueError(f"unknown norm {head!r}")
        members = [node()]
        while tokens[i] == ",":
            i += 1
            members.append(node())
        expect(")")
        return (Intersect if head == "Intersect" else Sum)(tuple(members))

    out = node()
    if i != len(tokens):
        raise ValueError(f"trailing input in {text!r}")
    _validate(out)
    return out


def dual_expr(expr: NormExpr) -> NormExpr:
    if isinstance(expr, D):
        return D(dual_exponent(expr.q))
    if isinstance(expr, S):
        return S(dual_exponent(expr.q))
    if isinstance(expr, Intersect):
        return Sum(tuple(dual_expr(m) for m in expr.members))
    return Intersect(tuple(dual_expr(m) for m in expr.members))


def _flatten(expr: NormExpr) -> NormExpr:
    if isinstance(expr, (D, S)):
        return expr
    members = []
    for m in expr.members:
        m = _flatten(m)
        if type(m) is type(expr):
            members.extend(m.members)
        else:
            members.append(m)
    if len(members) == 1:
        return members[0]
    return type(expr)(tuple(members))


@dataclass(frozen=True, eq=False)
class Field:
    values: np.ndarray   # (m, C, d)
    mu: np.ndarray       # (C,)
    space: SpaceSpec
    p: float

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(values, self.mu, self.space, self.p)

    def dual(self, values: np.ndarray) -> "Field":
        return Field(values, self.mu, self.space.dual(), dual_exponent(self.p))

    def bracket_weights(self) -> np.ndarray:
        """Weights turning Euclidean dot products into the duality bracket."""
        w = np.asarray(self.space.weights, dtype=float)
        return (self.mu[:, None] * w[None, :])[None, :, :] / self.m


def compress_field(f: Field) -> Field:
    """Merge cells whose values agree on every sample, adding their measures.

    Every norm of the grammar is unchanged: a decomposition of the merged
    field copies back, and averaging a decomposition over merged cells with
    weights ``mu`` does not increase any member norm.  Zero cells are dropped.
    """
    Y = f.values
    m, C, d = Y.shape
    if C == 0:
        return f
    cols = np.ascontiguousarray(Y.transpose(1, 0, 2).reshape(C, m * d))
    keys, inv = np.unique(cols, axis=0, return_inverse=True)
    mu = np.bincount(np.ravel(inv), weights=f.mu, minlength=len(keys))
    keep = np.any(keys != 0.0, axis=1) & (mu > 0)
    values = keys[keep].reshape(-1, m, d).transpose(1, 0, 2)
    return Field(np.ascontiguousarray(values), mu[keep], f.space, f.p)


def leaf_inner(expr: D | S, f: Field) -> np.ndarray:
    """Pathwise inner norm per sample, shape (m,)."""
    Y, mu = f.values, f.mu
    if isinstance(expr, D):
        a = f.space.norm(Y)
        return np.sum(mu[None, :] * a**expr.q, axis=1) ** (1.0 / expr.q)
    if not isinstance(f.space, WeightedLq):
        raise ValueError("the square function norm needs a weighted l^q space")
    b = np.sqrt(np.einsum("c,mcs->ms", mu, Y**2))
    w = np.asarray(f.space.weights)
    return np.sum(w[None, :] * b**expr.q, axis=1) ** (1.0 / expr.q)


def _outer(inner: np.ndarray, p: float) -> float:
    top = inner.max(initial=0.0)
    if top == 0.0:
        return 0.0
    return top * float(np.mean((inner / top) ** p)) ** (1.0 / p)


def exact_norm(expr: D | S, f: Field) -> float:
    return _outer(leaf_inner(expr, f), f.p)


# ---------------------------------------------------------------------------
# smoothed values and gradients


def _smooth_leaf(expr: D | S, f: Field, Y: np.ndarray, eps: float):
    mu, p = f.mu, f.p
    space = f.space
    if isinstance(expr, D):
        q = expr.q
        if isinstance(space, Hilbert):
            a = np.sqrt(np.sum(Y**2, axis=2) + eps**2)
            da = Y / a[:, :, None]
        else:
            r = space.q
            w = np.asarray(space.weights)
            av = np.sqrt(Y**2 + eps**2)
            a = np.sum(w * av**r, axis=2) ** (1.0 / r)
            da = a[:, :, None] ** (1.0 - r) * w * av ** (r - 2.0) * Y
        inner = np.sum(mu * a**q, axis=1) ** (1.0 / q)
        dI_da = inner[:, None] ** (1.0 - q) * mu * a ** (q - 1.0)
        dI = dI_da[:, :, None] * da
    else:
        if not isinstance(space, WeightedLq):
            raise ValueError("the square function norm needs a weighted l^q space")
        q = expr.q
        w = np.asarray(space.weights)
        b = np.sqrt(np.einsum("c,mcs->ms", mu, Y**2) + eps**2)
        inner = np.sum(w * b**q, axis=1) ** (1.0 / q)
        dI_db = inner[:, None] ** (1.0 - q) * w * b ** (q - 1.0)
        dI = (dI_db / b)[:, None, :] * mu[None, :, None] * Y
    m = Y.shape[0]
    G = np.mean(inner**p)
    val = G ** (1.0 / p)
    dV_dI = val ** (1.0 - p) * inner ** (p - 1.0) / m
    return val, dV_dI[:, None, None] * dI


def _smooth(expr, f: Field, Y: np.ndarray, eps: float, temp: float):
    if isinstance(expr, (D, S)):
        return _smooth_leaf(expr, f, Y, eps)
    if isinstance(expr, Intersect):
        parts = [_smooth(m, f, Y, eps, temp) for m in expr.members]
        vals = np.array([v for v, _ in parts])
        top = vals.max()
        wts = np.exp((vals - top) / temp)
        z = wts.sum()
        val = top + temp * math.log(z)
        grad = sum((wk / z) * g for wk, (_, g) in zip(wts, parts))
        return val, grad
    raise ValueError("Sum members may not contain further Sum norms inside an Intersect")


# ---------------------------------------------------------------------------
# exact evaluation of arbitrary trees


def evaluate_norm(expr: NormExpr, f: Field, **solver_kw) -> "SumResult":
    """Value of any norm tree; Sum nodes go through the solver."""
    expr = _flatten(expr)
    if isinstance(expr, (D, S)):
        v = exact_norm(expr, f)
        return SumResult(v, v, v, True, None)
    if isinstance(expr, Intersect):
        parts = [evaluate_norm(m, f, **solver_kw) for m in expr.members]
        return SumResult(
            max(r.value for r in parts),
            max(r.lower for r in parts),
            max(r.upper for r in parts),
            all(r.converged for r in parts),
            None,
        )
    return sum_norm(expr, f, **solver_kw)


def _member_value(expr, f: Field, Y: np.ndarray, **kw) -> float:
    if isinstance(expr, (D, S)):
        return exact_norm(expr, f.with_values(Y))
    return evaluate_norm(expr, f.with_values(Y), **kw).upper


# ---------------------------------------------------------------------------
# the sum-norm solver


@dataclass
class SumResult:
    value: float
    lower: float
    upper: float
    converged: bool
    parts: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.value, self.lower, self.upper = float(self.value), float(self.lower), float(self.upper)
        self.converged = bool(self.converged)

    @property
    def gap(self) -> float:
        if self.upper == 0.0:
            return 0.0
        return (self.upper - self.lower) / self.upper


def _objective(members, f: Field, Z: np.ndarray) -> float:
    return sum(_member_value(m, f, Z[k], with_lower=False) for k, m in enumerate(members))


def _threshold_candidates(members, Y: np.ndarray, n_thresholds: int = 24):
    """All-in-one-member splits and magnitude threshold splits between member pairs."""
    n = len(members)
    mag = np.abs(Y)
    positive = mag[mag > 0]
    if positive.size == 0:
        yield np.zeros((n,) + Y.shape)
        return
    for a in range(n):
        Z = np.zeros((n,) + Y.shape)
        Z[a] = Y
        yield Z
    thresholds = np.unique(np.quantile(positive, np.linspace(0.0, 1.0, n_thresholds)))
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            for t in thresholds:
                big = mag > t
                Z = np.zeros((n,) + Y.shape)
                Z[a] = np.where(big, Y, 0.0)
                Z[b] = np.where(big, 0.0, Y)
                yield Z


def sum_norm(
    expr: Sum,
    f: Field,
    *,
    with_lower: bool = True,
    gap_target: float = 0.05,
    maxiter: int = 150,
    eps_schedule: Sequence[float] = (1e-2, 1e-4, 1e-6),
) -> SumResult:
    """Infimum over ``Y = sum_a Y_a`` of ``sum_a ||Y_a||_a``.

    The upper value is the exact objective at the best decomposition found
    (threshold scan, then L-BFGS on an epsilon-smoothed objective with epsilon
    decreasing).  The lower value is ``<Y, psi> / max_a ||psi||_a*`` for dual
    elements ``psi`` built from member gradients at that decomposition.
    """
    expr = _flatten(expr)
    if not isinstance(expr, Sum):
        v = evaluate_norm(expr, f, with_lower=with_lower)
        return v
    members = expr.members
    n = len(members)
    Y0 = f.values
    scale = float(np.sqrt(np.mean(np.sum(Y0**2, axis=(1, 2)))))
    if scale == 0.0:
        return SumResult(0.0, 0.0, 0.0, True, [np.zeros_like(Y0)] * n)
    Y = Y0 / scale
    fs = f.with_values(Y)

    best_val, best_Z = math.inf, None
    for Z in _threshold_candidates(members, Y):
        v = _objective(members, fs, Z)
        if v < best_val:
            best_val, best_Z = v, Z

    shape = Y.shape

    def unpack(x):
        free = x.reshape((n - 1,) + shape)
        last = Y - free.sum(axis=0)
        return np.concatenate([free, last[None]], axis=0)

    lower = _dual_lower(members, fs, best_Z, Y) if with_lower else 0.0
    x = best_Z[:-1].ravel().copy()
    for eps in eps_schedule:
        if with_lower and best_val - lower <= 0.2 * gap_target * best_val:
            break
        temp = max(eps, 1e-6)

        def fun(x):
            Z = unpack(x)
            total, grads = 0.0, []
            for k, m in enumerate(members):
                v, g = _smooth(m, fs, Z[k], eps, temp)
                total += v
                grads.append(g)
            gfree = np.stack([grads[k] - grads[-1] for k in range(n - 1)])
            return total, gfree.ravel()

        res = minimize(fun, x, jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "gtol": 1e-10})
        x = res.x
        Z = unpack(x)
        v = _objective(members, fs, Z)
        if v < best_val:
            best_val, best_Z = v, Z
        if with_lower:
            lower = max(lower, _dual_lower(members, fs, Z, Y))

    upper = best_val
    lower = min(lower, upper)
    converged = (not with_lower) or upper == 0.0 or (upper - lower) <= gap_target * upper
    parts = [z * scale for z in best_Z]
    return SumResult(upper * scale, lower * scale, upper * scale, converged, parts)


def _dual_lower(members, f: Field, Z: np.ndarray, Y: np.ndarray) -> float:
    grads = []
    for k, m in enumerate(members):
        _, g = _smooth(m, f, Z[k], 1e-6, 1e-6)
        grads.append(g)
    cands = list(grads)
    if len(grads) > 1:
        cands.append(sum(grads) / len(grads))
    for a in range(len(grads)):
        for b in range(a + 1, len(grads)):
            for th in (0.25, 0.75):
                cands.append(th * grads[a] + (1.0 - th) * grads[b])
    bw = f.bracket_weights()
    safe = np.where(bw > 0, bw, 1.0)
    best = 0.0
    for g in cands:
        bracket = float(np.sum(g * Y))
        if bracket <= 0.0:
            continue
        psi = np.where(bw > 0, g / safe, 0.0)
        fd = f.dual(psi)
        dn = max(
            _member_value(dual_expr(m), fd, psi, with_lower=False, eps_schedule=(1e-4,), maxiter=60)
            for m in members
        )
        if dn > 0.0:
            best = max(best, bracket / dn)
    return best
