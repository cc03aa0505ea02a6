"""Which combination of norms matches the maximal moment, by exponent regime."""
from __future__ import annotations

import math

from ..norms import D, Intersect, NormSpec, S, Sum
from ..spaces import Hilbert, SpaceSpec, WeightedLq

__all__ = ["regime_of", "regime_table", "hilbert_spec", "type_spec", "cotype_spec", "spec_for_space"]


def _check(p: float, q: float) -> None:
    for name, v in (("p", p), ("q", q)):
        if not (math.isfinite(v) and v > 1.0):
            raise ValueError(f"{name} must lie in (1, inf), got {v}")


def regime_of(p: float, q: float) -> int:
    """Regime number 1..6; on the boundaries the lower-numbered neighbour wins."""
    _check(p, q)
    if 2 <= q <= p:
        return 1
    if 2 <= p <= q:
        return 2
    if p <= 2 <= q:
        return 3
    if q <= 2 <= p:
        return 4
    if q <= p <= 2:
        return 5
    return 6


def regime_table(p: float, q: float) -> NormSpec:
    r = regime_of(p, q)
    Sq, Dq, Dp = S(q), D(q), D(p)
    expr = {
        1: Intersect((Sq, Dq, Dp)),
        2: Intersect((Sq, Sum((Dq, Dp)))),
        3: Sum((Intersect((Sq, Dq)), Dp)),
        4: Intersect((Sum((Sq, Dq)), Dp)),
        5: Sum((Sq, Intersect((Dq, Dp)))),
        6: Sum((Sq, Dq, Dp)),
    }[r]
    return NormSpec(expr, p)


def _pair(s: float, p: float) -> NormSpec:
    # both the type and the cotype bounds intersect for s <= p and add for p < s
    if p == s:
        return NormSpec(D(p), p)
    if s <= p:
        return NormSpec(Intersect((D(s), D(p))), p)
    return NormSpec(Sum((D(s), D(p))), p)


def hilbert_spec(p: float) -> NormSpec:
    """``D(2) cap D(p)`` for ``p >= 2`` and ``D(2) + D(p)`` below."""
    _check(p, 2.0)
    return _pair(2.0, p)


def type_spec(s: float, p: float) -> NormSpec:
    """Upper-bound norm for martingale type ``s`` in ``(1, 2]``."""
    if not 1.0 < s <= 2.0:
        raise ValueError("type exponent must lie in (1, 2]")
    _check(p, 2.0)
    return _pair(s, p)


def cotype_spec(s: float, p: float) -> NormSpec:
    """Lower-bound norm for martingale cotype ``s`` in ``[2, inf)``."""
    if not (2.0 <= s and math.isfinite(s)):
        raise ValueError("cotype exponent must lie in [2, inf)")
    _check(p, 2.0)
    return _pair(s, p)


def spec_for_space(space: SpaceSpec, p: float) -> NormSpec:
    if isinstance(space, Hilbert):
        return hilbert_spec(p)
    if isinstance(space, WeightedLq):
        return regime_table(p, space.q)
    raise ValueError(f"no two-sided norm known for {space!r}")
