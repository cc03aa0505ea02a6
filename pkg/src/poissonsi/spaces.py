"""Finite-dimensional normed spaces: Euclidean R^d and weighted l^q."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = ["Hilbert", "WeightedLq", "SpaceSpec", "dual_exponent", "space_from_dict"]


def dual_exponent(p: float) -> float:
    if not (math.isfinite(p) and p > 1.0):
        raise ValueError(f"exponent must lie in (1, inf), got {p}")
    return p / (p - 1.0)


def _check(space, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != space.dim:
        raise ValueError(f"dimension mismatch: expected {space.dim}, got {v.shape[-1]}")
    return v


@dataclass(frozen=True)
class Hilbert:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")

    # martingale type / cotype of the instance
    type_exponent = 2.0
    cotype_exponent = 2.0

    @property
    def weights(self) -> np.ndarray:
        return np.ones(self.dim)

    @property
    def exponent(self) -> float:
        return 2.0

    def norm(self, v) -> np.ndarray:
        """Euclidean norm along the last axis."""
        v = _check(self, v)
        return np.sqrt(np.einsum("...i,...i->...", v, v))

    def dual(self) -> "Hilbert":
        return self

    def dual_norm(self, w) -> np.ndarray:
        return self.norm(w)

    def pairing(self, v, w) -> np.ndarray:
        v, w = _check(self, v), _check(self, w)
        return np.einsum("...i,...i->...", v, w)

    def norming_element(self, v) -> np.ndarray:
        v = _check(self, v)
        n = self.norm(v)
        return v / n if n > 0 else np.zeros_like(v)

    def to_dict(self) -> dict:
        return {"kind": "hilbert", "dim": self.dim}


@dataclass(frozen=True)
class WeightedLq:
    """``(sum_s w_s |v_s|**q)**(1/q)``; ``q`` may be any value >= 1 for norm evaluation."""

    q: float
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not (math.isfinite(self.q) and self.q >= 1.0):
            raise ValueError(f"exponent must be >= 1 and finite, got {self.q}")
        if not self.weights or any(not (math.isfinite(w) and w > 0) for w in self.weights):
            raise ValueError("weights must be strictly positive and finite")

    @property
    def dim(self) -> int:
        return len(self.weights)

    @property
    def exponent(self) -> float:
        return self.q

    @property
    def type_exponent(self) -> float:
        return min(self.q, 2.0)

    @property
    def cotype_exponent(self) -> float:
        return max(self.q, 2.0)

    def norm(self, v) -> np.ndarray:
        v = _check(self, v)
        w = np.asarray(self.weights)
        return np.sum(w * np.abs(v) ** self.q, axis=-1) ** (1.0 / self.q)

    def dual(self) -> "WeightedLq":
        return WeightedLq(dual_exponent(self.q), self.weights)

    def dual_norm(self, w) -> np.ndarray:
        return self.dual().norm(w)

    def pairing(self, v, w) -> np.ndarray:
        """``sum_s w_s v_s u_s``; ``u`` lives in the dual (same weights, conjugate exponent)."""
        v, w = _check(self, v), _check(self, w)
        return np.sum(np.asarray(self.weights) * v * w, axis=-1)

    def norming_element(self, v) -> np.ndarray:
        """The ``u`` with dual norm one and ``pairing(v, u) = norm(v)``."""
        v = _check(self, v)
        n = float(self.norm(v))
        if n == 0.0:
            return np.zeros_like(v)
        return np.sign(v) * (np.abs(v) / n) ** (self.q - 1.0)

    def to_dict(self) -> dict:
        return {"kind": "lq", "q": self.q, "weights": list(self.weights)}


SpaceSpec = Hilbert | WeightedLq


def space_from_dict(data: Mapping) -> SpaceSpec:
    kind = data.get("kind", "hilbert")
    if kind == "hilbert":
        return Hilbert(int(data["dim"]))
    if kind == "lq":
        q = float(data["q"])
        if not q > 1.0:
            raise ValueError("l^q instances need q in (1, inf)")
        if "weights" in data:
            weights = tuple(data["weights"])
        else:
            weights = (1.0,) * int(data["dim"])
        return WeightedLq(q, weights)
    raise ValueError(f"unknown space kind {kind!r}")
