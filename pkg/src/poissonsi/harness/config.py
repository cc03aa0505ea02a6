"""Experiment configuration, loadable from YAML or JSON."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import yaml

from ..spaces import SpaceSpec, space_from_dict

__all__ = ["ExperimentConfig", "load_config", "KINDS", "THEOREMS"]

KINDS = ("simulate", "identities", "ratios", "clark-ocone", "reverse-doob")
THEOREMS = (
    "hilbert",
    "lq",
    "type",
    "cotype",
    "decoupling",
    "convolution",
    "isometry",
    "moments",
    "inclusions",
)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    theorem: str | None = None
    space: dict = field(default_factory=lambda: {"kind": "hilbert", "dim": 2})
    p: tuple = (2.0,)
    s: float | None = None
    samples: int = 4000
    rhs_samples: int = 256
    seed: int = 0
    tolerance: float = 5e-9
    kappas: tuple = (1.0,)
    params: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in _as_list(self.p)))
        object.__setattr__(self, "kappas", tuple(float(v) for v in _as_list(self.kappas)))
        # YAML 1.1 reads "1e-9" as a string
        for name, cast in (("samples", int), ("rhs_samples", int), ("seed", int), ("tolerance", float)):
            object.__setattr__(self, name, cast(getattr(self, name)))
        if self.s is not None:
            object.__setattr__(self, "s", float(self.s))
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "ratios" and self.theorem not in THEOREMS:
            raise ValueError(f"unknown theorem {self.theorem!r}; expected one of {THEOREMS}")
        if self.samples < 2:
            raise ValueError("need at least two samples")
        if not (self.tolerance > 0 and math.isfinite(self.tolerance)):
            raise ValueError("tolerance must be positive")
        if any(not (k > 0 and math.isfinite(k)) for k in self.kappas):
            raise ValueError("intensity factors must be positive")
        self._check_exponents()

    def _check_exponents(self) -> None:
        if self.kind == "reverse-doob":
            if any(not 0.0 < p <= 1.0 for p in self.p):
                raise ValueError("the reverse dual Doob check needs p in (0, 1]")
            return
        if self.kind == "ratios" and self.theorem == "moments":
            if any(p < 1.0 for p in self.p):
                raise ValueError("moment exponents must be at least 1")
            return
        if any(not (p > 1.0 and math.isfinite(p)) for p in self.p):
            raise ValueError("outer exponents must lie in (1, inf)")
        if self.theorem == "type" and (self.s is None or not 1.0 < self.s <= 2.0):
            raise ValueError("type-side experiments need s in (1, 2]")
        if self.theorem == "cotype" and (self.s is None or not 2.0 <= self.s < math.inf):
            raise ValueError("cotype-side experiments need s in [2, inf)")
        if self.theorem == "lq" and self.space.get("kind") != "lq":
            raise ValueError("l^q regime experiments need an lq space")

    @property
    def space_spec(self) -> SpaceSpec:
        return space_from_dict(self.space)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["p"] = list(self.p)
        out["kappas"] = list(self.kappas)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))


def _as_list(v):
    if isinstance(v, (list, tuple)):
        return v
    return [v]


def load_config(path: str | Path) -> list[ExperimentConfig]:
    """One config, or a list under ``experiments:``."""
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, Mapping) and "experiments" in data:
        return [ExperimentConfig.from_dict(d) for d in data["experiments"]]
    if isinstance(data, list):
        return [ExperimentConfig.from_dict(d) for d in data]
    return [ExperimentConfig.from_dict(data)]
