"""Experiment reports: a JSON document plus a flat CSV table."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Criterion", "ExperimentReport", "clean", "ratio_with_se"]

CSV_COLUMNS = ["instance_id", "lhs", "lhs_se", "rhs", "rhs_se", "ratio"]


def clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def ratio_with_se(lhs: float, lhs_se: float, rhs: float, rhs_se: float) -> tuple[float | None, float | None]:
    if rhs == 0.0:
        return None, None
    r = lhs / rhs
    if lhs == 0.0:
        return 0.0, lhs_se / rhs
    return r, abs(r) * math.hypot(lhs_se / lhs, rhs_se / rhs)


@dataclass
class Criterion:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "detail": self.detail}


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    instances: list = field(default_factory=list)
    statistics: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    wall_clock: float = 0.0
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def add(self, name: str, passed: bool, **detail) -> Criterion:
        c = Criterion(name, bool(passed), detail)
        self.criteria.append(c)
        return c

    def to_dict(self, wall_clock: bool = True) -> dict:
        out = {
            "kind": self.kind,
            "config": self.config,
            "instances": self.instances,
            "statistics": self.statistics,
            "criteria": [c.to_dict() for c in self.criteria],
            "passed": self.passed,
        }
        if wall_clock:
            out["wall_clock_seconds"] = self.wall_clock
        return clean(out)

    def to_json(self, wall_clock: bool = True) -> str:
        return json.dumps(self.to_dict(wall_clock), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for inst in self.instances:
            if "lhs" not in inst:
                continue
            row = clean([inst.get(k) for k in CSV_COLUMNS])
            w.writerow(["" if v is None else v for v in row])
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str | None = None) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        js, cs = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
        js.write_text(self.to_json())
        cs.write_text(self.to_csv())
        for name, text in self.artifacts.items():
            (out_dir / f"{stem}-{name}").write_text(text)
        return js, cs

    def summary_lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'}  {self.kind}: {c.name}" for c in self.criteria]
