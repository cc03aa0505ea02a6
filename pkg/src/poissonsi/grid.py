"""Discretised product space R+ x J and Poisson random measure sampling.

The jump space J is represented by finitely many disjoint mark sets, each
carrying its intensity weight.  A :class:`Cell` is a rectangle ``(t0, t1] x A_j``;
rectangles that are unions of grid cells (or that cut through cells, when
jump times are available) are counted on sampled paths by
:meth:`PathBatch.region_count`.

Sampling is counter based: the counts of cell ``c`` for the samples in block
``b`` come from a Philox stream keyed by ``(seed, b, c)``, so any sample can be
regenerated in isolation and blocks can be produced in any order.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .series import central_abs_moment

__all__ = [
    "MarkSet",
    "Cell",
    "GridSpace",
    "GridMismatch",
    "refine_grid",
    "PathBatch",
    "PoissonPath",
    "sample_batch",
    "sample_path",
    "sample_given_total",
    "compensated_count",
    "central_abs_moment",
    "BLOCK_SIZE",
]

BLOCK_SIZE = 1024
_EPS = 1e-12


class GridMismatch(ValueError):
    """A cell, region or path does not belong to the grid it is used with."""


@dataclass(frozen=True)
class MarkSet:
    index: int
    weight: float

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight >= 0.0):
            raise ValueError(f"mark weight must be finite and non-negative, got {self.weight}")


@dataclass(frozen=True, order=True)
class Cell:
    """The rectangle ``(t0, t1] x A_mark``."""

    t0: float
    t1: float
    mark: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError(f"empty time interval ({self.t0}, {self.t1}]")

    def overlaps(self, other: "Cell") -> bool:
        return (
            self.mark == other.mark
            and self.t0 < other.t1 - _EPS
            and other.t0 < self.t1 - _EPS
        )

    def contains(self, other: "Cell") -> bool:
        return (
            self.mark == other.mark
            and self.t0 <= other.t0 + _EPS
            and other.t1 <= self.t1 + _EPS
        )

    def restrict(self, t: float) -> "Cell | None":
        """``(t0 ^ t, t1 ^ t] x A``, or None when empty."""
        hi = min(self.t1, t)
        if hi <= self.t0 + _EPS:
            return None
        return Cell(self.t0, hi, self.mark)

    def __str__(self) -> str:
        return f"({self.t0:g},{self.t1:g}]x{self.mark}"


@dataclass(frozen=True)
class GridSpace:
    times: tuple[float, ...]
    marks: tuple[MarkSet, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", tuple(self.marks))
        if len(times) < 2:
            raise ValueError("a time grid needs at least two points")
        if times[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if not all(math.isfinite(t) for t in times):
            raise ValueError("time grid entries must be finite")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("time grid must be strictly increasing")
        idx = [m.index for m in self.marks]
        if len(set(idx)) != len(idx):
            raise ValueError("mark indices must be unique")
        if not self.marks:
            raise ValueError("at least one mark set is required")

    @classmethod
    def uniform(cls, horizon: float, n_intervals: int, weights: Sequence[float]) -> "GridSpace":
        times = np.linspace(0.0, horizon, n_intervals + 1)
        return cls(tuple(times), tuple(MarkSet(j, float(w)) for j, w in enumerate(weights)))

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def weights(self) -> dict[int, float]:
        return {m.index: m.weight for m in self.marks}

    @property
    def cells(self) -> list[Cell]:
        """All cells, lexicographic in (interval, mark)."""
        return [
            Cell(self.times[i], self.times[i + 1], m.index)
            for i in range(self.n_intervals)
            for m in self.marks
        ]

    def cell(self, i: int, j: int) -> Cell:
        return Cell(self.times[i], self.times[i + 1], self.marks[j].index)

    def cell_index(self, cell: Cell) -> int:
        i = self.interval_of(cell.t0, cell.t1)
        j = self.mark_position(cell.mark)
        return i * len(self.marks) + j

    def mark_position(self, mark: int) -> int:
        for j, m in enumerate(self.marks):
            if m.index == mark:
                return j
        raise GridMismatch(f"mark {mark} is not part of this grid")

    def interval_of(self, t0: float, t1: float) -> int:
        i = self._time_index(t0)
        if i is None or i + 1 >= len(self.times) or abs(self.times[i + 1] - t1) > _EPS:
            raise GridMismatch(f"({t0}, {t1}] is not a grid interval")
        return i

    def _time_index(self, t: float) -> int | None:
        k = int(np.searchsorted(self.times, t - _EPS))
        if k < len(self.times) and abs(self.times[k] - t) <= _EPS:
            return k
        return None

    def measure(self, cell: Cell) -> float:
        weight = self.weights.get(cell.mark)
        if weight is None:
            raise GridMismatch(f"mark {cell.mark} is not part of this grid")
        return (cell.t1 - cell.t0) * weight

    def measures(self) -> np.ndarray:
        return np.array([self.measure(c) for c in self.cells])

    def aligned(self, region: Cell) -> bool:
        """True when ``region`` is a union of grid cells."""
        if region.mark not in self.weights:
            return False
        return self._time_index(region.t0) is not None and self._time_index(region.t1) is not None

    def cells_in(self, region: Cell) -> list[Cell]:
        """Grid cells overlapping ``region`` (same mark)."""
        j = self.mark_position(region.mark)
        out = []
        for i in range(self.n_intervals):
            c = self.cell(i, j)
            if c.overlaps(region):
                out.append(c)
        return out

    def refines(self, other: "GridSpace") -> bool:
        if self.weights != other.weights:
            return False
        return all(self._time_index(t) is not None for t in other.times)

    def scaled(self, kappa: float) -> "GridSpace":
        """Same partition with every mark weight multiplied by ``kappa``."""
        return GridSpace(self.times, tuple(MarkSet(m.index, m.weight * kappa) for m in self.marks))

    def subdivided(self, k: int) -> "GridSpace":
        """Every time interval split into ``k`` equal pieces."""
        if k < 1:
            raise ValueError("k must be at least 1")
        times = [0.0]
        for a, b in zip(self.times, self.times[1:]):
            step = (b - a) / k
            times.extend(a + step * r for r in range(1, k))
            times.append(b)
        return GridSpace(tuple(times), self.marks)

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "marks": [{"index": m.index, "weight": m.weight} for m in self.marks],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GridSpace":
        return cls(
            tuple(float(t) for t in data["times"]),
            tuple(MarkSet(int(m["index"]), float(m["weight"])) for m in data["marks"]),
        )


def refine_grid(grid: GridSpace) -> GridSpace:
    """Bisect time intervals until every cell has measure at most one."""
    wmax = max(m.weight for m in grid.marks)
    times = [0.0]
    for a, b in zip(grid.times, grid.times[1:]):
        pieces = 1
        while (b - a) / pieces * wmax > 1.0:
            pieces *= 2
        step = (b - a) / pieces
        times.extend(a + step * r for r in range(1, pieces))
        times.append(b)
    if len(times) == len(grid.times):
        return grid
    return GridSpace(tuple(times), grid.marks)


@dataclass(frozen=True, eq=False)
class CellJumps:
    """Jump times of one cell across a batch, sorted by (sample, time)."""

    sample: np.ndarray
    time: np.ndarray


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Counts (and optionally jump times) for samples ``start .. start+m-1``."""

    grid: GridSpace
    counts: np.ndarray
    seed: int
    start: int
    jumps: tuple[CellJumps, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    @property
    def has_jump_times(self) -> bool:
        return self.jumps is not None

    def region_count(self, region: Cell) -> np.ndarray:
        """``N(region)`` per sample, as float array of shape (m,)."""
        key = (region.t0, region.t1, region.mark)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        grid = self.grid
        if region.mark not in grid.weights:
            raise GridMismatch(f"mark {region.mark} is not part of the path's grid")
        if region.t1 > grid.horizon + _EPS:
            raise GridMismatch(f"region {region} extends past the grid horizon")
        cells = grid.cells_in(region)
        out = np.zeros(self.size)
        for c in cells:
            idx = grid.cell_index(c)
            if region.contains(c):
                out += self.counts[:, idx]
                continue
            if self.jumps is None:
                raise ValueError(
                    f"region {region} cuts through cell {c}; sample with jump times"
                )
            cj = self.jumps[idx]
            inside = (cj.time > region.t0) & (cj.time <= region.t1)
            out += np.bincount(cj.sample[inside], minlength=self.size)
        self._cache[key] = out
        return out

    def path(self, k: int) -> "PoissonPath":
        jt = None
        if self.jumps is not None:
            jt = tuple(tuple(cj.time[cj.sample == k]) for cj in self.jumps)
        return PoissonPath(
            self.grid, tuple(int(c) for c in self.counts[k]), self.seed, self.start + k, jt
        )

    def refine(self, grid: GridSpace) -> "PathBatch":
        """Re-express on a refinement of this batch's grid, thinning by jump times."""
        if not grid.refines(self.grid):
            raise GridMismatch("target grid does not refine the batch grid")
        counts = np.stack([self.region_count(c) for c in grid.cells], axis=1).astype(np.int64)
        jumps = None
        if self.jumps is not None:
            jumps = []
            for c in grid.cells:
                parent = self.jumps[self.grid.cell_index(self.grid.cells_in(c)[0])]
                keep = (parent.time > c.t0) & (parent.time <= c.t1)
                jumps.append(CellJumps(parent.sample[keep], parent.time[keep]))
            jumps = tuple(jumps)
        return PathBatch(grid, counts, self.seed, self.start, jumps)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_index", "cell_i", "cell_j", "count"])
        nm = len(self.grid.marks)
        for k in range(self.size):
            for c in range(self.counts.shape[1]):
                w.writerow([self.start + k, c // nm, c % nm, int(self.counts[k, c])])
        return buf.getvalue()


@dataclass(frozen=True)
class PoissonPath:
    grid: GridSpace
    counts: tuple[int, ...]
    seed: int
    index: int
    jump_times: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if len(self.counts) != len(self.grid.cells):
            raise GridMismatch("one count per grid cell is required")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")
        if self.jump_times is not None:
            for cell, n, times in zip(self.grid.cells, self.counts, self.jump_times):
                if len(times) != n:
                    raise ValueError(f"cell {cell}: {len(times)} jump times for count {n}")
                if any(not (cell.t0 < t <= cell.t1) for t in times):
                    raise ValueError(f"cell {cell}: jump time outside its interval")

    def count(self, cell: Cell) -> int:
        return self.counts[self.grid.cell_index(cell)]

    def as_batch(self) -> PathBatch:
        jumps = None
        if self.jump_times is not None:
            jumps = tuple(
                CellJumps(np.zeros(len(t), dtype=np.int64), np.asarray(t, dtype=float))
                for t in self.jump_times
            )
        return PathBatch(
            self.grid, np.asarray([self.counts], dtype=np.int64), self.seed, self.index, jumps
        )


def _block(grid: GridSpace, seed: int, block: int, with_jump_times: bool):
    counts = np.empty((BLOCK_SIZE, len(grid.cells)), dtype=np.int64)
    jumps = []
    for c, (cell, mu) in enumerate(zip(grid.cells, grid.measures())):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block, c])))
        n = rng.poisson(mu, BLOCK_SIZE)
        counts[:, c] = n
        if with_jump_times:
            t = rng.uniform(cell.t0, cell.t1, int(n.sum()))
            # uniform draws land in [t0, t1); the cell is (t0, t1]
            t = np.where(t <= cell.t0, cell.t1, t)
            s = np.repeat(np.arange(BLOCK_SIZE), n)
            order = np.lexsort((t, s))
            jumps.append(CellJumps(s[order], t[order]))
    return counts, (tuple(jumps) if with_jump_times else None)


def sample_batch(
    grid: GridSpace, seed: int, m: int, start: int = 0, with_jump_times: bool = False
) -> PathBatch:
    """Samples ``start .. start+m-1``; each one depends only on ``(grid, seed, index)``."""
    if m < 1:
        raise ValueError("need at least one sample")
    first, last = start // BLOCK_SIZE, (start + m - 1) // BLOCK_SIZE
    count_parts, jump_parts = [], []
    for b in range(first, last + 1):
        lo = max(start, b * BLOCK_SIZE) - b * BLOCK_SIZE
        hi = min(start + m, (b + 1) * BLOCK_SIZE) - b * BLOCK_SIZE
        counts, jumps = _block(grid, seed, b, with_jump_times)
        count_parts.append(counts[lo:hi])
        if jumps is not None:
            offset = b * BLOCK_SIZE + lo - start
            jump_parts.append(
                [
                    CellJumps(cj.sample[keep] - lo + offset, cj.time[keep])
                    for cj in jumps
                    for keep in [(cj.sample >= lo) & (cj.sample < hi)]
                ]
            )
    jumps = None
    if with_jump_times:
        jumps = tuple(
            CellJumps(
                np.concatenate([part[c].sample for part in jump_parts]),
                np.concatenate([part[c].time for part in jump_parts]),
            )
            for c in range(len(grid.cells))
        )
    return PathBatch(grid, np.concatenate(count_parts), seed, start, jumps)


def sample_path(grid: GridSpace, seed: int, index: int, with_jump_times: bool = False) -> PoissonPath:
    return sample_batch(grid, seed, 1, index, with_jump_times).path(0)


def sample_given_total(
    grid: GridSpace, seed: int, n: int, m: int, with_jump_times: bool = False
) -> PathBatch:
    """``m`` paths conditioned on exactly ``n`` jumps in the whole grid.

    Given the total, the jumps are independent: a cell is chosen with
    probability ``mu(cell) / mu(grid)`` and the time is uniform inside it.
    The batch depends only on ``(grid, seed, n, m)``.
    """
    if m < 1:
        raise ValueError("need at least one sample")
    if n < 0:
        raise ValueError("the jump total must be non-negative")
    mu = grid.measures()
    total = float(mu.sum())
    if n > 0 and total <= 0.0:
        raise ValueError("a grid of zero measure has no jumps")
    C = len(grid.cells)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5A, n, m])))
    which = rng.choice(C, size=(m, n), p=mu / total) if n else np.empty((m, 0), dtype=np.int64)
    s = np.repeat(np.arange(m), n)
    flat = which.ravel()
    counts = np.zeros((m, C), dtype=np.int64)
    np.add.at(counts, (s, flat), 1)
    jumps = None
    if with_jump_times:
        t0 = np.array([c.t0 for c in grid.cells])
        t1 = np.array([c.t1 for c in grid.cells])
        t = rng.uniform(t0[flat], t1[flat])
        t = np.where(t <= t0[flat], t1[flat], t)
        parts = []
        for c in range(C):
            keep = flat == c
            order = np.lexsort((t[keep], s[keep]))
            parts.append(CellJumps(s[keep][order], t[keep][order]))
        jumps = tuple(parts)
    return PathBatch(grid, counts, seed, 0, jumps)


def compensated_count(path: PoissonPath | PathBatch, cells: Iterable[Cell]):
    """``N(B) - mu(B)`` for the union ``B`` of the given grid cells."""
    cells = list(cells)
    grid = path.grid
    valid = set(grid.cells)
    for c in cells:
        if c not in valid:
            raise GridMismatch(f"cell {c} is not a cell of the path's grid")
    if isinstance(path, PoissonPath):
        return float(sum(path.count(c) for c in cells) - sum(grid.measure(c) for c in cells))
    total = np.zeros(path.size)
    for c in cells:
        total += path.region_count(c) - grid.measure(c)
    return total
