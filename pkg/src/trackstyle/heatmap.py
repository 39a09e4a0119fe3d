"""Location and direction heatmaps, dataset splitting, and accumulation.

A heatmap is a 35x50 integer grid of sample counts (rows <-> y, columns <-> x).
Location maps bin pitch positions; direction maps bin velocity endpoints of
samples at or above a speed threshold. Counting is additive: the map of a
union of disjoint sample sets equals the cellwise sum of the parts, which is
what makes accumulation-based augmentation exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .config import substream


@dataclass(frozen=True)
class GridBounds:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate grid bounds {self}")


@dataclass
class HeatmapGrid:
    counts: np.ndarray          # (rows, cols) non-negative integers
    bounds: GridBounds

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise ValueError("heatmap counts must be a 2-d array")
        if (self.counts < 0).any():
            raise ValueError("heatmap counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape  # type: ignore[return-value]


def _bin_indices(values: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    """Half-open bins [a, a+d) with the final bin closed at `hi`."""
    idx = np.floor((values - lo) * (n_bins / (hi - lo))).astype(np.int64)
    return np.minimum(idx, n_bins - 1)  # maps values == hi (and FP spill) into the top bin


def location_heatmap(
    positions: np.ndarray,
    length: float,
    width: float,
    rows: int = 35,
    cols: int = 50,
) -> tuple[HeatmapGrid, int]:
    """Bin pitch positions into a (rows, cols) grid over [0, length] x [0, width].

    Returns the grid and the number of out-of-bounds positions dropped.
    """
    bounds = GridBounds(0.0, float(length), 0.0, float(width))
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if pos.shape[0] == 0:
        return HeatmapGrid(np.zeros((rows, cols), np.int64), bounds), 0
    x, y = pos[:, 0], pos[:, 1]
    inside = (x >= 0) & (x <= length) & (y >= 0) & (y <= width)
    x, y = x[inside], y[inside]
    ix = _bin_indices(x, 0.0, length, cols)
    iy = _bin_indices(y, 0.0, width, rows)
    counts = np.bincount(iy * cols + ix, minlength=rows * cols).reshape(rows, cols)
    return HeatmapGrid(counts, bounds), int((~inside).sum())


def direction_heatmap(
    velocities: np.ndarray,
    threshold: float = 4.0,
    vx_bound: float = 12.0,
    vy_bound: float = 8.0,
    rows: int = 35,
    cols: int = 50,
) -> HeatmapGrid:
    """Bin velocity endpoints with speed >= threshold into a (rows, cols) grid.

    The grid spans [-vx_bound, vx_bound] x [-vy_bound, vy_bound]; endpoints
    outside the rectangle are clamped to the nearest boundary cell. NaN
    velocities (undefined across sampling gaps) are ignored.
    """
    bounds = GridBounds(-vx_bound, vx_bound, -vy_bound, vy_bound)
    vel = np.asarray(velocities, dtype=float).reshape(-1, 2)
    if vel.shape[0] == 0:
        return HeatmapGrid(np.zeros((rows, cols), np.int64), bounds)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    keep = speed >= threshold  # NaN speeds fail the comparison and drop out
    vx = np.clip(vel[keep, 0], -vx_bound, vx_bound)
    vy = np.clip(vel[keep, 1], -vy_bound, vy_bound)
    ix = _bin_indices(vx, -vx_bound, vx_bound, cols)
    iy = _bin_indices(vy, -vy_bound, vy_bound, rows)
    counts = np.bincount(iy * cols + ix, minlength=rows * cols).reshape(rows, cols)
    return HeatmapGrid(counts, bounds)


def add(h1: HeatmapGrid, h2: HeatmapGrid) -> HeatmapGrid:
    """Cellwise integer sum; both grids must share shape and axis bounds."""
    if h1.shape != h2.shape:
        raise ValueError(f"grid shapes differ: {h1.shape} vs {h2.shape}")
    if h1.bounds != h2.bounds:
        raise ValueError(f"grid bounds differ: {h1.bounds} vs {h2.bounds}")
    return HeatmapGrid(h1.counts + h2.counts, h1.bounds)


@dataclass
class HeatmapPair:
    """Location + direction grids for one (possibly accumulated) entity sample."""

    location: HeatmapGrid
    direction: HeatmapGrid
    entity_id: str
    phase_ids: tuple[str, ...]

    @property
    def record_id(self) -> str:
        return f"{self.entity_id}|{'+'.join(self.phase_ids)}"


def accumulate(pairs: list[HeatmapPair]) -> HeatmapPair:
    """Sum the grids of several pairs of one entity into a single pair."""
    if not pairs:
        raise ValueError("cannot accumulate an empty list of heatmap pairs")
    entity_ids = {p.entity_id for p in pairs}
    if len(entity_ids) != 1:
        raise ValueError(f"cannot accumulate pairs of different entities: {sorted(entity_ids)}")
    loc = pairs[0].location
    dirn = pairs[0].direction
    for p in pairs[1:]:
        loc = add(loc, p.location)
        dirn = add(dirn, p.direction)
    phase_ids = tuple(sorted(itertools.chain.from_iterable(p.phase_ids for p in pairs)))
    return HeatmapPair(loc, dirn, pairs[0].entity_id, phase_ids)


@dataclass
class DatasetSplit:
    """Phase-level split assignment per entity; phases never straddle splits."""

    train: dict[str, list[str]] = field(default_factory=dict)
    validation: dict[str, list[str]] = field(default_factory=dict)
    test: dict[str, list[str]] = field(default_factory=dict)

    def split_of(self, entity_id: str, phase_id: str) -> str:
        for name, assignment in (("test", self.test), ("validation", self.validation),
                                 ("train", self.train)):
            if phase_id in assignment.get(entity_id, ()):
                return name
        raise KeyError(f"phase {phase_id} of {entity_id} not in any split")


def split_dataset(
    entity_phases: dict[str, list[str]],
    seed: int,
    test_min_phases: int = 20,
    test_sample: int = 10,
    val_min_phases: int = 15,
    val_sample: int = 5,
) -> DatasetSplit:
    """Assign each entity's phases to train/validation/test.

    Entities with strictly more than `test_min_phases` phases contribute
    `test_sample` seeded-sampled phases to test; among the remaining data,
    entities with strictly more than `val_min_phases` phases contribute
    `val_sample` to validation; everything else trains.
    """
    split = DatasetSplit()
    for entity_id in sorted(entity_phases):
        phases = sorted(entity_phases[entity_id])
        remaining = list(phases)
        if len(phases) > test_min_phases:
            rng = substream(seed, "split-test", entity_id)
            chosen = sorted(rng.choice(remaining, size=test_sample, replace=False).tolist())
            split.test[entity_id] = chosen
            remaining = [p for p in remaining if p not in set(chosen)]
        if len(remaining) > val_min_phases:
            rng = substream(seed, "split-val", entity_id)
            chosen = sorted(rng.choice(remaining, size=val_sample, replace=False).tolist())
            split.validation[entity_id] = chosen
            remaining = [p for p in remaining if p not in set(chosen)]
        if remaining:
            split.train[entity_id] = remaining
    return split


def augment_exhaustive(pairs: list[HeatmapPair], r: int = 3) -> list[HeatmapPair]:
    """All C(n, r) accumulated pairs of one entity's phase heatmaps.

    Returns an empty list (the degenerate n < r case) rather than failing, so
    callers can tally skipped entities.
    """
    if len(pairs) < r:
        return []
    ordered = sorted(pairs, key=lambda p: p.phase_ids)
    return [accumulate(list(combo)) for combo in itertools.combinations(ordered, r)]


def augment_random(
    pairs: list[HeatmapPair],
    rng: np.random.Generator,
    factor: int = 4,
    r: int = 3,
) -> list[HeatmapPair]:
    """factor * n_p random r-combinations of one entity's heatmaps, deduplicated.

    Draws are uniform with replacement over combinations; duplicates collapse
    by their sorted source-phase tuple, so the output size is at most
    min(factor * n_p, C(n_p, r)). Output is ordered by source tuple.
    """
    n = len(pairs)
    if n < r:
        return []
    ordered = sorted(pairs, key=lambda p: p.phase_ids)
    chosen: dict[tuple[int, ...], list[HeatmapPair]] = {}
    for _ in range(factor * n):
        idx = tuple(sorted(rng.choice(n, size=r, replace=False).tolist()))
        if idx not in chosen:
            chosen[idx] = [ordered[i] for i in idx]
    return [accumulate(chosen[idx]) for idx in sorted(chosen)]
