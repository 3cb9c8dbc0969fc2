"""Exact rule recovery from observed orbits and identifiability statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .eca import LatticeError, Orbit, RuleTable, table_size
from .rng import derive_seed, random_bits

EULER_GAMMA = 0.5772156649


class InconsistentOrbitError(ValueError):
    """The same neighborhood was seen mapping to both 0 and 1."""

    def __init__(self, index, radius):
        self.index = index
        self.radius = radius
        pattern = format(index, f"0{2 * radius + 1}b")
        super().__init__(
            f"neighborhood {pattern} (index {index}) maps to both 0 and 1; "
            f"the orbit is not generated by any radius-{radius} rule on a periodic lattice"
        )


@dataclass
class PartialRule:
    """Observed (neighborhood index -> output) entries with occurrence counts."""

    radius: int
    entries: dict[int, int] = field(default_factory=dict)
    observation_counts: np.ndarray = None

    def __post_init__(self):
        if self.observation_counts is None:
            self.observation_counts = np.zeros(table_size(self.radius), dtype=np.int64)

    def record(self, index: int, output: int, count: int = 1):
        """Add an observation; raises if it contradicts an earlier one."""
        known = self.entries.get(index)
        if known is not None and known != output:
            raise InconsistentOrbitError(index, self.radius)
        self.entries[index] = int(output)
        self.observation_counts[index] += count


@dataclass(frozen=True)
class CoverageReport:
    observed_count: int
    total: int

    @property
    def coverage_fraction(self) -> float:
        return self.observed_count / self.total

    @property
    def consistent_rule_count_log2(self) -> int:
        return self.total - self.observed_count

    @property
    def fully_determined(self) -> bool:
        return self.observed_count == self.total


def observe(orbit: Orbit, radius: int) -> PartialRule:
    """Collect every cell transition of ``orbit`` into a partial truth table."""
    if len(orbit) < 2:
        raise ValueError("need at least two states to observe a transition")
    width = orbit.width
    if width < 2 * radius + 1:
        raise LatticeError(f"width {width} is smaller than the neighborhood size {2 * radius + 1}")
    partial = PartialRule(radius)
    if _kernels.supports(width, radius):
        rows = np.array([s.packed for s in orbit.states], dtype=np.uint64)
        counts, ones = _kernels.tally(rows, width, radius)
        clash = np.flatnonzero((ones > 0) & (ones < counts))
        if clash.size:
            raise InconsistentOrbitError(int(clash[0]), radius)
        for n in np.flatnonzero(counts):
            partial.record(int(n), int(ones[n] > 0), int(counts[n]))
        return partial
    for src, dst in zip(orbit.states[:-1], orbit.states[1:]):
        x, y = src.packed, dst.packed
        for w in range(width):
            n = 0
            for j in range(w - radius, w + radius + 1):
                n = (n << 1) | ((x >> (j % width)) & 1)
            partial.record(n, (y >> w) & 1)
    return partial


def coverage(partial: PartialRule) -> CoverageReport:
    return CoverageReport(len(partial.entries), table_size(partial.radius))


def complete_rule(partial: PartialRule) -> Optional[RuleTable]:
    """The unique rule consistent with ``partial``, or None if any entry is unseen."""
    size = table_size(partial.radius)
    if len(partial.entries) < size:
        return None
    return RuleTable(partial.radius, sum(b << n for n, b in partial.entries.items()))


def tmin_estimate(radius: int, width: int) -> float:
    """Coupon-collector estimate of the orbit length needed to see every neighborhood.

    ``N (ln N + gamma) / W`` with ``N = 2**(2r+1)`` draws needed in expectation,
    ``W`` of them per transition.
    """
    if width < 2 * radius + 1:
        raise LatticeError(f"width {width} is smaller than the neighborhood size {2 * radius + 1}")
    n = table_size(radius)
    return n * (math.log(n) + EULER_GAMMA) / width


CURVE_TAG = 0x636F76  # "cov"


def coverage_matrix(radius: int, width: int, max_T: int, num_samples: int, seed: int) -> np.ndarray:
    """Observed-neighborhood counts per sample and prefix length.

    Column ``j`` is the count after observing the prefix of length ``j + 2``
    (transitions ``0 .. j``). Sample ``i`` draws its rule and initial state
    from the sub-seed ``derive_seed(seed, CURVE_TAG, i)``.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if max_T < 2:
        raise ValueError("max_T must be >= 2")
    if not _kernels.supports(width, radius):
        raise LatticeError("coverage curves need width <= 64 and radius <= 2")
    if width < 2 * radius + 1:
        raise LatticeError(f"width {width} is smaller than the neighborhood size {2 * radius + 1}")
    size = table_size(radius)
    subs = derive_seed(seed, CURVE_TAG, np.arange(num_samples, dtype=np.uint64))
    rules = random_bits(subs, size, 0)
    initial = random_bits(subs, width, 1)
    rows = _kernels.evolve(rules, initial, width, radius, max_T)
    seen = np.bitwise_or.accumulate(_kernels.presence_masks(rows[:, :-1], width, radius), axis=1)
    return np.bitwise_count(seen).astype(np.int64)


def coverage_curve(radius: int, width: int, max_T: int, num_samples: int, seed: int):
    """Monte Carlo coverage of the truth table versus observed orbit length.

    Returns ``(t, mean_coverage, frac_determined)`` rows for ``t = 2 .. max_T``.
    """
    counts = coverage_matrix(radius, width, max_T, num_samples, seed)
    size = table_size(radius)
    rows = []
    for j in range(counts.shape[1]):
        col = counts[:, j]
        rows.append((j + 2, float(col.mean() / size), float(np.mean(col == size))))
    return rows


def write_curve_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mean_coverage", "frac_determined"])
        for t, mean_cov, frac in rows:
            writer.writerow([t, f"{mean_cov:.6f}", f"{frac:.6f}"])
