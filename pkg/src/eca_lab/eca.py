"""Elementary cellular automata on a periodic lattice.

Rules use the Wolfram numbering generalized to any radius: the neighborhood
``(x[w-r], ..., x[w+r])`` read left to right is a big-endian integer ``n`` and
the next state of cell ``w`` is bit ``n`` of the rule number. States are kept
packed in a Python integer with cell ``w`` at bit ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _kernels


class LatticeError(ValueError):
    """Lattice too narrow for the neighborhood, or mismatched widths."""


def table_size(radius: int) -> int:
    """Number of distinct neighborhoods, ``2**(2r+1)``."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    return 1 << (2 * radius + 1)


@dataclass(frozen=True)
class RuleTable:
    """Truth table of a local rule, stored as its rule number."""

    radius: int
    number: int

    def __post_init__(self):
        size = table_size(self.radius)
        if not 0 <= self.number < (1 << size):
            raise ValueError(f"rule number {self.number} out of range for radius {self.radius}")

    @property
    def arity(self) -> int:
        return 2 * self.radius + 1

    @property
    def size(self) -> int:
        return table_size(self.radius)

    @cached_property
    def outputs(self) -> np.ndarray:
        """Output bit for every neighborhood index, as a uint8 array."""
        return np.array([(self.number >> n) & 1 for n in range(self.size)], dtype=np.uint8)

    @classmethod
    def from_outputs(cls, outputs: Sequence[int], radius: int) -> "RuleTable":
        outputs = [int(b) for b in outputs]
        if len(outputs) != table_size(radius):
            raise ValueError(f"expected {table_size(radius)} outputs for radius {radius}, got {len(outputs)}")
        if any(b not in (0, 1) for b in outputs):
            raise ValueError("rule outputs must be 0 or 1")
        return cls(radius, sum(b << n for n, b in enumerate(outputs)))

    def complement(self) -> "RuleTable":
        """Rule conjugated by bit inversion: ``out'[n] = 1 - out[N-1-n]``."""
        size = self.size
        return RuleTable.from_outputs([1 - int(self.outputs[size - 1 - n]) for n in range(size)], self.radius)


@dataclass(frozen=True)
class LatticeState:
    """A global state of ``width`` cells, packed with cell ``w`` at bit ``w``."""

    width: int
    packed: int

    def __post_init__(self):
        if self.width < 1:
            raise LatticeError(f"width must be positive, got {self.width}")
        if not 0 <= self.packed < (1 << self.width):
            raise ValueError(f"packed value does not fit in {self.width} cells")

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "LatticeState":
        bits = [int(b) for b in bits]
        if any(b not in (0, 1) for b in bits):
            raise ValueError("cell states must be 0 or 1")
        return cls(len(bits), sum(b << w for w, b in enumerate(bits)))

    @classmethod
    def from_string(cls, text: str) -> "LatticeState":
        return cls.from_bits(int(c) for c in text.strip())

    @property
    def bits(self) -> np.ndarray:
        return np.array([(self.packed >> w) & 1 for w in range(self.width)], dtype=np.uint8)

    def __str__(self) -> str:
        return "".join(str((self.packed >> w) & 1) for w in range(self.width))

    def rotate(self, shift: int) -> "LatticeState":
        """Cyclic shift so that new cell ``w`` is old cell ``w - shift``."""
        s = shift % self.width
        full = (1 << self.width) - 1
        return LatticeState(self.width, ((self.packed << s) | (self.packed >> (self.width - s))) & full)

    def invert(self) -> "LatticeState":
        return LatticeState(self.width, self.packed ^ ((1 << self.width) - 1))


@dataclass(frozen=True)
class Orbit:
    """Consecutive states of one automaton run."""

    states: tuple[LatticeState, ...]

    def __post_init__(self):
        if len(self.states) < 1:
            raise ValueError("an orbit holds at least one state")
        widths = {s.width for s in self.states}
        if len(widths) != 1:
            raise LatticeError(f"orbit states have mixed widths {sorted(widths)}")

    @property
    def width(self) -> int:
        return self.states[0].width

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, t):
        return self.states[t]

    def as_array(self) -> np.ndarray:
        """Space-time diagram as a ``(T, W)`` uint8 array."""
        return np.stack([s.bits for s in self.states])

    @classmethod
    def from_array(cls, rows) -> "Orbit":
        return cls(tuple(LatticeState.from_bits(row) for row in np.asarray(rows)))

    @classmethod
    def from_text(cls, text: str) -> "Orbit":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        return cls(tuple(LatticeState.from_string(ln) for ln in lines))

    def render(self) -> str:
        """One row of '0'/'1' characters per state."""
        return "\n".join(str(s) for s in self.states)


def decode_rule(rule_number: int, radius: int) -> RuleTable:
    return RuleTable(radius, int(rule_number))


def encode_rule(rule: RuleTable) -> int:
    return rule.number


def neighborhood_index(neighborhood: Sequence[int]) -> int:
    n = 0
    for b in neighborhood:
        n = (n << 1) | int(b)
    return n


def local_step(rule: RuleTable, neighborhood: Sequence[int]) -> int:
    if len(neighborhood) != rule.arity:
        raise ValueError(f"neighborhood has {len(neighborhood)} cells, rule expects {rule.arity}")
    return (rule.number >> neighborhood_index(neighborhood)) & 1


def _check_width(rule: RuleTable, width: int):
    if width < rule.arity:
        raise LatticeError(f"width {width} is smaller than the neighborhood size {rule.arity}")


def global_step(rule: RuleTable, state: LatticeState) -> LatticeState:
    """Apply the rule to every cell at once (bit-sliced over the packed state)."""
    width = state.width
    _check_width(rule, width)
    full = (1 << width) - 1
    x = state.packed
    planes = []
    for offset in range(-rule.radius, rule.radius + 1):
        s = offset % width
        planes.append(((x >> s) | (x << (width - s))) & full if s else x)
    # multiplexer tree: leaves are constant planes, merged on the least
    # significant neighbor first
    level = [full if (rule.number >> n) & 1 else 0 for n in range(rule.size)]
    for plane in reversed(planes):
        inv = plane ^ full
        level = [(plane & level[2 * i + 1]) | (inv & level[2 * i]) for i in range(len(level) // 2)]
    return LatticeState(width, level[0])


def global_step_naive(rule: RuleTable, state: LatticeState) -> LatticeState:
    """Unpacked per-cell reference implementation of :func:`global_step`."""
    width = state.width
    _check_width(rule, width)
    cells = [int(c) for c in str(state)]
    table = [int(b) for b in rule.outputs]
    nxt = []
    for w in range(width):
        n = 0
        for j in range(w - rule.radius, w + rule.radius + 1):
            n = 2 * n + cells[j % width]
        nxt.append(table[n])
    return LatticeState.from_bits(nxt)


def orbit(rule: RuleTable, initial: LatticeState, steps: int) -> Orbit:
    """The first ``steps`` states starting at ``initial``."""
    if steps < 1:
        raise ValueError(f"orbit length must be >= 1, got {steps}")
    _check_width(rule, initial.width)
    if _kernels.supports(initial.width, rule.radius):
        rows = _kernels.evolve(
            np.array([rule.number], dtype=np.uint64),
            np.array([initial.packed], dtype=np.uint64),
            initial.width,
            rule.radius,
            steps,
        )[0]
        return Orbit(tuple(LatticeState(initial.width, int(v)) for v in rows))
    states = [initial]
    for _ in range(steps - 1):
        states.append(global_step(rule, states[-1]))
    return Orbit(tuple(states))


def evolve_batch(rule_numbers, initial, width: int, radius: int, steps: int) -> np.ndarray:
    """Packed orbits for many samples at once, shape ``(n, steps)`` of uint64.

    Requires ``width <= 64`` and ``radius <= 2``.
    """
    if not _kernels.supports(width, radius):
        raise LatticeError(f"batched evolution needs width <= 64 and radius <= 2, got W={width}, r={radius}")
    if width < 2 * radius + 1:
        raise LatticeError(f"width {width} is smaller than the neighborhood size {2 * radius + 1}")
    if steps < 1:
        raise ValueError(f"orbit length must be >= 1, got {steps}")
    return _kernels.evolve(rule_numbers, initial, width, radius, steps)


def unpack_rows(packed, width: int) -> np.ndarray:
    """Expand packed uint64 rows to a trailing axis of ``width`` uint8 cells."""
    packed = np.asarray(packed, dtype=np.uint64)
    return ((packed[..., None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)


def pack_rows(bits) -> np.ndarray:
    """Inverse of :func:`unpack_rows` (last axis at most 64 cells)."""
    bits = np.asarray(bits, dtype=np.uint64)
    width = bits.shape[-1]
    return (bits << np.arange(width, dtype=np.uint64)).sum(axis=-1, dtype=np.uint64)
