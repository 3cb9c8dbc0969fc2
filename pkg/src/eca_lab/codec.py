"""Token layouts for the four prediction tasks.

Token ids are frozen: ZERO=0, ONE=1, SEP=2, MASK=3. With prefix ``P`` states
of width ``W``, ``K = 2**(2r+1)`` rule bits and ``prefix = (x0 SEP x1 SEP ...
x[P-1] SEP)``, the inputs are::

    OS    prefix  M*W                              targets x[P+k]
    OO    prefix  (M*W SEP) * horizon              targets x[P] .. x[P+horizon-1]
    OSR   prefix  M*W SEP  M*K                     targets x[P+k], rule[0..K-1]
    ROS   rule SEP  prefix  M*W                    targets x[P+k]

Lookahead ``k`` is not encoded; one model is trained per (task, k).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .eca import LatticeState, RuleTable, table_size

ZERO, ONE, SEP, MASK = 0, 1, 2, 3
VOCAB_SIZE = 4
TOKEN_NAMES = {ZERO: "[0]", ONE: "[1]", SEP: "[SEP]", MASK: "[M]"}
_CHARS = {ZERO: "0", ONE: "1", SEP: "|", MASK: "_"}


class Task(str, enum.Enum):
    OS = "OS"
    OO = "OO"
    OSR = "OSR"
    ROS = "ROS"


class InvalidPredictionError(ValueError):
    """A masked position was predicted as SEP or MASK."""


@dataclass(frozen=True)
class TaskConfig:
    task: Task = Task.OS
    prefix_len: int = 10
    lookahead: int = 0
    horizon: Optional[int] = None
    width: int = 20
    radius: int = 2

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.horizon is None:
            object.__setattr__(self, "horizon", 4 if self.task is Task.OO else 1)
        if self.prefix_len < 2:
            raise ValueError(f"prefix_len must be >= 2, got {self.prefix_len}")
        if self.lookahead < 0:
            raise ValueError("lookahead must be >= 0")
        if self.task is Task.OO:
            if self.horizon < 1 or self.lookahead != 0:
                raise ValueError("OO needs horizon >= 1 and lookahead 0")
        elif self.horizon != 1:
            raise ValueError(f"{self.task.value} predicts a single state; horizon must be 1")
        if self.width < 2 * self.radius + 1:
            raise ValueError(f"width {self.width} too small for radius {self.radius}")

    @property
    def rule_size(self) -> int:
        return table_size(self.radius)

    @property
    def target_states(self) -> list[int]:
        """Orbit indices of the predicted states, in target order."""
        if self.task is Task.OO:
            return list(range(self.prefix_len, self.prefix_len + self.horizon))
        return [self.prefix_len + self.lookahead]

    @property
    def required_steps(self) -> int:
        return self.target_states[-1] + 1

    @property
    def sequence_length(self) -> int:
        w, p, k = self.width, self.prefix_len, self.rule_size
        base = p * (w + 1)
        if self.task is Task.OS:
            return base + w
        if self.task is Task.OO:
            return base + self.horizon * (w + 1)
        if self.task is Task.OSR:
            return base + w + 1 + k
        return k + 1 + base + w

    @property
    def target_length(self) -> int:
        n = len(self.target_states) * self.width
        return n + self.rule_size if self.task is Task.OSR else n

    def mask_positions(self) -> np.ndarray:
        w, p, k = self.width, self.prefix_len, self.rule_size
        base = p * (w + 1)
        if self.task is Task.OS:
            return np.arange(base, base + w)
        if self.task is Task.OO:
            return np.concatenate([np.arange(base + i * (w + 1), base + i * (w + 1) + w) for i in range(self.horizon)])
        if self.task is Task.OSR:
            return np.concatenate([np.arange(base, base + w), np.arange(base + w + 1, base + w + 1 + k)])
        start = k + 1 + base
        return np.arange(start, start + w)

    def state_mask_slices(self) -> list[slice]:
        """Slices of the target vector holding each predicted state."""
        return [slice(i * self.width, (i + 1) * self.width) for i in range(len(self.target_states))]


@dataclass(frozen=True)
class TaskInstance:
    input_tokens: np.ndarray
    target_bits: np.ndarray
    mask_positions: np.ndarray

    def render(self) -> str:
        return render_tokens(self.input_tokens)


def render_tokens(tokens: Sequence[int]) -> str:
    """Compact text dump: 0/1 for bits, '|' for SEP, '_' for MASK."""
    return "".join(_CHARS[int(t)] for t in tokens)


def build_inputs(context: np.ndarray, config: TaskConfig, rule_bits: Optional[np.ndarray] = None) -> np.ndarray:
    """Input token matrix from ``(n, prefix_len, W)`` context states.

    ``rule_bits`` ``(n, K)`` is required for ROS and ignored otherwise.
    """
    context = np.asarray(context)
    n, p, w = context.shape
    if p != config.prefix_len or w != config.width:
        raise ValueError(f"context shape {context.shape[1:]} does not match (prefix_len={config.prefix_len}, W={w})")
    out = np.full((n, config.sequence_length), MASK, dtype=np.int64)
    prefix = np.full((n, p, w + 1), SEP, dtype=np.int64)
    prefix[:, :, :w] = context
    prefix = prefix.reshape(n, -1)
    if config.task is Task.ROS:
        if rule_bits is None:
            raise ValueError("ROS inputs need the rule bits")
        k = config.rule_size
        out[:, :k] = rule_bits
        out[:, k] = SEP
        out[:, k + 1 : k + 1 + prefix.shape[1]] = prefix
        return out
    out[:, : prefix.shape[1]] = prefix
    base = prefix.shape[1]
    if config.task is Task.OO:
        for i in range(config.horizon):
            out[:, base + i * (w + 1) + w] = SEP
    elif config.task is Task.OSR:
        out[:, base + w] = SEP
    return out


def encode_arrays(orbits: np.ndarray, rules: np.ndarray, config: TaskConfig):
    """Batch encoding of ``(n, T, W)`` orbits and ``(n, K)`` rule bits.

    Returns ``(inputs, targets, mask_positions)``.
    """
    orbits = np.asarray(orbits)
    if orbits.shape[1] < config.required_steps:
        raise ValueError(f"orbit has {orbits.shape[1]} states, task needs {config.required_steps}")
    inputs = build_inputs(orbits[:, : config.prefix_len], config, rules)
    parts = [orbits[:, t] for t in config.target_states]
    if config.task is Task.OSR:
        parts.append(np.asarray(rules))
    targets = np.concatenate(parts, axis=1).astype(np.uint8)
    return inputs, targets, config.mask_positions()


def encode(sample, config: TaskConfig) -> TaskInstance:
    if sample.orbit.width != config.width or sample.rule.radius != config.radius:
        raise ValueError("sample dimensions do not match the task config")
    if len(sample.orbit) < config.required_steps:
        raise ValueError(f"orbit has {len(sample.orbit)} states, task needs {config.required_steps}")
    inputs, targets, pos = encode_arrays(sample.orbit.as_array()[None], sample.rule.outputs[None], config)
    return TaskInstance(inputs[0], targets[0], pos)


def decode_state(predicted: Sequence[int], config: TaskConfig) -> tuple[list[LatticeState], Optional[RuleTable]]:
    """Split masked-position predictions back into states (and the rule for OSR)."""
    predicted = [int(t) for t in predicted]
    if len(predicted) != config.target_length:
        raise ValueError(f"expected {config.target_length} predictions, got {len(predicted)}")
    bad = [i for i, t in enumerate(predicted) if t not in (ZERO, ONE)]
    if bad:
        raise InvalidPredictionError(
            f"prediction {bad[0]} is {TOKEN_NAMES.get(predicted[bad[0]], predicted[bad[0]])}, expected [0] or [1]"
        )
    states = [LatticeState.from_bits(predicted[s]) for s in config.state_mask_slices()]
    rule = None
    if config.task is Task.OSR:
        rule = RuleTable.from_outputs(predicted[-config.rule_size :], config.radius)
    return states, rule


def round_trip_check(sample, config: TaskConfig) -> bool:
    inst = encode(sample, config)
    states, rule = decode_state(inst.target_bits, config)
    if states != [sample.orbit[t] for t in config.target_states]:
        return False
    if config.task is Task.OSR and rule != sample.rule:
        return False
    return True
