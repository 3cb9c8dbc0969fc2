"""Numpy fallback for the packed ECA kernels.

States are uint64 words with cell ``w`` at bit ``w``; rules are Wolfram
numbers (bit ``n`` is the output for big-endian neighborhood ``n``). Both
kernels require ``width <= 64`` and ``2*radius + 1 <= 6`` so that a state
and a rule each fit in one word.
"""

import numpy as np

_ONE = np.uint64(1)


def _rotations(states, width, radius):
    """Word-parallel neighbor planes, most significant neighbor first.

    Plane ``i`` holds, at bit ``w``, the cell ``x[(w - radius + i) % width]``.
    """
    full = np.uint64((1 << width) - 1) if width < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    planes = []
    for offset in range(-radius, radius + 1):
        s = offset % width
        if s == 0:
            planes.append(states)
        else:
            rot = (states >> np.uint64(s)) | (states << np.uint64(width - s))
            planes.append(rot & full)
    return planes


def _mux_tree(planes, rules, arity):
    # leaf n is all-ones where rule bit n is set; merge pairs on the least
    # significant neighbor first
    level = [np.uint64(0) - ((rules >> np.uint64(n)) & _ONE) for n in range(1 << arity)]
    for plane in reversed(planes):
        inv = ~plane
        level = [(plane & level[2 * i + 1]) | (inv & level[2 * i]) for i in range(len(level) // 2)]
    return level[0]


def evolve(rules, initial, width, radius, steps):
    """Orbits of ``len(initial)`` independent automata.

    Returns a ``(n, steps)`` uint64 array whose first column is ``initial``.
    """
    rules = np.ascontiguousarray(rules, dtype=np.uint64)
    state = np.ascontiguousarray(initial, dtype=np.uint64).copy()
    out = np.empty((state.shape[0], steps), dtype=np.uint64)
    arity = 2 * radius + 1
    full = np.uint64((1 << width) - 1) if width < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    for t in range(steps):
        out[:, t] = state
        if t + 1 < steps:
            state = _mux_tree(_rotations(state, width, radius), rules, arity) & full
    return out


def neighborhood_indices(rows, width, radius):
    """Big-endian neighborhood index of every cell, shape ``rows.shape + (width,)``."""
    rows = np.asarray(rows, dtype=np.uint64)
    bits = ((rows[..., None] >> np.arange(width, dtype=np.uint64)) & _ONE).astype(np.int64)
    idx = np.zeros(bits.shape, dtype=np.int64)
    for offset in range(-radius, radius + 1):
        idx = (idx << 1) | np.roll(bits, -offset, axis=-1)
    return idx


def presence_masks(rows, width, radius):
    """Bitmask of the neighborhood indices occurring in each row."""
    idx = neighborhood_indices(rows, width, radius)
    masks = np.zeros(idx.shape[:-1], dtype=np.uint64)
    for w in range(width):
        masks |= _ONE << idx[..., w].astype(np.uint64)
    return masks


def tally(rows, width, radius):
    """Per-neighborhood transition counts over consecutive rows of one orbit.

    Returns ``(counts, ones)``: how often neighborhood ``n`` was seen in a
    source row and how often its successor cell was 1.
    """
    rows = np.asarray(rows, dtype=np.uint64)
    size = 1 << (2 * radius + 1)
    if rows.shape[0] < 2:
        return np.zeros(size, np.int64), np.zeros(size, np.int64)
    idx = neighborhood_indices(rows[:-1], width, radius).ravel()
    nxt = ((rows[1:, None] >> np.arange(width, dtype=np.uint64)) & _ONE).astype(np.int64).ravel()
    counts = np.bincount(idx, minlength=size).astype(np.int64)
    ones = np.bincount(idx, weights=nxt, minlength=size).astype(np.int64)
    return counts, ones
