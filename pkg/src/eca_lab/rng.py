"""Counter-based SplitMix64 streams.

Every random quantity is a pure function of a 64-bit sub-seed and a word
counter, so samples can be generated in any order or in parallel and still
reproduce bit for bit on any platform:

* ``mix64`` is the SplitMix64 finalizer (a bijection on 64-bit words).
* ``derive_seed(master, tag, index) = mix64(mix64(mix64(master) ^ tag) ^ index)``.
* word ``i`` of stream ``sub`` is ``mix64(sub + (i + 1) * 0x9E3779B97F4A7C15)``.
* an ``n``-bit value is read from ``ceil(n / 64)`` consecutive words,
  least significant word first, then truncated to ``n`` bits.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(value):
    if isinstance(value, (int, np.integer)):
        return np.uint64(int(value) & _MASK64)
    return np.asarray(value, dtype=np.uint64)


def derive_seed(master, tag, index):
    """Sub-seed for item ``index`` of the stream family ``tag``."""
    return mix64(mix64(mix64(_u64(master)) ^ _u64(tag)) ^ _u64(index))


def stream_word(sub, i):
    """Word ``i`` of the stream seeded by ``sub``."""
    with np.errstate(over="ignore"):
        return mix64(_u64(sub) + np.uint64(i + 1) * GOLDEN)


def words_needed(nbits):
    return (nbits + 63) // 64


def random_bits(subs, nbits, first_word):
    """``nbits``-bit values (``nbits <= 64``) from word ``first_word`` of each stream."""
    if nbits > 64:
        raise ValueError("random_bits returns single words; use random_int for wider values")
    word = stream_word(subs, first_word)
    if nbits == 64:
        return word
    return word & np.uint64((1 << nbits) - 1)


def random_int(sub, nbits, first_word):
    """Arbitrary-width value as a Python int, same layout as :func:`random_bits`."""
    value = 0
    for j in range(words_needed(nbits)):
        value |= int(stream_word(sub, first_word + j)) << (64 * j)
    return value & ((1 << nbits) - 1)
