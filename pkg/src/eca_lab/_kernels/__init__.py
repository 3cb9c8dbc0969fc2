"""Packed ECA kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built and ``ECA_LAB_PURE`` is not
set; otherwise the numpy implementation is loaded. Both expose ``evolve``,
``neighborhood_indices``, ``presence_masks`` and ``tally`` with identical
results.
"""

import os

from . import _pure

MAX_WIDTH = 64
MAX_RADIUS = 2

ext = None
if not os.environ.get("ECA_LAB_PURE"):
    try:
        from . import _ext as ext
    except ImportError:  # extension not built
        ext = None

_impl = ext if ext is not None else _pure
BACKEND = "cython" if ext is not None else "numpy"

evolve = _impl.evolve
neighborhood_indices = _impl.neighborhood_indices
presence_masks = _impl.presence_masks
tally = _impl.tally


def supports(width, radius):
    """Whether the packed kernels can handle this lattice."""
    return width <= MAX_WIDTH and 1 <= radius <= MAX_RADIUS


def backends():
    """Available kernel modules keyed by name (numpy is always present)."""
    found = {"numpy": _pure}
    if ext is not None:
        found["cython"] = ext
    return found
