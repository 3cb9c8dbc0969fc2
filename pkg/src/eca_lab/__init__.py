"""Elementary cellular automata: simulation, rule inference, datasets and
transformer next-state experiments."""

from .eca import (
    LatticeError,
    LatticeState,
    Orbit,
    RuleTable,
    decode_rule,
    encode_rule,
    global_step,
    local_step,
    orbit,
)

__version__ = "0.1.0"
