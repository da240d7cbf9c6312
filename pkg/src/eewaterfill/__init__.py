"""Multi-cell multi-carrier downlink power allocation by iterative water-filling.

Subpackages: `model` (types, units, power model), `topology` (hex grid,
drops, scheduling), `channel` (gains, CINR, prices), `solver` (water-filling
closed forms, bisection, ratio iteration, duals), `engine` (outer loop,
metrics, CSV), `gridsearch` (exhaustive oracle), `cli` (command line).
"""

from .model import (
    PowerAllocation,
    PowerModelParams,
    SubcarrierGrid,
    Tier,
    TransmitterId,
    consumed_power,
    dbm_to_watts,
    sector_consumed_power,
    watts_to_dbm,
)

__version__ = "0.1.0"
