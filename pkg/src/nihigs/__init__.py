"""Digital HIGS control of negative-imaginary plants: simulation and checks."""

from .higs import Flavor, HigsParams, HigsState, Mode
from .multi_higs import MultiHigs, multi_storage, step_multi
from .plant import ContinuousStateSpace, DiscreteStateSpace, mems_plant, zoh_discretize

__version__ = "0.1.0"

__all__ = [
    "ContinuousStateSpace",
    "DiscreteStateSpace",
    "Flavor",
    "HigsParams",
    "HigsState",
    "Mode",
    "MultiHigs",
    "mems_plant",
    "multi_storage",
    "step_multi",
    "zoh_discretize",
    "__version__",
]
