"""First-passage percolation on essentially one-dimensional periodic graphs.

Passage times, regeneration-based estimation of the time and length
constants, Monte Carlo checks of the limit theorems and exact couplings of
infections started from different sets.
"""

from .periodic_graph import PeriodCell, VertexRef, EdgeRef, build_tube, build_cylinder, build_line, cell_from_spec
from .passage_times import Distribution, Exponential, Uniform, Discrete, Mixture, Scaled, WeightField, distribution_from_spec
from .fpp_core import travel_time, time_and_length, geodesic, infected_set, travel_profile, brute_force_travel_time
from .regeneration import RegenParams, choose_params, optimize_params, scan_regenerations
from .estimation import ConstantsEstimate, estimate_constants, estimate_from_field

__version__ = "0.1.0"

__all__ = [
    "PeriodCell",
    "VertexRef",
    "EdgeRef",
    "build_tube",
    "build_cylinder",
    "build_line",
    "cell_from_spec",
    "Distribution",
    "Exponential",
    "Uniform",
    "Discrete",
    "Mixture",
    "Scaled",
    "WeightField",
    "distribution_from_spec",
    "travel_time",
    "time_and_length",
    "geodesic",
    "infected_set",
    "travel_profile",
    "brute_force_travel_time",
    "RegenParams",
    "choose_params",
    "optimize_params",
    "scan_regenerations",
    "ConstantsEstimate",
    "estimate_constants",
    "estimate_from_field",
    "__version__",
]
