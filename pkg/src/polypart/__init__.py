"""Global optimization of mixed-integer programs with multilinear terms.

Two-stage scheme: sequential bound contraction with an objective cutoff at a
feasible incumbent, then iteratively refined piecewise McCormick relaxations
solved as MILPs with lazily separated tangent cuts for squared terms.
"""

from .driver import (SolveReport, SolverConfig, bc_percent, find_incumbent,
                     gap_percent, solve)
from .model import Incumbent, Model, ModelError, normalize
from .parser import ParseError, parse, write
from .relaxation import PartitionMap, build_relaxation
from .tighten import TightenConfig, tighten_bounds

__all__ = [
    "Incumbent",
    "Model",
    "ModelError",
    "ParseError",
    "PartitionMap",
    "SolveReport",
    "SolverConfig",
    "TightenConfig",
    "bc_percent",
    "build_relaxation",
    "find_incumbent",
    "gap_percent",
    "normalize",
    "parse",
    "solve",
    "tighten_bounds",
    "write",
]

__version__ = "0.1.0"
