"""Anisotropic (Finsler) p-Laplace energies on rectangular grids.

Modules: ``norms`` (H, F, A), ``bregman`` (Bregman distances and their
two-sided estimates), ``energy`` (discrete Q, residuals, brackets, Morrey
norms), ``variational`` (Hardy constants, capacities, Maz'ya ratios) and
``cli`` (batch runner).
"""

from .norms import ExponentPair, NormFamily
from .grid import GridDomain, GridFunction
from .variational import CapacityProblem, HardyProblem, SolverConfig, SolveResult

__version__ = "0.1.0"

__all__ = [
    "ExponentPair",
    "NormFamily",
    "GridDomain",
    "GridFunction",
    "HardyProblem",
    "CapacityProblem",
    "SolverConfig",
    "SolveResult",
]
