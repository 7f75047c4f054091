"""Driven-dissipative arrays of weakly nonlinear coupled cavities.

Steady states of Kerr-Hubbard and Jaynes-Cummings-Hubbard arrays from the
Lindblad master equation or wavefunction Monte Carlo, and continuous-variable
entanglement witnesses evaluated on their ladder moments.
"""

from .hilbert import CapacityError, OccupationBasis, TruncationScheme, basis_dimension, enumerate_basis
from .master import DensityMatrix, SingularSystemError, density_moments, evolve, steady_state
from .model import HBAR, HamiltonianKind, Qubit, SystemSpec, chain_couplings, ring_couplings
from .moments import MissingMomentError, MomentTable
from .wfmc import TrajectoryConfig, prepare, run_ensemble, run_trajectory
from .witness import (
    WitnessResult,
    bipartite_S,
    bipartite_S_optimized,
    quadripartite_I,
    quadripartite_optimized,
)

__version__ = "0.1.0"

__all__ = [
    "HBAR",
    "CapacityError",
    "DensityMatrix",
    "HamiltonianKind",
    "MissingMomentError",
    "MomentTable",
    "OccupationBasis",
    "Qubit",
    "SingularSystemError",
    "SystemSpec",
    "TrajectoryConfig",
    "TruncationScheme",
    "WitnessResult",
    "basis_dimension",
    "bipartite_S",
    "bipartite_S_optimized",
    "chain_couplings",
    "density_moments",
    "enumerate_basis",
    "evolve",
    "prepare",
    "quadripartite_I",
    "quadripartite_optimized",
    "ring_couplings",
    "run_ensemble",
    "run_trajectory",
    "steady_state",
]
