"""Simulation toolkit for the particle-conserving East-West hopping chain."""

from .basis import (
    BasisError,
    SectorBasis,
    SymmetrySector,
    enumerate_sector,
    rank_state,
    symmetry_orbits,
)
from .hamiltonian import (
    OPEN,
    PERIODIC,
    BoundaryCondition,
    HamiltonianError,
    HoppingParams,
    SparseOperator,
    build_sparse,
    local_moves,
)

__version__ = "0.1.0"
