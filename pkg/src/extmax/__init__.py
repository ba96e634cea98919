"""Structure-preserving discretizations of Maxwell-type evolutionary systems.

Discrete grad/curl/div complexes with exact composition identities, block
operators built from them, causal time integrators, and the transfer,
Dirac-equivalence and potential checks built on top.
"""

__version__ = "0.1.0"

from .block_systems import BlockOp, BlockTag, assemble_block, hamiltonian_transform, verify_annihilation
from .dirac import SpinorField, verify_dirac_equivalence
from .discrete_ops import Backend, ComplexOps, GridSpec, SparseOp, build_complex
from .evo_solver import (
    CrankNicolson,
    ExponentialPropagator,
    ImplicitEuler,
    SourceTerm,
    TimeGrid,
    Trajectory,
)
from .exceptions import *  # noqa: F401,F403
from .material_laws import MaterialLaw, eddy_current_preset, verify_H1_H2
from .pointwise import PointwiseOperator, PointwiseWeight
from .potentials_maxwell_dirac import solve_maxwell_dirac, solve_potential, verify_potential
from .systems_transfer import solve_extended, solve_gem, solve_maxwell

__all__ = [
    "__version__",
    "Backend",
    "BlockOp",
    "BlockTag",
    "ComplexOps",
    "CrankNicolson",
    "ExponentialPropagator",
    "GridSpec",
    "ImplicitEuler",
    "MaterialLaw",
    "PointwiseOperator",
    "PointwiseWeight",
    "SourceTerm",
    "SparseOp",
    "SpinorField",
    "TimeGrid",
    "Trajectory",
    "assemble_block",
    "build_complex",
    "eddy_current_preset",
    "hamiltonian_transform",
    "solve_extended",
    "solve_gem",
    "solve_maxwell",
    "solve_maxwell_dirac",
    "solve_potential",
    "verify_H1_H2",
    "verify_annihilation",
    "verify_dirac_equivalence",
    "verify_potential",
]
