"""Viscoelastic boundary control: extended Maxwell media on triangulated 2D domains.

The package simulates the first-order reduced system (velocity + per-branch
viscous strain tensors) of an n-branch Maxwell solid, certifies its energy
dissipation and exponential decay numerically, and synthesizes boundary
tractions steering the system between prescribed states by a Russell-type
double-solve construction.
"""

from vebc.tensors import (
    Stiffness,
    MaterialModel,
    kelvin_vec,
    kelvin_mat,
    isotropic_stiffness,
    validate_material,
    branch_exponential,
    load_material,
)
from vebc.mesh import Mesh, build_unit_square_mesh
from vebc.fem import DiscreteOperators, RSState, assemble_operators, schur_matrix
from vebc.evolution import EvolutionConfig, Trajectory, RSSolver, reconstruct_ad
from vebc.energy import DecayReport, energy, higher_energies, dissipation_residual, fit_decay
from vebc.control import (
    ControlResult,
    apply_U,
    apply_Utilde,
    apply_F,
    estimate_contraction,
    solve_initial_data,
    synthesize_control,
    verify_control,
)
from vebc.bvs import relaxation_stress, solve_bvs, partial_control

__version__ = "0.1.0"

__all__ = [
    "Stiffness",
    "MaterialModel",
    "kelvin_vec",
    "kelvin_mat",
    "isotropic_stiffness",
    "validate_material",
    "branch_exponential",
    "load_material",
    "Mesh",
    "build_unit_square_mesh",
    "DiscreteOperators",
    "RSState",
    "assemble_operators",
    "schur_matrix",
    "EvolutionConfig",
    "Trajectory",
    "RSSolver",
    "reconstruct_ad",
    "DecayReport",
    "energy",
    "higher_energies",
    "dissipation_residual",
    "fit_decay",
    "ControlResult",
    "apply_U",
    "apply_Utilde",
    "apply_F",
    "estimate_contraction",
    "solve_initial_data",
    "synthesize_control",
    "verify_control",
    "relaxation_stress",
    "solve_bvs",
    "partial_control",
]
