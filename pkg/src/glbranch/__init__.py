"""Ginzburg-Landau bifurcation toolkit on discretized closed surfaces.

Builds discrete exterior-calculus meshes (flat torus, icosphere), equips
them with constant-curvature U(1) connections, and constructs irreducible
non-minimizing solutions of the Ginzburg-Landau equations as bifurcation
branches off the normal phase, together with energy-minimization threshold
experiments and independent residual verification.
"""

__version__ = "0.1.0"

from .bundle import (
    GaugeField,
    OneForm,
    Section,
    chern_number,
    coulomb_project,
    covariant_derivative,
    gauge_transform,
    green_solve,
    laplacian0,
    make_constant_curvature_field,
    transported_midpoint,
)
from .energy import (
    EnergyReport,
    energy_gradient,
    gl_energy,
    minimize,
    modified_energy,
    normal_phase_energy,
    threshold_scan,
)
from .geometry import DecMesh, build_icosphere, build_torus
from .reduction import (
    BranchPoint,
    CouplingParams,
    continue_branch,
    contraction_t_cap,
    current_j,
    epsilon_of,
    fixed_point_psi,
    kernel_one_form,
    leading_order,
    newton_polish,
    solve_A,
    solve_branch_point,
)
from .spectral import SpectralData, eigensolve, eigenspace_basis
from .verify import (
    VerificationReport,
    max_principle_report,
    weak_residuals,
    weitzenboeck_check,
)

__all__ = [
    "__version__",
    "DecMesh", "build_torus", "build_icosphere",
    "GaugeField", "Section", "OneForm",
    "make_constant_curvature_field", "gauge_transform", "chern_number",
    "covariant_derivative", "transported_midpoint", "laplacian0",
    "coulomb_project", "green_solve",
    "SpectralData", "eigensolve", "eigenspace_basis",
    "CouplingParams", "BranchPoint", "current_j", "solve_A",
    "fixed_point_psi", "epsilon_of", "leading_order", "kernel_one_form",
    "solve_branch_point", "continue_branch", "newton_polish",
    "contraction_t_cap",
    "EnergyReport", "gl_energy", "modified_energy", "energy_gradient",
    "minimize", "threshold_scan", "normal_phase_energy",
    "VerificationReport", "weak_residuals", "max_principle_report",
    "weitzenboeck_check",
]
