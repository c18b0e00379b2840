"""Penalty functionals and doubling of variables for path-dependent Hamilton-Jacobi equations."""

from .calculus import CiDerivative, Functional, check_non_anticipative, ci_derivative_fd, lphi_constant
from .control import (
    BellmanData,
    Hamiltonian,
    PathNotInFamily,
    ValueTable,
    as_functional,
    bellman_h,
    bellman_hamiltonian,
    check_assumption_A2,
    check_assumption_A3,
    dpp_residual,
    solve_dp,
)
from .doubling import (
    BoundaryViolation,
    DoublingConfig,
    DoublingReport,
    Maximizer,
    comparison_verdict,
    lemma_bounds,
    maximize_phi,
    phi_eps_delta,
    proof_estimates,
)
from .paths import (
    FamilyTooLarge,
    GridPath,
    GridSpec,
    PathFamily,
    PointedPath,
    enumerate_family,
    lip_constant,
    lip_extension,
    stop,
    sup_dist_upto,
)
from .penalty import PenaltyEval, PenaltyParams, check_derivative_bounds, check_lower_bounds, slice_functional, v1, v2, v3, vL

__version__ = "0.1.0"
