"""Numerical laboratory for dislocation energies with mixed growth."""

__version__ = "0.1.0"

from .core import (BurgersLattice, DislocationMeasure, ElasticTensor, EnergyDensity,
                   MixedGrowthParams, decompose_threshold, dist_so2, energy_w,
                   hessian_at_identity, mixed_growth, mixed_triangle_ratio)
from .spectral import FourierField, fejer, fejer_majorant, lp_project, shell_of, sobolev_norm, stripe_of
from .bbsolver import BBParams, naive_div_inverse, nonlinear_approx, linear_step, primal_decompose, solve_div
from .cell import CellProblem, fundamental_strain, prelog_limit, psi_scaled, psi_variant_tilde, solve_cell
from .envelope import EnvelopeProblem, brute_force_envelope, convexity_probe, relaxed_density
from .gammalab import (StrainField, build_recovery, eval_e_crit, eval_e_eps, h_minus_one_residual,
                       liminf_shell_diagnostic, optimal_rotation_mixed, rescaled_strain)
