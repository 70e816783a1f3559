"""Spectral analysis of a lattice three-particle model with non-conserved particle number.

Modules: ``lattice`` (dispersion, coefficient functions), ``quadrature``
(graded torus grids), ``friedrichs`` (two-particle determinant and
threshold analysis), ``counting`` (Birman-Schwinger counting and the
finite-model oracle), ``asymptotics`` (limit operators and U(gamma)),
``cli`` (experiment runner).
"""

from .asymptotics import SobolevKernel, s_hat_eigenvalues, s_r_count, singular_part_count, u_coefficient
from .counting import assemble_bs_operator, assemble_direct_H, count_above, eigen_count_N, oracle_negative_count
from .errors import EfimovError
from .friedrichs import ThresholdKind, classify_threshold, critical_params, fredholm_delta
from .lattice import ModelParams, TrigPoly, epsilon, lambda_set
from .quadrature import build_grid, graded_grid

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "TrigPoly", "epsilon", "lambda_set", "build_grid", "graded_grid", "fredholm_delta",
    "classify_threshold", "critical_params", "ThresholdKind", "assemble_bs_operator", "assemble_direct_H",
    "count_above", "eigen_count_N", "oracle_negative_count", "SobolevKernel", "s_hat_eigenvalues",
    "u_coefficient", "s_r_count", "singular_part_count", "EfimovError",
]
