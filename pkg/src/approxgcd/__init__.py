"""Approximate polynomial GCD by variable projection.

Image representation (optimize the divisor or the cofactors) and kernel
representation (Sylvester low-rank approximation), all evaluated through
banded Cholesky factorizations of the weighted Gram matrix ``Gamma(P)``.
"""
from .poly import (
    INF, MosaicSpec, Polynomial, PolyTuple, WeightScheme, conv, hankel, matmultmat, mosaic_hankel,
    multmat, tuple_dist_sq, weighted_seminorm_sq,
)
from .wls import (
    IllConditionedGamma, KernelParam, LnEvaluation, SingularSystemError, VarproSystem, build_varpro,
    eval_cost, eval_gn, eval_grad, ls_to_ln_transform, solve_wln, solve_wls,
)
from .optim import IterLog, SolverOptions, minimize, normalize
from .image import (
    ImageProblem, SolveResult, angle_weights, egcd_degree_scan, g_ini, image_g_solve, image_h_solve,
    lsdivmult, solve_image,
)
from .kernel import (
    KernelResult, SingularGamma, SylvesterEmbedding, build_sylv1, build_sylv_full, gamma_singularity_probe,
    kernel_solve, sylv_mosaic_embed, verify_common_divisor,
)
from .analysis import (
    SymbolSpectrum, eigen_containment_check, gen_illcond_family, gen_speed_family, symbol_bounds,
    time_per_iteration,
)

__version__ = "0.1.0"
