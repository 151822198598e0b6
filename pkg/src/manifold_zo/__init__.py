"""Zeroth-order optimization on embedded Riemannian manifolds.

Gradient and Hessian estimates are built from function values alone by
Gaussian smoothing on tangent spaces; the solvers consume those estimates
on spheres, Stiefel and Grassmann manifolds, and the SPD cone.
"""

from .manifolds import (
    SPD,
    Euclidean,
    FeasibilityError,
    Grassmann,
    Manifold,
    Sphere,
    Stiefel,
    TheoryConstants,
    curvature_factor,
)
from .oracles import ZeroOrderOracle
from .estimators import (
    GradientEstimate,
    HessianOperator,
    estimate_gradient,
    estimate_hessian,
    estimator_diagnostics,
    operator_norm,
)
from .prox import ProxResult, solve_prox_tangent
from .cubic import CubicSolution, solve_cubic
from .problems import (
    BenchmarkProblem,
    karcher_mean_reference,
    make_karcher,
    make_kpca,
    make_procrustes,
    make_rayleigh,
    make_sparse_pca,
    with_noise,
)
from .solvers import (
    RunTrace,
    SolverConfig,
    StopRule,
    ball_projected_sgd,
    cubic_newton,
    estimate_constants,
    gradient_descent,
    proximal_gradient,
    stochastic_gradient_descent,
)

__version__ = "0.1.0"
