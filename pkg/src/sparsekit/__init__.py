"""Sparse coding, dictionary learning and patch-based image restoration."""

from .core import (
    DegeneratePathError,
    ElasticNet,
    GroupL2,
    GroupStructure,
    L0,
    L1,
    Lq,
    NumericalError,
    SparseCode,
    SparseKitError,
    WeightedL1,
    hard_threshold,
    lasso_kkt_check,
    lasso_objective,
    project_l1_ball,
    psnr,
    soft_threshold,
)
from .greedy import Both, GramCache, MaxNonzeros, ResidualSq, iht, mp, omp, omp_batch, omp_masked
from .convex import (
    AtLambda,
    AtNorm,
    AtResidual,
    FullPath,
    RegPath,
    SolverOptions,
    cd_lasso,
    homotopy,
    lasso_batch,
    prox_grad,
    solve,
)

__all__ = [
    "DegeneratePathError",
    "ElasticNet",
    "GroupL2",
    "GroupStructure",
    "L0",
    "L1",
    "Lq",
    "NumericalError",
    "SparseCode",
    "SparseKitError",
    "WeightedL1",
    "hard_threshold",
    "lasso_kkt_check",
    "lasso_objective",
    "project_l1_ball",
    "psnr",
    "soft_threshold",
    "Both",
    "GramCache",
    "MaxNonzeros",
    "ResidualSq",
    "iht",
    "mp",
    "omp",
    "omp_batch",
    "omp_masked",
    "AtLambda",
    "AtNorm",
    "AtResidual",
    "FullPath",
    "RegPath",
    "SolverOptions",
    "cd_lasso",
    "homotopy",
    "lasso_batch",
    "prox_grad",
    "solve",
]

__version__ = "0.1.0"
