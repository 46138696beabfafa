"""expandlab: degeneracy certificates, fold verification, special-form
recovery, and box-counting dimension experiments for smooth real functions."""

from .degeneracy import (
    DegeneracyReport,
    ThresholdReport,
    assemble_J,
    aux_trivariate,
    classify,
    gamma_nondegenerate,
    kappa,
    mixed_hessian,
    monge_ampere,
    numeric_corank,
    rho,
    surface_distance_check,
    thresholds,
)
from .dimlab import (
    DimEstimate,
    box_counts,
    covered_fraction,
    dim_estimate,
    expansion_experiment,
    image_quantize,
)
from .expr import (
    DomainError,
    Expr,
    FunctionSpec,
    ParseError,
    ZeroPolicy,
    differentiate,
    evaluate,
    is_identically_zero,
    parse,
    simplify,
    to_string,
)
from .foldgeom import FoldReport, det_Dg, fold_verify, implicit_phi
from .fractal import (
    CantorSpec,
    PointSet1D,
    cantor_points,
    digit_points,
    dimension_to_ratio,
    similarity_dimension,
)
from .specialform import (
    RecoveryResult,
    SampledFunction1D,
    quadrature,
    recover_bivariate,
    recover_trivariate,
)

__version__ = "0.1.0"
