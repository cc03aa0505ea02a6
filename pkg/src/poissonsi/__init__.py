"""Poisson stochastic integration in Banach spaces: sampling, norms, Malliavin calculus, Clark-Ocone."""
from .clark_ocone import SliceRefinement, project_adapted, reconstruct_residual
from .cylindrical import (
    CylindricalFunctional,
    NormalFormTooLarge,
    compensated,
    conditional_expectation,
    count,
    evaluate,
    expectation,
    mc_expectation,
    parse_expr,
    shift,
)
from .grid import (
    Cell,
    GridMismatch,
    GridSpace,
    MarkSet,
    PathBatch,
    PoissonPath,
    sample_batch,
    sample_given_total,
    sample_path,
)
from .ito import SemigroupSpec, convolution_maximal, ito_integral, maximal_path, mc_moment, stochastic_convolution
from .malliavin import derivative, divergence_duality, divergence_elementary, ibp_check, skorohod_vs_ito
from .norms import D, Intersect, NormSpec, S, Sum, parse_norm
from .processes import (
    EnsembleConfig,
    NormEstimate,
    SimpleAdaptedProcess,
    combined_norm,
    nu_p_norm,
    random_ensemble,
)
from .series import central_abs_moment, poisson_expect
from .spaces import Hilbert, WeightedLq

__version__ = "0.1.0"
