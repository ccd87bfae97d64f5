"""Shapley effects for Gaussian-linear models and their linear approximations."""

from .errors import *  # noqa: F401,F403  (re-exported)
from .exact import (
    CondVarTable,
    LinearModel,
    ShapleyVector,
    block_decompose,
    build_cond_var_table,
    closed_sobol_linear,
    conditional_variance_linear,
    shapley_linear,
    shapley_linear_blockwise,
)
from .gaussian import (
    CovMatrix,
    GaussianSpec,
    SampleBatch,
    conditional_moments,
    make_stream,
    sample_conditional,
    sample_marginal,
    validate_and_factor,
)
from .linearize import (
    BlackBoxModel,
    StepVector,
    default_steps,
    finite_diff_gradient,
    fit_linear_regression,
    linearize_pipeline,
    taylor_linear,
)

__version__ = "0.1.0"
