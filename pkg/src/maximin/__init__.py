"""Inference for group distributionally robust (maximin) regression effects.

The package estimates the simplex-weighted aggregation of per-group
high-dimensional regression models that is robust to adversarial mixing
of the group outcome distributions under covariate shift, and builds
confidence intervals for linear functionals of the aggregate through a
perturb-and-union sampling procedure.
"""

__version__ = "0.1.0"

from .aggregation import (
    MaximinEffect,
    SimplexWeight,
    magging,
    maximin_effect,
    maximin_projection,
    min_quadratic_simplex,
    reward_estimated,
    reward_exact,
)
from .debias import (
    FunctionalEstimate,
    ProjectionDirection,
    debiased_linear_functional,
    projection_direction_gamma,
    projection_direction_linear,
    projection_direction_lowdim,
)
from .densenet import (
    AggregatedCI,
    SampledDraw,
    aggregate_ci,
    densenet_ci,
    draw_samples,
    index_set,
    instability_measure,
    sampled_interval,
    select_delta,
    test_null,
)
from .gamma import (
    GammaEstimate,
    GammaTuning,
    MultiSourceData,
    compute_d0,
    gamma_hat_covshift,
    gamma_hat_known_sigma,
    gamma_hat_noshift,
)
from .lasso import LassoFit, cv_lasso, cv_select_lambda, default_lambda, lasso_fit
from .linalg import mvn_sample, pi_index, psd_project, sym_sqrt, unvecl, vecl
from .rng import RngStream
