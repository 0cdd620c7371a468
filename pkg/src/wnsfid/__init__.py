"""Weighted null-space fitting (WNSF) for linear system identification.

Semi-parametric estimation of a rational dynamic model from open- or
closed-loop data: a high-order ARX model fitted by least squares is reduced
to the parametric model through Toeplitz-structured weighted least squares,
without ever estimating a parametric noise model.
"""

from ._kernels import using_numba
from .analysis import (
    CovarianceReport,
    asymptotic_covariance,
    finite_order_information,
    fit_metric,
    impulse_fit,
    mse_metric,
    regressor_covariance_limit,
    sensitivity,
    theta_from_model,
    true_arx_coefficients,
)
from .arx import ArxEstimate, build_regressors, default_order, estimate_arx
from .errors import (
    ConfigError,
    GridResolutionError,
    IdentifiabilityError,
    InsufficientDataError,
    InvalidModelError,
    RankDeficiencyError,
    SingularFrequencyError,
    UndefinedFitError,
    UnstableLoopError,
    WeightingBreakdownError,
    WnsfError,
)
from .harness import (
    ExperimentConfig,
    RunRecord,
    aggregate,
    build_config,
    emit_outputs,
    run_monte_carlo,
)
from .lti import (
    NoiseModelSpec,
    Polynomial,
    RationalTransferFunction,
    TimeSeriesDataset,
    filter_apply,
    frequency_response,
    gaussian_white,
    impulse_response,
    poly_mul,
    random_fir_noise_model,
    simulate_closed_loop,
    simulate_open_loop,
)
from .wnsf import (
    ModelStructure,
    ThetaParams,
    WnsfResult,
    build_weighting,
    fully_parametric_wnsf,
    iterate_wnsf,
    nullspace_regressor,
    nullspace_regressor_full,
    residual_jacobian,
    residual_jacobian_full,
    step2_ls,
    step3_wls,
    toeplitz_from_series,
)

__version__ = "0.1.0"
