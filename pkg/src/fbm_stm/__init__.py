"""Mean-square stability of the stochastic theta method for SDEs driven by
fractional Brownian motion: exact fBm sampling, log-domain Monte Carlo,
closed-form stability predicates and the special functions behind them."""

from .errors import (
    CapExceeded,
    CirculantEmbeddingFailure,
    ConfigError,
    DegenerateDenominator,
    DomainError,
    EnsembleError,
    FbmStmError,
    ImplicitSolveFailure,
    InsufficientData,
    NumericalFailure,
    NumericalOverflowWarning,
    PoleError,
    QuadratureFailure,
    RangeExceeded,
)
from .fbm import (
    FbmGrid,
    IncrementBlock,
    SamplingMethod,
    autocovariance,
    covariance_matrix,
    cumulative_path,
    increment_covariance,
    sample_increment_paths,
    sample_increments,
)
from .lab import (
    EnsembleConfig,
    MeanSquareSeries,
    StabilityVerdict,
    classify,
    log_factor_covariance,
    product_moment_exact,
    run_ensemble,
    run_exact_ensemble,
    slln_diagnostic,
)
from .models import (
    AssumptionConstants,
    LinearTestModel,
    ModelKind,
    NonlinearModel,
    check_assumption,
    cubic_drift,
    cubic_drift_sin_diffusion,
    exact_mean_square_linear,
    exact_solution_linear,
    linear_as_nonlinear,
)
from .special import (
    GaussianScalar,
    gaussian_raw_moment,
    gaussian_raw_moment_log,
    kummer_phi,
    log_gamma,
    parabolic_u,
)
from .stm import (
    LogSignedState,
    ThetaScheme,
    Trajectory,
    alpha_n,
    beta_n,
    simulate_linear,
    simulate_nonlinear,
)
from .theory import (
    Guarantee,
    Source,
    TheoremVerdict,
    brownian_classify,
    continuous_stability,
    envelope_bound,
    remark_p_threshold,
    sigma_tilde_sq,
    theorem1_classify,
    theorem2_classify,
)

__version__ = "0.1.0"
