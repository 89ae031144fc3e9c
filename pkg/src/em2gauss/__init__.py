"""EM for balanced two-component Gaussian mixtures with known covariance.

Population EM to quadrature precision with closed-form contraction-rate
certificates, a seeded sampling layer with a Monte Carlo oracle, the
finite-sample pipeline (quartile centering, power-iteration bootstrap,
stabilized sample EM), and experiment drivers behind a CLI.
"""

from .geometry import (
    CovarianceModel,
    DimensionMismatch,
    mahalanobis_inner,
    mahalanobis_norm,
    unwhiten,
    whiten,
)
from .pipeline import (
    BootstrapState,
    CenterEstimate,
    GeneratorSource,
    InitializationError,
    NoSignalError,
    PipelineConfig,
    PipelineError,
    PipelineResult,
    PoolSource,
    PreconditionError,
    bootstrap_init,
    empirical_covariance,
    estimate_center,
    quartile,
    run_pipeline,
    sample_update,
)
from .population import (
    DEFAULT_QUAD,
    BasinError,
    GaussHermite,
    Iterate,
    MixtureSpec,
    RateCertificate,
    Trajectory,
    TrajectoryPoint,
    component_update,
    folded_normal_mean,
    make_iterate,
    rate,
    rate_1d,
    run,
    tanh_expectation,
    tanh_slope_moment,
    update,
    update_1d,
)
from .sampling import SampleBatch, draw, load_batch, mc_update, rng_stream, save_batch, stabilize

__version__ = "0.1.0"

__all__ = [
    "CovarianceModel",
    "DimensionMismatch",
    "mahalanobis_inner",
    "mahalanobis_norm",
    "whiten",
    "unwhiten",
    "GaussHermite",
    "DEFAULT_QUAD",
    "MixtureSpec",
    "Iterate",
    "RateCertificate",
    "Trajectory",
    "TrajectoryPoint",
    "BasinError",
    "folded_normal_mean",
    "update_1d",
    "tanh_expectation",
    "tanh_slope_moment",
    "component_update",
    "make_iterate",
    "update",
    "rate_1d",
    "rate",
    "run",
    "SampleBatch",
    "draw",
    "stabilize",
    "mc_update",
    "save_batch",
    "load_batch",
    "rng_stream",
    "PipelineError",
    "PreconditionError",
    "InitializationError",
    "NoSignalError",
    "CenterEstimate",
    "BootstrapState",
    "PipelineConfig",
    "PipelineResult",
    "GeneratorSource",
    "PoolSource",
    "quartile",
    "estimate_center",
    "empirical_covariance",
    "sample_update",
    "bootstrap_init",
    "run_pipeline",
]
