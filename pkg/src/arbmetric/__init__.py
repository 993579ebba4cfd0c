"""Bayes-optimal reconstruction under arbitrary additive error metrics.

GAMP reduces a noisy linear mixing problem ``y = Phi x + noise`` to scalar
Gaussian channels ``q_j = x_j + N(0, mu)``; the estimators then minimize the
posterior expected error of any pointwise metric per component.
"""

from .baselines import CosampOptions, cosamp
from .errors import (
    ConfigError,
    DegeneratePriorError,
    DimensionError,
    DomainError,
    GampDiverged,
    MetricError,
    PrecisionWarning,
    UnsupportedPriorError,
)
from .estimators import (
    LpHeuristic,
    MetricOptimal,
    SupportThreshold,
    WienerLinf,
    apply_estimator,
    lp_estimate,
    metric_optimal,
    metric_optimal_scalar,
    parse_estimator,
    support_estimate,
    support_threshold,
    wiener_linf,
)
from .gamp import GampOptions, GampOutput, gamp_run, input_denoiser, output_step
from .harness import (
    ExperimentConfig,
    TrialRecord,
    gen_matrix,
    preset_config,
    run_experiment,
    sample_channel,
    sample_signal,
)
from .limits import LimitQuery, mmae_limit, mmsue_limit, mmue_limit, mmue_monte_carlo
from .model import (
    AWGN,
    Absolute,
    ErrorMetric,
    Pointwise,
    Poisson,
    PowP,
    SparseGaussian,
    SparseWeibull,
    Squared,
    SupportXor,
    Tabulated,
    eval_linf,
    eval_metric,
    parse_metric,
)
from .posterior import (
    MixedPosterior,
    ScalarChannelOutput,
    nonzero_probability,
    posterior,
    posterior_batch,
    posterior_moments,
    posterior_quantile,
)

__version__ = "0.1.0"
