"""Concave spline Gaussian process (CSGP) contextual bandits.

The package provides the C-spline feature map, the CSGP covariance, exact and
truncated posterior inference over spline coefficients, CSGP-UCB/Thompson
action selection with unconstrained baselines, test environments and an
experiment harness with regret reporting.
"""

from csgp.errors import (
    ConfigError,
    DomainError,
    InfeasibleTruncation,
    NotPositiveDefinite,
    SamplerError,
    SliceCollapse,
)
from csgp.splines import (
    SplineBasisSpec,
    build_basis,
    cspline_eval,
    mspline_eval,
    phi,
    phi_matrix,
    second_derivative,
)
from csgp.kernels import (
    BaseKernelSpec,
    CSGPKernel,
    FitBounds,
    base_kernel_eval,
    fit_base_hyperparams,
    fit_hyperparams,
    gram,
    kf,
    kf_beta,
    log_marginal_likelihood,
    make_csgp_kernel,
)
from csgp.posterior import (
    BanditHistory,
    CoefficientPosterior,
    beta_posterior,
    gp_posterior,
    unconstrained_reward_variance,
)
from csgp.tmvn import (
    SampleBatch,
    TruncatedGaussian,
    ess_sample,
    subgaussian_tail_check,
    trunc_mean,
    univariate_trunc_mean,
)
from csgp.policies import (
    AlphaSchedule,
    PolicyConfig,
    SamplerConfig,
    alpha,
    csgp_thompson_select,
    csgp_ucb_select,
    gp_ts_select,
    gp_ucb_select,
    sgp_ts_select,
    sgp_ucb_select,
)
from csgp.environments import (
    Environment,
    SyntheticSpec,
    observe,
    regret,
    synthetic_generate,
    warfarin_environment,
    warfarin_eval,
)
from csgp.harness import (
    ExperimentConfig,
    info_gain,
    regret_bound,
    run_episode,
    run_experiment,
)

__version__ = "0.1.0"
