"""Low-rank bilinear contextual bandits with a nuclear-norm estimator."""
from .core import (
    ActionSpace,
    AlgorithmConfig,
    ContextBatch,
    History,
    RepresentationMatrix,
    RewardSample,
    context_sum,
    expected_reward,
)
from .environments import (
    BilinearEnv,
    MultiArmEnv,
    PricingEnv,
    fit_pseudo_ground_truth,
    lift_polynomial,
    make_lowrank_theta,
    make_sparse_theta,
    pricing_to_bilinear,
    reduce_contextual_multiarm,
    reduce_multiarm,
)
from .errors import *  # noqa: F401,F403
from .estimator import (
    EstimateReport,
    SolverSettings,
    bootstrap_lambda0,
    lambda_schedule,
    loss_and_gradient,
    objective,
    solve_nuclear_ls,
    svt,
    zero_threshold,
)
from .harness import (
    AggregateReport,
    TrialMetrics,
    aggregate,
    clairvoyant_action,
    loo_prediction_error,
    replay_gain,
    run_replay_trial,
    run_trial,
    run_trials,
)
from .interpret import SpectralReport, normalize_loadings, scaled_action_loadings, spectral_decompose
from .policy import PolicyState, exploration_rounds, expand_action_space, is_exploration_round, perturb, step

__version__ = "0.1.0"
