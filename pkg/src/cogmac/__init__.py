"""Cognitive medium access: channel-sensing strategies and their simulation."""
from .belief import (
    BetaBelief,
    DegenerateEvidenceError,
    GridBelief,
    belief_from_prior,
    posterior_mean,
    update_posterior,
)
from .core_model import (
    BetaPrior,
    BlockConfig,
    ChannelRealization,
    GridPrior,
    ModelError,
    NoOpportunityError,
    StreamFactory,
    ThetaVector,
    generate_block,
    sample_theta,
)
from .harness import (
    AggregateStats,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    emit_results,
    load_config,
    run_experiment,
    run_multi_user,
    run_single_user,
)
from .multi_user import (
    DecayConstants,
    MixedStrategy,
    centralized_loss,
    contention_resolve,
    decay_constants,
    expected_total_throughput,
    nash_strategy,
    optimal_symmetric_strategy,
    rule2_strategy,
    rule3_strategy,
)
from .planning import (
    GittinsParams,
    GittinsTruncationWarning,
    PlanningBudgetError,
    PlanResult,
    gittins_index,
    gittins_policy,
    gittins_table,
    one_known_channel_policy,
    optimal_value,
    stopping_index,
)
from .single_user import (
    LossReport,
    compute_loss,
    kl_bernoulli,
    myopic_strategy,
    random_strategy,
    regret_lower_bound_coefficient,
    rule1_strategy,
    stay_with_winner_strategy,
    ucb_index,
)

__version__ = "0.1.0"
