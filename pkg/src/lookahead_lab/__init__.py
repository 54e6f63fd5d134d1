"""Planning and learning with multi-step lookahead via adaptive batching policies."""
from ._validation import EnumerationInfeasible, OracleInfeasible
from .baselines import (
    ABPAgent,
    Assumption1Report,
    MarkovAgent,
    MPCAgent,
    check_assumption1,
    evaluate_agent,
    markov_optimal,
    mpc_backward_values,
    run_mpc_episode,
)
from .envs import (
    EnvSpec,
    build_claim1_tree,
    build_claim2_tree_and_line,
    build_delayed_env,
    build_random_mdp,
)
from .learner import (
    ALUCB,
    LearnerConfig,
    OptimisticTables,
    RegretRecord,
    SampleStore,
    bonus,
    compute_optimistic_tables,
    empirical_stats,
    log_term,
    run_episode,
    run_learning,
)
from .lookahead import (
    BatchSummary,
    LookaheadInfo,
    compute_summary,
    enumerate_lookaheads,
    extract_lookahead,
    extract_policy,
    q_star,
)
from .mdp import (
    EpisodeRealization,
    FactorGroup,
    StepLaw,
    TabularMDP,
    load_mdp,
    marginal_law,
    sample_episode,
    save_mdp,
    step,
    validate_mdp,
)
from .planner import (
    ABPPlanner,
    ABPPolicy,
    ExpectationConfig,
    ValueTable,
    evaluate_abp,
    expected_q_star,
    plan_fixed_batching,
    plan_optimal_abp,
    solve_augmented_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "ABPAgent",
    "ABPPlanner",
    "ABPPolicy",
    "ALUCB",
    "Assumption1Report",
    "BatchSummary",
    "bonus",
    "build_claim1_tree",
    "build_claim2_tree_and_line",
    "build_delayed_env",
    "build_random_mdp",
    "check_assumption1",
    "compute_optimistic_tables",
    "compute_summary",
    "empirical_stats",
    "enumerate_lookaheads",
    "EnumerationInfeasible",
    "EnvSpec",
    "EpisodeRealization",
    "evaluate_abp",
    "evaluate_agent",
    "ExpectationConfig",
    "expected_q_star",
    "extract_lookahead",
    "extract_policy",
    "FactorGroup",
    "LearnerConfig",
    "load_mdp",
    "log_term",
    "LookaheadInfo",
    "marginal_law",
    "markov_optimal",
    "MarkovAgent",
    "mpc_backward_values",
    "MPCAgent",
    "OptimisticTables",
    "OracleInfeasible",
    "plan_fixed_batching",
    "plan_optimal_abp",
    "q_star",
    "RegretRecord",
    "run_episode",
    "run_learning",
    "run_mpc_episode",
    "sample_episode",
    "SampleStore",
    "save_mdp",
    "solve_augmented_oracle",
    "step",
    "StepLaw",
    "TabularMDP",
    "validate_mdp",
    "ValueTable",
]
