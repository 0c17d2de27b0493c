"""Exact simulation and statistical verification of random walks whose jump
rates are driven by independent birth-and-death chains on each lattice site."""

from .bdp import (
    BDParams,
    BDTrajectory,
    DistTable,
    RateFunction,
    check_ergodic,
    check_strong_ergodic,
    hitting_second_moment,
    hitting_time_mean,
    make_rate_function,
    modified_params,
    modified_stationary,
    rate_harmonic,
    rate_one,
    rate_powers_of_two,
    ratio_sequences,
    sample_stationary,
    simulate_bdp,
    stationary_distribution,
    stationary_mean_hitting,
    validate_params,
)
from .environment import (
    CoupledEnvironment,
    InitDistSpec,
    LatticeEnvironment,
    NOT_YET,
    coalescing_pair,
)
from .walk import (
    JumpDistribution,
    MarkField,
    WalkPath,
    backward_walk,
    clock_increments,
    cut_times,
    drifted_pm1,
    jump_count,
    simulate_thinning,
    simulate_timechange,
    symmetric_pm1,
)
from .coupling import (
    DominationRecord,
    SubadditiveTable,
    difference_walk,
    dominated_array,
    dominating_array,
    estimate_mu,
    first_jump_environment_sample,
    replica_seed,
)
from .stats import (
    EmpiricalDistribution,
    TestReport,
    WindowDistribution,
    chi_square_gof_test,
    dominance_test,
    env_window_distribution,
    interval_max_tail,
    ks_exponential_test,
    ks_two_sample,
    ladder_statistics,
    lln_slope,
    normality_test,
    overshoot_tails,
    tv_distance,
    velocity_consistency,
)

__version__ = "0.1.0"
