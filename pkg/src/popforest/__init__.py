"""Simulation and classification toolkit for birth-death populations with
general competition."""

from .errors import (
    CensoredInput,
    ConfigError,
    ExplosionGuard,
    H1Violation,
    H2Violation,
    InsufficientTail,
    NoEntranceBoundary,
    NoSignStabilization,
    OrderingViolation,
    PopforestError,
    TooFewSamples,
    ZeroCrossing,
)
from .interaction import (
    InteractionModel,
    RateSums,
    build_model,
    linear,
    logistic,
    power_log,
    rate_sums,
    rate_sums_over_x,
    scaled_model,
    zero_fn,
)
from .criteria import (
    BdRates,
    ClassificationReport,
    EntranceVerdict,
    H3Verdict,
    IntegralVerdict,
    Target,
    Verdict,
    bd_rates,
    classify,
    diffusion_drifts,
    h3_check,
    integral_criterion,
    j_function,
    kolmogorov_Q,
    series_criterion,
)
from .discrete_sim import (
    PlanarForest,
    Trajectory,
    batch_extinction,
    batch_state_at,
    pure_death_mean,
    scaled_ensemble,
    simulate_planar,
    simulate_single,
    time_change_discrete,
)
from .diffusion_sim import (
    DiffusionPath,
    SdeConfig,
    batch_coupled_hit_times,
    batch_height_times,
    batch_hit_times,
    batch_mass_times,
    batch_z,
    batch_z_state_at,
    shared_noise_ensemble,
    simulate_height,
    simulate_mass,
    simulate_Z,
    stable_dt,
)
from .stats import (
    DominanceReport,
    McResult,
    McSummary,
    TrendReport,
    TrendVerdict,
    dominance_check,
    ks_two_sample,
    mc_run,
    replica_rng,
    summarize,
    tail_rate,
    trend,
)

__version__ = "0.1.0"
