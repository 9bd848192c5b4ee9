"""Finite-size key rates for reverse-reconciliation continuous-variable QKD."""

from .gaussian import (
    ChannelParams,
    TwoModeCovariance,
    QuadEntropies,
    apply_channel,
    build_tmss,
    channel_state,
    homodyne_condition,
    quad_entropies,
    scaling_factors,
    symplectic_spectrum,
    vn_entropy,
)
from .bounds import (
    PEStats,
    ProtocolParams,
    RoundCounts,
    SecurityBudget,
    abort_bound,
    alpha_for,
    bernstein_bound,
    big_gamma,
    big_gamma_log2,
    choose_m_range,
    epsilon_tilde,
    gamma_fn,
    gamma_fn_log2,
    mu_stat,
    overlap_c,
    serfling_bound,
    sigma_star,
    smallest_valid_nu,
    xi_fn,
)
from .binning import (
    BinnedString,
    ExpectedPEStats,
    JointPMF,
    bin_index,
    dist_d,
    dist_d2,
    expected_pe_stats,
    joint_pmf,
    leak_ir,
    moment_m2,
)
from .keyrate import (
    AsymptoticRates,
    KeyRateResult,
    UncertaintyGap,
    asymptotic_rates,
    calibrate_protocol,
    distance_scenario,
    finite_key_length,
    optimize_keyrate,
    round_counts_from,
    ur_gap,
)
from .simulate import (
    BoundCheck,
    EnergyTestReport,
    PopulationSpec,
    SamplingBoundsReport,
    SimRecord,
    mc_verify_energy_test,
    mc_verify_sampling_bounds,
    run_protocol,
)

__version__ = "0.1.0"
