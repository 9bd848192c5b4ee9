"""Finite key length, parameter optimization, and asymptotic benchmarks.

Unit bridging
-------------
Protocol quantities (covariances, delta, M, alpha, sigma_t) live in hbar = 2
units where the vacuum quadrature variance is 1.  The uncertainty-relation
machinery — the overlap ``c(delta)``, the constant ``log2(2 pi)``, and the
energy-test tail ``Gamma`` — is stated for canonically normalized
quadratures ([Q, P] = i, vacuum variance 1/2).  This module converts at the
call sites: lengths divide by sqrt(2) before entering ``overlap_c`` or
``big_gamma``, and each differential entropy drops by 1/2 bit (variance
halving) before entering a rate formula.  Bin-index quantities (distances,
second moments, M/delta) are scale-free and need no conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import bounds
from .bounds import (
    PEStats,
    ProtocolParams,
    RoundCounts,
    SecurityBudget,
)
from .binning import (
    expected_stats_from,
    joint_pmf,
    leak_ir,
    paired_tables,
)
from .gaussian import (
    ChannelParams,
    LOG2_2PI,
    TwoModeCovariance,
    channel_state,
    quad_entropies,
    scaling_factors,
)

SQRT2 = math.sqrt(2.0)

# Differential entropy of a hbar=2 variance exceeds that of the canonically
# normalized quadrature by half a bit.
CANONICAL_H_SHIFT = 0.5


def gamma_canonical_log2(m_range: float, transmittance: float, alpha: float) -> float:
    """log2 of the energy-test tail with hbar=2 inputs, canonically rescaled."""
    return bounds.big_gamma_log2(m_range / SQRT2, transmittance, alpha / SQRT2)


def sigma_t_of(cov: TwoModeCovariance, transmittance: float) -> float:
    """Energy-test outcome standard deviation sqrt(((1-T) V_B + T + 1)/2).

    V_B is the larger of Bob's quadrature variances.
    """
    v_b = max(cov.variance("q", "b"), cov.variance("p", "b"))
    return math.sqrt(((1.0 - transmittance) * v_b + transmittance + 1.0) / 2.0)


def round_counts_from(n_tot: int, r: float) -> RoundCounts:
    """Expected-value round allocation n=(1-r)^2 N, k=r^2 N, m=r N (floored).

    Raises ValueError when any count floors to zero (zero-key condition).
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must be in (0, 1), got {r}")
    n = int((1.0 - r) ** 2 * n_tot)
    k = int(r * r * n_tot)
    m = int(r * n_tot)
    if n == 0 or k == 0 or m == 0:
        raise ValueError(
            f"zero-key: expected counts n={n}, k={k}, m={m} at r={r}, n_tot={n_tot}"
        )
    return RoundCounts(n=n, k=k, m=m)


@dataclass(frozen=True)
class KeyRateResult:
    """Finite key length with the diagnostic breakdown of its terms.

    ``key_length = max(0, uncertainty_term - max_entropy_term - leak_ir -
    correction_term)`` holds bit-exactly as assembled.  ``reason`` is None
    for a positive key, otherwise a short code explaining the zero.
    """

    key_length: float
    rate: float
    leak_ir: float
    uncertainty_term: float
    max_entropy_term: float
    correction_term: float
    params: dict = field(default_factory=dict)
    reason: str | None = None

    def assembled(self) -> float:
        return max(
            0.0,
            self.uncertainty_term
            - self.max_entropy_term
            - self.leak_ir
            - self.correction_term,
        )


def _zero_result(n_tot: int, reason: str, params: dict) -> KeyRateResult:
    return KeyRateResult(
        key_length=0.0,
        rate=0.0,
        leak_ir=0.0,
        uncertainty_term=0.0,
        max_entropy_term=0.0,
        correction_term=0.0,
        params=params,
        reason=reason,
    )


def finite_key_length(
    ch: ChannelParams,
    pp: ProtocolParams,
    budget: SecurityBudget,
    stats: PEStats,
    counts: RoundCounts,
    leak_per_symbol: float | None = None,
    overlap_mode: str = "approx",
    log_base: float = 2.0,
) -> KeyRateResult:
    """Assembled key length for one parameter set.

    l = n [log2(1/c(delta)) - log2 gamma(d0 + mu)] - l_IR
        - log2(1/(eps_1^2 eps_c)) + 2

    ``stats`` may be measured (simulator) or predicted (expected_pe_stats).
    ``leak_per_symbol`` skips the pmf-based leakage computation when the
    caller has it cached.  Returns a zero result with a reason code when the
    energy-test budget is exhausted or no valid nu exists.
    """
    params: dict[str, Any] = {
        "delta": pp.delta,
        "m_range": pp.m_range,
        "alpha": pp.alpha,
        "d0": pp.d0,
        "r": pp.r,
    }
    n = counts.n
    gamma_log2 = min(gamma_canonical_log2(pp.m_range, pp.transmittance, pp.alpha), 0.0)
    gamma_val = 2.0 ** max(gamma_log2, -1074.0)
    base = budget.eps_s - budget.eps_1 - 2.0 * math.sqrt(2.0 * n * gamma_val)
    if base <= 0.0:
        return _zero_result(pp.n_tot, "energy-test budget exhausted", params)
    nu = bounds.smallest_valid_nu(budget, counts, gamma_val, pp.m_range)
    if nu is None:
        return _zero_result(pp.n_tot, "no valid nu", params)
    xi = bounds.xi_fn(budget, counts, gamma_val, nu, pp.m_range)
    sig_star = bounds.sigma_star(counts, stats, nu, pp.delta)
    mu = bounds.mu_stat(counts, sig_star.value, xi, pp.m_over_delta, log_base)
    params.update(nu=nu, xi=xi, mu=mu, sigma_star=sig_star.value)

    if leak_per_symbol is None:
        cov = channel_state(ch)
        t_q, _ = scaling_factors(cov)
        pmf = joint_pmf(cov, t_q, "q", pp.m_range, pp.delta)
        leak_per_symbol = leak_ir(pmf, ch.beta).per_symbol
    leak_total = leak_per_symbol * n

    uncertainty = -n * math.log2(bounds.overlap_c(pp.delta / SQRT2, overlap_mode))
    max_entropy = n * bounds.gamma_fn_log2(pp.d0 + mu)
    correction = math.log2(1.0 / (budget.eps_1**2 * budget.eps_c)) - 2.0
    length = uncertainty - max_entropy - leak_total - correction
    reason = None if length > 0 else "negative key length floored at 0"
    return KeyRateResult(
        key_length=max(length, 0.0),
        rate=max(length, 0.0) / pp.n_tot,
        leak_ir=leak_total,
        uncertainty_term=uncertainty,
        max_entropy_term=max_entropy,
        correction_term=correction,
        params=params,
        reason=reason,
    )


def calibrate_protocol(
    ch: ChannelParams,
    budget: SecurityBudget,
    n_tot: int,
    r: float,
    delta: float,
    transmittance: float = 0.99,
    margin_sigmas: float = 5.0,
) -> tuple[ProtocolParams, PEStats, float]:
    """Calibrate (alpha, M, d0) for one candidate (r, delta).

    alpha comes from the honest abort budget eps_t, M from inverting the
    energy-test tail at eps_2, d0 from the expected PE statistics.  Returns
    the protocol parameters, the predicted statistics, and the cached
    per-symbol reconciliation leakage.
    """
    cov = channel_state(ch)
    t_q, t_p = scaling_factors(cov)
    sigma_t = sigma_t_of(cov, transmittance)
    alpha = bounds.alpha_for(sigma_t, n_tot, budget.eps_t)
    counts = round_counts_from(n_tot, r)
    m_range = SQRT2 * bounds.choose_m_range(
        transmittance, alpha / SQRT2, counts.n, budget.eps_2, delta / SQRT2
    )
    pmf_p, pmf_q = paired_tables(cov, t_q, t_p, m_range, delta)
    expected = expected_stats_from(pmf_p, counts.k, margin_sigmas)
    leak = leak_ir(pmf_q, ch.beta).per_symbol
    pp = ProtocolParams(
        n_tot=n_tot,
        r=r,
        delta=delta,
        m_range=m_range,
        alpha=alpha,
        transmittance=transmittance,
        d0=expected.d0,
    )
    return pp, expected.stats, leak


def optimize_keyrate(
    ch: ChannelParams,
    budget: SecurityBudget,
    n_tot: int,
    transmittance: float = 0.99,
    delta_bounds: tuple[float, float] = (0.01, 1.0),
    r_step: float = 0.02,
    n_delta: int = 16,
    refine_rounds: int = 3,
    margin_sigmas: float = 5.0,
    overlap_mode: str = "approx",
    log_base: float = 2.0,
) -> KeyRateResult:
    """Grid search plus coordinate-descent refinement over (r, delta).

    Per candidate: alpha from the abort budget, M from the tail inversion,
    statistics and leakage predicted from the binned model (cached per
    delta, since they do not depend on r), then the Theorem assembly.
    Deterministic for a fixed grid; ties broken by smaller (r, delta).
    """
    cov = channel_state(ch)
    t_q, t_p = scaling_factors(cov)
    sigma_t = sigma_t_of(cov, transmittance)
    alpha = bounds.alpha_for(sigma_t, n_tot, budget.eps_t)
    mu_t = bounds.mu_test_of(transmittance)

    cache: dict[float, tuple] = {}

    def stats_for(delta: float):
        if delta not in cache:
            # The cached statistics are index-based and do not depend on M
            # (for M a multiple of delta), so one table serves every r at
            # this delta; size the window with the worst-case n_tot.
            m_range = SQRT2 * bounds.choose_m_range(
                transmittance, alpha / SQRT2, n_tot, budget.eps_2, delta / SQRT2
            )
            pmf_p, pmf_q = paired_tables(cov, t_q, t_p, m_range, delta)
            expected = expected_stats_from(pmf_p, 1, margin_sigmas)
            cache[delta] = (expected, leak_ir(pmf_q, ch.beta).per_symbol)
        return cache[delta]

    def evaluate(r: float, delta: float) -> KeyRateResult | None:
        if not (0.0 < r < 1.0):
            return None
        if not (delta_bounds[0] - 1e-12 <= delta <= delta_bounds[1] + 1e-12):
            return None
        if alpha <= 0.0:
            return None
        try:
            counts = round_counts_from(n_tot, r)
        except ValueError:
            return None
        expected, leak = stats_for(delta)
        m_range = SQRT2 * bounds.choose_m_range(
            transmittance, alpha / SQRT2, counts.n, budget.eps_2, delta / SQRT2
        )
        if alpha / SQRT2 > mu_t * (m_range / SQRT2):
            return None
        pp = ProtocolParams(
            n_tot=n_tot,
            r=r,
            delta=delta,
            m_range=m_range,
            alpha=alpha,
            transmittance=transmittance,
            d0=expected.d0_for(counts.k),
        )
        return finite_key_length(
            ch, pp, budget, expected.stats, counts,
            leak_per_symbol=leak, overlap_mode=overlap_mode, log_base=log_base,
        )

    r_grid = np.arange(r_step, 1.0, r_step)
    d_grid = np.geomspace(delta_bounds[0], delta_bounds[1], n_delta)
    best: KeyRateResult | None = None
    best_key: tuple[float, float] | None = None

    def consider(res, r, delta):
        nonlocal best, best_key
        if res is None:
            return
        if (
            best is None
            or res.rate > best.rate
            or (res.rate == best.rate and (r, delta) < best_key)
        ):
            best, best_key = res, (r, delta)

    for r in r_grid:
        for delta in d_grid:
            consider(evaluate(float(r), float(delta)), float(r), float(delta))

    if best is not None and best.rate > 0:
        dr, df = r_step, math.sqrt(d_grid[1] / d_grid[0])
        for _ in range(refine_rounds):
            dr /= 2.0
            df = math.sqrt(df)
            r0, delta0 = best_key
            for r in (r0 - dr, r0 + dr):
                consider(evaluate(r, delta0), r, delta0)
            r0 = best_key[0]
            for delta in (delta0 / df, delta0 * df):
                delta = float(np.clip(delta, *delta_bounds))
                consider(evaluate(r0, delta), r0, delta)

    if best is None:
        return _zero_result(n_tot, "no feasible candidate", {})
    return best


# ---------------------------------------------------------------------------
# asymptotic benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticRates:
    """Asymptotic benchmark rates in bits per round (may be negative)."""

    r_ur: float
    r_opt: float
    r_dr: float


def asymptotic_rates(ch: ChannelParams) -> AsymptoticRates:
    """Uncertainty-relation, Devetak-Winter and direct-reconciliation rates.

    r_UR  = log2(2 pi) - 2 h(P_B|P_A)
    r_Opt = h(P_B|E) - h(P_B|P_A)
    r_DR  = log2(2 pi) - 2 h(P_A|P_B)

    with the differential entropies taken for canonically normalized
    quadratures (module docstring).
    """
    ent = quad_entropies(channel_state(ch))
    h_pb_pa = ent.h_pb_pa - CANONICAL_H_SHIFT
    h_pa_pb = ent.h_pa_pb - CANONICAL_H_SHIFT
    h_pb_e = ent.h_pb_e - CANONICAL_H_SHIFT
    return AsymptoticRates(
        r_ur=LOG2_2PI - 2.0 * h_pb_pa,
        r_opt=h_pb_e - h_pb_pa,
        r_dr=LOG2_2PI - 2.0 * h_pa_pb,
    )


@dataclass(frozen=True)
class UncertaintyGap:
    """Slack of the entropic uncertainty relation, in bits."""

    gap_quantum: float
    gap_classical: float


def ur_gap(ch: ChannelParams) -> UncertaintyGap:
    """Gap of h(Q_B|E) + h(P_B|·) above log2(2 pi), quantum and classical side."""
    ent = quad_entropies(channel_state(ch))
    h_qe = ent.h_qb_e - CANONICAL_H_SHIFT
    return UncertaintyGap(
        gap_quantum=h_qe + (ent.h_pb_a - CANONICAL_H_SHIFT) - LOG2_2PI,
        gap_classical=h_qe + (ent.h_pb_pa - CANONICAL_H_SHIFT) - LOG2_2PI,
    )


def distance_scenario(
    km: float, db_per_km: float = 0.20, coupling_loss: float = 0.05
) -> float:
    """Bob's total loss for a fiber of given length plus coupling loss."""
    if km < 0 or db_per_km < 0 or not 0.0 <= coupling_loss < 1.0:
        raise ValueError("distances and losses must be non-negative")
    return 1.0 - 10.0 ** (-db_per_km * km / 10.0) * (1.0 - coupling_loss)
