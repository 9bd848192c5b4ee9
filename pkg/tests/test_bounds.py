"""Bound functions: overlap, tails, calibration, Theorem auxiliaries."""

import math

import numpy as np
import pytest

from cvkeyrate.bounds import (
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
    mu_test_of,
    overlap_c,
    serfling_bound,
    sigma_star,
    smallest_valid_nu,
    xi_fn,
)

import oracles

SQRT2 = math.sqrt(2.0)


class TestOverlap:
    def test_approx_value(self):
        assert overlap_c(0.1) == pytest.approx(0.0015915494309189534, rel=1e-15)

    def test_exact_matches_approx_for_small_delta(self):
        ratio = overlap_c(1e-3, "exact") / overlap_c(1e-3, "approx")
        assert abs(ratio - 1.0) < 1e-4

    def test_exact_against_overlap_integral_oracle(self):
        # golden value pinned by the Nystrom maximization of the defining
        # integral operator
        golden = 0.15805672744766
        oracle = oracles.nystrom_overlap(1.0)
        assert oracle == pytest.approx(golden, abs=1e-12)
        assert overlap_c(1.0, "exact") == pytest.approx(oracle, abs=1e-12)

    @pytest.mark.parametrize("delta", [0.25, 0.7, 2.0, 4.0])
    def test_exact_oracle_grid(self, delta):
        assert overlap_c(delta, "exact") == pytest.approx(
            oracles.nystrom_overlap(delta), rel=1e-10
        )

    def test_errors(self):
        with pytest.raises(ValueError):
            overlap_c(0.0)
        with pytest.raises(ValueError):
            overlap_c(5.0, "exact")
        with pytest.raises(ValueError):
            overlap_c(1.0, "fancy")


class TestGammaFn:
    def test_continuity_at_zero(self):
        assert gamma_fn(0.0) == 1.0
        assert gamma_fn_log2(0.0) == 0.0

    def test_t1_value(self):
        expected = (1 + math.sqrt(2)) ** 2
        assert expected == pytest.approx(5.8284271247461901, rel=1e-15)
        assert gamma_fn(1.0) == pytest.approx(expected, rel=1e-12)
        assert gamma_fn(1.0) == pytest.approx(oracles.mp_gamma_fn(1.0), rel=1e-12)

    def test_strictly_increasing(self):
        grid = np.linspace(0.0, 100.0, 500)
        vals = [gamma_fn_log2(t) for t in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_oracle_grid(self):
        for t in (0.01, 0.5, 3.0, 40.0):
            assert gamma_fn(t) == pytest.approx(oracles.mp_gamma_fn(t), rel=1e-11)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            gamma_fn(-0.1)


class TestBigGamma:
    def test_prefactor_at_boundary(self):
        # alpha = mu_test*M: the exponent vanishes and only the prefactor
        # remains, which exceeds 1 and clips to a probability of 1
        m = 100.0
        t = 0.99
        alpha = mu_test_of(t) * m
        assert 2.0 ** big_gamma_log2(m, t, alpha) == pytest.approx(
            1.4142682241899517, rel=1e-12
        )
        assert big_gamma(m, t, alpha) == 1.0

    def test_log_domain_extreme(self):
        assert big_gamma_log2(8000.0, 0.99, 28.0) < -1e5
        assert big_gamma(8000.0, 0.99, 28.0) == 0.0

    def test_decreasing_in_m(self):
        vals = [big_gamma_log2(m, 0.99, 2.0) for m in (50, 100, 200, 400)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_precondition(self):
        with pytest.raises(ValueError):
            big_gamma_log2(10.0, 0.99, 5.0)

    def test_log_linear_consistency(self):
        for m in (40.0, 60.0, 90.0):
            lg = big_gamma_log2(m, 0.99, 1.0)
            if lg > -996:  # linear value representable above 1e-300
                assert 2.0**lg == pytest.approx(big_gamma(m, 0.99, 1.0), rel=1e-9)

    def test_against_mpmath(self):
        assert big_gamma_log2(200.0, 0.99, 5.0) == pytest.approx(
            oracles.mp_big_gamma_log2(200.0, 0.99, 5.0), rel=1e-12
        )


class TestAbortCalibration:
    def test_limit_alpha_large(self):
        assert abort_bound(1.0, 1e9, 100.0) == 0.0

    def test_inversion_identity(self):
        for sig, n, eps in ((1.06, 1e9, 1e-9), (2.0, 1e6, 1e-6)):
            alpha = alpha_for(sig, n, eps)
            assert abort_bound(sig, n, alpha) == pytest.approx(eps, rel=1e-10)

    def test_boundary_alpha_zero(self):
        with pytest.warns(RuntimeWarning):
            assert alpha_for(1.0, 1.0, math.sqrt(8 * math.pi)) == 0.0

    def test_monotone_in_n(self):
        a1 = alpha_for(1.0, 1e6, 1e-9)
        a2 = alpha_for(1.0, 2e6, 1e-9)
        assert a2 > a1

    def test_operating_point_alpha_below_28(self):
        from cvkeyrate.gaussian import ChannelParams, channel_state
        from cvkeyrate.keyrate import sigma_t_of

        cov = channel_state(ChannelParams(11, 16, eta_ex=0.01))
        sig = sigma_t_of(cov, 0.99)
        assert alpha_for(sig, 1e9, 1e-9) <= 28.0


class TestChooseMRange:
    def test_operating_point_below_8000(self):
        # canonical-unit call at the worst-case alpha; back in hbar=2 units
        # M stays far below 8000
        alpha = 28.0
        for n in (1e9, 1e10):
            m = SQRT2 * choose_m_range(0.99, alpha / SQRT2, n, 1e-10, 0.01 / SQRT2)
            assert m <= 8000.0

    def test_defining_property(self):
        alpha, n, eps2, delta = 8.0, 1e9, 1e-10, 0.05
        m = choose_m_range(0.99, alpha, n, eps2, delta)
        gam = big_gamma(m, 0.99, alpha)
        assert 2.0 * math.sqrt(2.0 * n * gam) <= eps2 * (1 + 1e-9)
        # one delta-step below the returned M the constraint must fail
        # (unless the boundary alpha <= mu M would be violated first)
        below = m - delta
        if mu_test_of(0.99) * below >= alpha:
            gam_below = big_gamma(below, 0.99, alpha)
            assert 2.0 * math.sqrt(2.0 * n * gam_below) > eps2

    def test_monotone_in_n(self):
        m1 = choose_m_range(0.99, 8.0, 1e6, 1e-10, 0.05)
        m2 = choose_m_range(0.99, 8.0, 1e12, 1e-10, 0.05)
        assert m2 >= m1

    def test_multiple_of_delta(self):
        m = choose_m_range(0.99, 8.0, 1e9, 1e-10, 0.07)
        assert abs(m / 0.07 - round(m / 0.07)) < 1e-9


class TestSamplingBounds:
    def test_serfling_trivial(self):
        assert serfling_bound(100, 100, 0.0, 10.0) == 1.0

    def test_serfling_example_underflows_to_zero(self):
        # exponent -2499.75 at the stated point: far below double range
        assert serfling_bound(1e4, 1e4, 50.0, 10.0) == 0.0

    def test_serfling_oracle(self):
        val = serfling_bound(1e4, 1e4, 5.0, 10.0)
        assert val == pytest.approx(oracles.mp_serfling(1e4, 1e4, 5.0, 10.0), rel=1e-12)

    def test_serfling_monotone(self):
        vals = [serfling_bound(1e4, 1e4, nu, 10.0) for nu in (1.0, 2.0, 4.0)]
        assert vals[0] > vals[1] > vals[2]
        vals_n = [serfling_bound(n, 1e4, 2.0, 10.0) for n in (1e3, 1e4, 1e5)]
        assert vals_n[0] > vals_n[1] > vals_n[2]

    def test_bernstein_trivial(self):
        assert bernstein_bound(100, 100, 200, 0.0, 1.0, 10.0) == 1.0

    def test_bernstein_oracle(self):
        val = bernstein_bound(1e6, 1e6, 2e6, 0.01, 1.0, 100.0)
        assert val == pytest.approx(8.4818235246469161e-5, rel=1e-12)
        assert val == pytest.approx(
            oracles.mp_bernstein(1e6, 1e6, 2e6, 0.01, 1.0, 100.0), rel=1e-12
        )

    def test_bernstein_monotone_in_mu(self):
        vals = [bernstein_bound(1e6, 1e6, 2e6, mu, 1.0, 100.0)
                for mu in (0.005, 0.01, 0.02)]
        assert vals[0] > vals[1] > vals[2]

    def test_clipped_to_unit_interval(self):
        for nu in (0.0, 1.0, 5.0, 50.0):
            assert 0.0 <= serfling_bound(1e4, 1e4, nu, 10.0) <= 1.0
        for mu in (0.0, 0.01, 1.0):
            assert 0.0 <= bernstein_bound(1e4, 1e4, 2e4, mu, 3.0, 10.0) <= 1.0


COUNTS = RoundCounts(n=10**6, k=10**6, m=2 * 10**6)


class TestSigmaStar:
    def test_all_zero(self):
        stats = PEStats(0.0, 0.0, 0.0, 0.0)
        assert sigma_star(COUNTS, stats, 0.0, 0.1).value == 0.0

    def test_symmetric_algebra(self):
        v = 123.0
        stats = PEStats(0.0, 0.0, v, v)
        out = sigma_star(COUNTS, stats, 0.0, 0.1)
        frac = COUNTS.k / COUNTS.n_cap
        assert out.value == pytest.approx(math.sqrt(4 * frac * v), rel=1e-12)
        assert not out.floored

    def test_floor_flag(self):
        # v_d < (k/N) d^2 floors the first radicand at zero
        stats = PEStats(d_pe=10.0, v_d_pe=1.0, v_ya_pe=0.0, v_yb_pe=0.0)
        out = sigma_star(COUNTS, stats, 0.0, 0.1)
        assert out.floored
        assert out.value == 0.0

    def test_model_point_oracle(self):
        # paper-model statistics at 50% loss, cross-checked symbolically
        from cvkeyrate.binning import expected_pe_stats
        from cvkeyrate.gaussian import ChannelParams, channel_state, scaling_factors
        import mpmath as mp

        cov = channel_state(ChannelParams(11, 16, eta_b=0.5, eta_ex=0.01))
        _, t_p = scaling_factors(cov)
        stats = expected_pe_stats(cov, t_p, 80.0, 0.1, 10**6).stats
        nu = 0.01
        out = sigma_star(COUNTS, stats, nu, 0.1)
        k, ncap = mp.mpf(COUNTS.k), mp.mpf(COUNTS.n_cap)
        shift = mp.mpf(nu) / mp.mpf(0.1) ** 2
        s2 = (
            (k / ncap) * (mp.mpf(stats.v_d_pe) - (k / ncap) * mp.mpf(stats.d_pe) ** 2)
            + (k / ncap) * (mp.mpf(stats.v_ya_pe) + mp.mpf(stats.v_yb_pe) + 2 * shift)
            + 2 * (k / ncap) * mp.sqrt(
                (mp.mpf(stats.v_ya_pe) + shift) * (mp.mpf(stats.v_yb_pe) + shift)
            )
        )
        assert out.value == pytest.approx(float(mp.sqrt(s2)), rel=1e-12)


BUDGET = SecurityBudget.default()


class TestXi:
    def test_budget_exhausted_signal(self):
        # 2 sqrt(2 n Gamma) >= eps_s - eps_1 leaves no valid nu
        assert xi_fn(BUDGET, COUNTS, 1e-12, 1.0, 100.0) == -math.inf
        assert smallest_valid_nu(BUDGET, COUNTS, 1e-12, 100.0) is None

    def test_limit_large_nu(self):
        xi = xi_fn(BUDGET, COUNTS, 0.0, 1e6, 100.0)
        assert xi == pytest.approx((BUDGET.eps_s - BUDGET.eps_1) ** 2, rel=1e-12)

    def test_midrange_oracle(self):
        val = xi_fn(BUDGET, COUNTS, 1e-40, 0.05, 100.0)
        oracle = oracles.mp_xi(
            BUDGET.eps_s, BUDGET.eps_1, COUNTS.n, COUNTS.m, 1e-40, 0.05, 100.0
        )
        assert val == pytest.approx(oracle, rel=1e-9)

    def test_bisection_boundary(self):
        nu = smallest_valid_nu(BUDGET, COUNTS, 0.0, 100.0)
        assert nu is not None
        assert xi_fn(BUDGET, COUNTS, 0.0, nu, 100.0) > 0.0
        assert xi_fn(BUDGET, COUNTS, 0.0, nu * (1 - 2e-6), 100.0) <= 0.0


class TestMuStat:
    def test_xi_one_gives_zero(self):
        assert mu_stat(COUNTS, 1.0, 1.0, 100.0) == 0.0

    def test_arithmetic_example(self):
        val = mu_stat(COUNTS, 1.0, 2.0**-60, 100.0)
        assert val == pytest.approx(0.037908902300206645, rel=1e-12)
        assert val == pytest.approx(
            oracles.mp_mu_stat(COUNTS.n, COUNTS.k, 1.0, 2.0**-60, 100.0), rel=1e-12
        )

    def test_decreasing_in_rounds(self):
        small = RoundCounts(n=10**5, k=10**5, m=2 * 10**5)
        big = RoundCounts(n=10**7, k=10**7, m=2 * 10**7)
        assert mu_stat(big, 1.0, 1e-18, 100.0) < mu_stat(small, 1.0, 1e-18, 100.0)

    def test_natural_log_variant_smaller(self):
        base2 = mu_stat(COUNTS, 1.0, 1e-18, 100.0, log_base=2.0)
        basee = mu_stat(COUNTS, 1.0, 1e-18, 100.0, log_base=math.e)
        assert basee < base2


class TestEpsilonTilde:
    def test_values(self):
        assert epsilon_tilde(10, 0.0) == 0.0
        assert epsilon_tilde(1, 0.5e-20) == pytest.approx(1e-10, rel=1e-12)
        assert epsilon_tilde(10, 1e-20) > epsilon_tilde(10, 1e-22)


class TestRecordValidation:
    def test_protocol_params(self):
        good = dict(n_tot=1000, r=0.2, delta=0.1, m_range=8.0, alpha=5.0,
                    transmittance=0.99, d0=3.0)
        ProtocolParams(**good)
        for bad in (
            dict(good, r=1.0),
            dict(good, delta=-0.1),
            dict(good, m_range=8.03),
            dict(good, transmittance=0.4),
            dict(good, d0=-1.0),
        ):
            with pytest.raises(ValueError):
                ProtocolParams(**bad)

    def test_budget(self):
        with pytest.raises(ValueError):
            SecurityBudget(eps_s=1e-9, eps_c=1e-9, eps_1=2e-9, eps_2=1e-10, eps_t=1e-9)
        with pytest.raises(ValueError):
            SecurityBudget(eps_s=0.0, eps_c=1e-9, eps_1=1e-10, eps_2=1e-10, eps_t=1e-9)

    def test_round_counts(self):
        with pytest.raises(ValueError):
            RoundCounts(n=0, k=1, m=1)
        with pytest.raises(ValueError):
            RoundCounts(n=5, k=3, m=2)
        assert RoundCounts(n=5, k=2, m=3).n_cap == 7

    def test_pe_stats(self):
        with pytest.raises(ValueError):
            PEStats(-1.0, 0.0, 0.0, 0.0)
