"""Covariance construction, channel model, and entropy machinery."""

import math

import numpy as np
import pytest

from cvkeyrate.gaussian import (
    BONA_FIDE_TOL,
    ChannelParams,
    LOG2_2PI,
    TwoModeCovariance,
    apply_channel,
    build_tmss,
    channel_state,
    entropy_g,
    homodyne_condition,
    quad_entropies,
    scaling_factors,
    symplectic_spectrum,
    vn_entropy,
)

import oracles

# frozen from arbitrary-precision evaluation of the construction formulas
A_1116 = 26.199985586645699
B_1116 = 1.7782794100389228
C_1116 = 26.139567079052284


def grid_channels():
    for eta_b in (0.0, 0.3, 0.6, 0.9):
        for sq, asq in ((0.0, 0.0), (6.0, 10.0), (11.0, 16.0)):
            for eta_ex in (0.0, 0.01, 0.05):
                yield ChannelParams(sq, asq, eta_a=0.0, eta_b=eta_b, eta_ex=eta_ex)


class TestBuildTmss:
    def test_11_16_oracle(self):
        a, b, c = oracles.mp_tmss(11, 16)
        assert (a, b, c) == pytest.approx((A_1116, B_1116, C_1116), rel=1e-15)
        cov = build_tmss(11, 16)
        assert cov.gamma_a[0, 0] == pytest.approx(A_1116, rel=1e-14)
        assert cov.gamma_b[1, 1] == pytest.approx(A_1116, rel=1e-14)
        assert cov.gamma_cor[0, 0] == pytest.approx(C_1116, rel=1e-14)
        assert cov.gamma_cor[1, 1] == pytest.approx(-C_1116, rel=1e-14)

    @pytest.mark.parametrize("s", [0.0, 3.0, 11.0])
    def test_pure_state(self, s):
        cov = build_tmss(s, s)
        nus = symplectic_spectrum(cov)
        assert nus == pytest.approx((1.0, 1.0), abs=1e-9)

    def test_vacuum(self):
        cov = build_tmss(0, 0)
        assert np.allclose(cov.matrix, np.eye(4))

    def test_rejects_inverted_squeezing(self):
        with pytest.raises(ValueError):
            build_tmss(16, 11)


class TestApplyChannel:
    def test_identity(self):
        cov = build_tmss(11, 16)
        out = apply_channel(cov, ChannelParams(11, 16))
        assert np.allclose(out.matrix, cov.matrix)

    def test_full_loss_on_b(self):
        cov = build_tmss(11, 16)
        out = apply_channel(cov, ChannelParams(11, 16, eta_b=1.0))
        assert np.allclose(out.gamma_b, np.eye(2))
        assert np.allclose(out.gamma_cor, 0.0)

    def test_b_block_arithmetic(self):
        # direct arithmetic: 0.5*26.2 + (0.5 + 0.01*0.5)
        cov = apply_channel(
            build_tmss(11, 16), ChannelParams(11, 16, eta_b=0.5, eta_ex=0.01)
        )
        assert cov.variance("q", "b") == pytest.approx(13.604992793322849, rel=1e-14)


class TestScalingFactors:
    def test_symmetric_channel(self):
        cov = channel_state(ChannelParams(11, 16, eta_a=0.2, eta_b=0.2, eta_ex=0.01))
        t_q, t_p = scaling_factors(cov)
        assert t_q == pytest.approx(1.0, abs=1e-12)
        assert t_p == pytest.approx(1.0, abs=1e-12)

    def test_half_loss_value(self):
        # arithmetic oracle sqrt((0.5 a + 0.5)/a); the exact digits follow
        # from a = 26.199985586645699
        cov = channel_state(ChannelParams(11, 16, eta_b=0.5))
        t_q, _ = scaling_factors(cov)
        assert t_q == pytest.approx(0.72047482951473127, rel=1e-13)

    def test_vacuum(self):
        assert scaling_factors(build_tmss(0, 0)) == pytest.approx((1.0, 1.0))


class TestSymplectic:
    def test_vacuum(self):
        assert symplectic_spectrum(build_tmss(0, 0)) == pytest.approx((1.0, 1.0))

    def test_11_16_closed_form(self):
        # independent route: two-mode formula nu^2 = (D +- sqrt(D^2-4 det))/2
        cov = build_tmss(11, 16)
        mat = cov.matrix
        d_inv = (
            np.linalg.det(cov.gamma_a)
            + np.linalg.det(cov.gamma_b)
            + 2 * np.linalg.det(cov.gamma_cor)
        )
        det = np.linalg.det(mat)
        hi = math.sqrt((d_inv + math.sqrt(d_inv**2 - 4 * det)) / 2)
        lo = math.sqrt((d_inv - math.sqrt(d_inv**2 - 4 * det)) / 2)
        nus = symplectic_spectrum(cov)
        # the closed form cancels catastrophically at the degenerate point,
        # so it only pins ~6 digits; the eigendecomposition keeps 13
        assert nus == pytest.approx((hi, lo), rel=1e-6)
        assert nus == pytest.approx((B_1116, B_1116), rel=1e-12)

    def test_non_symmetric_rejected(self):
        with pytest.raises(ValueError):
            TwoModeCovariance(
                np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2), np.zeros((2, 2))
            )

    def test_bona_fide_rejected(self):
        with pytest.raises(ValueError):
            TwoModeCovariance(0.5 * np.eye(2), np.eye(2), np.zeros((2, 2)))


class TestVnEntropy:
    def test_pure_states(self):
        assert vn_entropy(build_tmss(11, 11)) == pytest.approx(0.0, abs=1e-7)

    def test_11_16_value(self):
        expected = 2 * oracles.mp_g(B_1116)
        assert expected == pytest.approx(2.3771733318534958, rel=1e-14)
        assert vn_entropy(build_tmss(11, 16)) == pytest.approx(expected, rel=1e-9)

    def test_g_monotone(self):
        grid = np.linspace(1.0, 50.0, 200)
        vals = [entropy_g(v) for v in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_g_rejects_below_one(self):
        with pytest.raises(ValueError):
            entropy_g(1.0 - 1e-6)
        assert entropy_g(1.0 - 1e-10) == 0.0


class TestHomodyneCondition:
    def test_product_state_unchanged(self):
        cov = TwoModeCovariance(2 * np.eye(2), 3 * np.eye(2), np.zeros((2, 2)))
        cond = homodyne_condition(cov, "b", "q")
        assert np.allclose(cond, 2 * np.eye(2))

    def test_pure_tmss_q_homodyne(self):
        cov = build_tmss(11, 16)
        cond = homodyne_condition(cov, "b", "q")
        a, c = A_1116, C_1116
        assert np.allclose(cond, np.diag([a - c * c / a, a]), rtol=1e-12)

    def test_against_mc_regression(self):
        cov = channel_state(ChannelParams(11, 16, eta_b=0.4, eta_ex=0.01))
        cond = homodyne_condition(cov, "b", "q")
        est, se = oracles.mc_conditional_variance(
            cov.variance("q", "a"), cov.variance("q", "b"), cov.correlation("q")
        )
        assert abs(cond[0, 0] - est) < 5 * se

    def test_never_increases_diagonal(self):
        for ch in grid_channels():
            cov = channel_state(ch)
            for mode in ("a", "b"):
                keep = cov.gamma_b if mode == "a" else cov.gamma_a
                for quad in ("q", "p"):
                    cond = homodyne_condition(cov, mode, quad)
                    assert cond[0, 0] <= keep[0, 0] + 1e-12
                    assert cond[1, 1] <= keep[1, 1] + 1e-12


class TestQuadEntropies:
    def test_vacuum_marginal(self):
        ent = quad_entropies(build_tmss(0, 0))
        assert ent.h_pb == pytest.approx(2.0470955851806411, rel=1e-14)

    def test_product_state_no_side_information(self):
        cov = TwoModeCovariance(2 * np.eye(2), 3 * np.eye(2), np.zeros((2, 2)))
        ent = quad_entropies(cov)
        assert ent.h_pb_a == pytest.approx(ent.h_pb, abs=1e-9)

    def test_data_processing_grid(self):
        for ch in grid_channels():
            ent = quad_entropies(channel_state(ch))
            assert ent.h_pb_a <= ent.h_pb_pa + 1e-9, ch

    def test_uncertainty_relation_grid(self):
        # literal hbar=2 entropies satisfy the relation with a one-bit slack;
        # the tight canonical check lives in the keyrate tests
        for ch in grid_channels():
            ent = quad_entropies(channel_state(ch))
            assert ent.h_qb_e + ent.h_pb_a - LOG2_2PI >= -1e-6, ch

    def test_purification_consistency_grid(self):
        for ch in grid_channels():
            s = quad_entropies(channel_state(ch)).s_ab
            # loss only mixes a state that carries photons, so the vacuum
            # input stays pure under loss as well
            pure = (
                ch.lambda_sq == ch.lambda_asq
                and ch.eta_ex == 0.0
                and (ch.lambda_asq == 0.0 or (ch.eta_a == 0.0 and ch.eta_b == 0.0))
            )
            if pure:
                assert abs(s) < 1e-6
            else:
                assert s > 1e-6


class TestMonteCarloAgreement:
    def test_variance_and_conditional(self):
        cov = channel_state(ChannelParams(11, 16, eta_b=0.5, eta_ex=0.01))
        var_b = cov.variance("p", "b")
        var_a = cov.variance("p", "a")
        c = cov.correlation("p")
        rng = np.random.default_rng(3)
        n = 1_000_000
        g1 = rng.standard_normal(n)
        g2 = rng.standard_normal(n)
        pa = math.sqrt(var_a) * g1
        pb = c / math.sqrt(var_a) * g1 + math.sqrt(var_b - c * c / var_a) * g2
        est_vb = float(np.var(pb))
        se_vb = est_vb * math.sqrt(2.0 / (n - 1))
        assert abs(est_vb - var_b) < 5 * se_vb
        slope = np.sum(pb * pa) / np.sum(pa * pa)
        resid = float(np.var(pb - slope * pa))
        se_r = resid * math.sqrt(2.0 / (n - 1))
        assert abs(resid - (var_b - c * c / var_a)) < 5 * se_r


class TestChannelParamsValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(lambda_sq=-1, lambda_asq=1),
            dict(lambda_sq=5, lambda_asq=3),
            dict(lambda_sq=5, lambda_asq=7, eta_b=1.5),
            dict(lambda_sq=5, lambda_asq=7, eta_ex=-0.1),
            dict(lambda_sq=5, lambda_asq=7, beta=0.0),
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ChannelParams(**kwargs)
