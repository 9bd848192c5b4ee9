"""Two-mode Gaussian states: covariance matrices, channels, and entropies.

All covariance matrices are dimensionless second moments in units of hbar = 2,
so the vacuum has unit variance in each quadrature.  Mode ordering is
(q_A, p_A, q_B, p_B).  Entropies returned by :func:`quad_entropies` are the
literal differential/von Neumann entropies of these variances, in bits; the
rate formulas in :mod:`cvkeyrate.keyrate` rescale them to canonically
normalized quadratures before combining them with uncertainty-relation
constants (see that module's docstring).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG2_2PI = math.log2(2.0 * math.pi)
LOG2_2PIE = math.log2(2.0 * math.pi * math.e)

# Numerical tolerance for the bona-fide condition: symplectic eigenvalues
# must satisfy nu >= 1 - BONA_FIDE_TOL.
BONA_FIDE_TOL = 1e-9

_Z = np.diag([1.0, -1.0])
_OMEGA_1 = np.array([[0.0, 1.0], [-1.0, 0.0]])
_OMEGA_2 = np.block([[_OMEGA_1, np.zeros((2, 2))], [np.zeros((2, 2)), _OMEGA_1]])


@dataclass(frozen=True)
class ChannelParams:
    """Source and channel description.

    Parameters
    ----------
    lambda_sq, lambda_asq : float
        Squeezing and antisqueezing in dB, 0 <= lambda_sq <= lambda_asq.
    eta_a, eta_b : float
        Loss fraction on the A and B arm, in [0, 1].
    eta_ex : float
        Excess noise fraction (classical Gaussian noise scaled by the arm
        transmittance), >= 0.
    beta : float
        Reconciliation efficiency, in (0, 1].
    """

    lambda_sq: float
    lambda_asq: float
    eta_a: float = 0.0
    eta_b: float = 0.0
    eta_ex: float = 0.0
    beta: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.lambda_sq:
            raise ValueError(f"lambda_sq must be >= 0, got {self.lambda_sq}")
        if self.lambda_asq < self.lambda_sq:
            raise ValueError(
                "lambda_asq must be >= lambda_sq (otherwise the correlation "
                f"amplitude is imaginary): {self.lambda_asq} < {self.lambda_sq}"
            )
        for name in ("eta_a", "eta_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.eta_ex < 0.0:
            raise ValueError(f"eta_ex must be >= 0, got {self.eta_ex}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")


@dataclass(frozen=True, eq=False)
class TwoModeCovariance:
    """Covariance matrix of a two-mode Gaussian state, as 2x2 blocks.

    ``gamma_a`` and ``gamma_b`` are the marginal blocks of modes A and B,
    ``gamma_cor`` the off-diagonal correlation block, so the full matrix is
    ``[[gamma_a, gamma_cor], [gamma_cor.T, gamma_b]]``.

    Construction validates symmetry of the marginal blocks and the bona-fide
    condition (both symplectic eigenvalues >= 1 - 1e-9).
    """

    gamma_a: np.ndarray
    gamma_b: np.ndarray
    gamma_cor: np.ndarray
    _nu: tuple = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("gamma_a", "gamma_b", "gamma_cor"):
            block = np.asarray(getattr(self, name), dtype=float)
            if block.shape != (2, 2):
                raise ValueError(f"{name} must be 2x2, got shape {block.shape}")
            object.__setattr__(self, name, block)
        for name in ("gamma_a", "gamma_b"):
            block = getattr(self, name)
            if not np.allclose(block, block.T, rtol=0.0, atol=1e-10):
                raise ValueError(f"{name} must be symmetric")
        nu = _symplectic_eigenvalues(self.matrix)
        if nu[-1] < 1.0 - BONA_FIDE_TOL:
            raise ValueError(
                f"covariance is not bona fide: symplectic eigenvalues {nu}"
            )
        object.__setattr__(self, "_nu", tuple(nu))

    @property
    def matrix(self) -> np.ndarray:
        """Full 4x4 covariance matrix."""
        return np.block(
            [[self.gamma_a, self.gamma_cor], [self.gamma_cor.T, self.gamma_b]]
        )

    def variance(self, quadrature: str, mode: str) -> float:
        """Marginal variance of one quadrature ('q' or 'p') of mode 'a' or 'b'."""
        i = _quad_index(quadrature)
        block = self.gamma_a if _mode_index(mode) == 0 else self.gamma_b
        return float(block[i, i])

    def correlation(self, quadrature: str) -> float:
        """Off-mode second moment <x_A x_B> for the given quadrature."""
        i = _quad_index(quadrature)
        return float(self.gamma_cor[i, i])


def _quad_index(quadrature: str) -> int:
    if quadrature not in ("q", "p"):
        raise ValueError(f"quadrature must be 'q' or 'p', got {quadrature!r}")
    return 0 if quadrature == "q" else 1


def _mode_index(mode: str) -> int:
    if mode not in ("a", "b"):
        raise ValueError(f"mode must be 'a' or 'b', got {mode!r}")
    return 0 if mode == "a" else 1


def _symplectic_eigenvalues(matrix: np.ndarray) -> np.ndarray:
    """Symplectic spectrum via the eigenvalues of i*Omega*Gamma, descending."""
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-10):
        raise ValueError("covariance matrix must be symmetric")
    ev = np.linalg.eigvals(_OMEGA_2 @ matrix)
    nu = np.sort(np.abs(ev))[::-1]
    # eigenvalues come in +-i*nu pairs; keep one of each
    return nu[[0, 2]]


def build_tmss(lambda_sq: float, lambda_asq: float) -> TwoModeCovariance:
    """Two-mode squeezed state for given squeezing/antisqueezing in dB.

    The marginal blocks are ``a * I`` with ``a = (10^(sq/10) + 10^(asq/10))/2``
    and the correlation block is ``c * diag(1, -1)`` with
    ``c = sqrt(a^2 - b^2)``, ``b = 10^((asq - sq)/20)``.  Both symplectic
    eigenvalues equal ``b``; the state is pure iff the two dB values coincide.
    """
    if lambda_sq < 0 or lambda_asq < lambda_sq:
        raise ValueError(
            "require 0 <= lambda_sq <= lambda_asq, got "
            f"({lambda_sq}, {lambda_asq})"
        )
    a = 0.5 * (10.0 ** (lambda_sq / 10.0) + 10.0 ** (lambda_asq / 10.0))
    b = 10.0 ** ((lambda_asq - lambda_sq) / 20.0)
    c = math.sqrt(max(a * a - b * b, 0.0))
    eye = np.eye(2)
    return TwoModeCovariance(a * eye, a * eye, c * _Z)


def apply_channel(cov: TwoModeCovariance, ch: ChannelParams) -> TwoModeCovariance:
    """Propagate through loss on both arms plus excess noise.

    Each arm mixes with vacuum at a beam splitter of reflectivity eta, and
    excess noise adds ``eta_ex * (1 - eta)`` units of vacuum variance:
    ``Gamma_X -> (1-eta) Gamma_X + (eta + eta_ex (1-eta)) I``, and the
    correlation block scales by ``sqrt((1-eta_a)(1-eta_b))``.
    """
    ea = 1.0 - ch.eta_a
    eb = 1.0 - ch.eta_b
    eye = np.eye(2)
    ga = ea * cov.gamma_a + (ch.eta_a + ch.eta_ex * ea) * eye
    gb = eb * cov.gamma_b + (ch.eta_b + ch.eta_ex * eb) * eye
    gc = math.sqrt(ea * eb) * cov.gamma_cor
    return TwoModeCovariance(ga, gb, gc)


def channel_state(ch: ChannelParams) -> TwoModeCovariance:
    """Post-channel state of the source described by ``ch``."""
    return apply_channel(build_tmss(ch.lambda_sq, ch.lambda_asq), ch)


def scaling_factors(cov: TwoModeCovariance) -> tuple[float, float]:
    """Alice's rescaling factors (t_q, t_p) matching second moments to Bob's.

    ``t_q = sqrt(Var(Q_B)/Var(Q_A))`` and likewise for p, so that the scaled
    quadratures ``t_q Q_A`` and ``Q_B`` have equal variance.
    """
    vqa, vpa = cov.variance("q", "a"), cov.variance("p", "a")
    if vqa <= 0 or vpa <= 0:
        raise ValueError("Alice variance must be positive to define scaling")
    t_q = math.sqrt(cov.variance("q", "b") / vqa)
    t_p = math.sqrt(cov.variance("p", "b") / vpa)
    return t_q, t_p


def symplectic_spectrum(cov: TwoModeCovariance) -> tuple[float, float]:
    """The two symplectic eigenvalues, descending; both >= 1 - 1e-9."""
    nu = _symplectic_eigenvalues(cov.matrix)
    return float(nu[0]), float(nu[1])


def _xlog2x(x: float) -> float:
    # x*log2(x), continuous at 0; x is (nu +- 1)/2 >= 0
    if x < 1e-300:
        return 0.0
    return x * math.log2(x)


def entropy_g(nu: float) -> float:
    """Bosonic entropy function g(nu) in bits; g(1) = 0 by continuity.

    Values in [1 - 1e-9, 1] are clipped to 1; smaller values are rejected.
    """
    if nu < 1.0 - BONA_FIDE_TOL:
        raise ValueError(f"symplectic eigenvalue below 1: {nu}")
    nu = max(nu, 1.0)
    return _xlog2x((nu + 1.0) / 2.0) - _xlog2x((nu - 1.0) / 2.0)


def vn_entropy(cov: TwoModeCovariance) -> float:
    """Von Neumann entropy of the two-mode Gaussian state, in bits."""
    n1, n2 = symplectic_spectrum(cov)
    return entropy_g(n1) + entropy_g(n2)


def _one_mode_entropy(gamma: np.ndarray) -> float:
    det = float(np.linalg.det(gamma))
    if det < (1.0 - BONA_FIDE_TOL) ** 2:
        raise ValueError(f"one-mode covariance below vacuum: det={det}")
    return entropy_g(math.sqrt(max(det, 1.0)))


def homodyne_condition(
    cov: TwoModeCovariance, measured_mode: str, quadrature: str
) -> np.ndarray:
    """Conditional covariance of the unmeasured mode after a homodyne.

    Schur complement ``Gamma_keep - C Pi (Pi Gamma_meas Pi)^+ C.T`` with Pi
    the projector onto the measured quadrature; the result does not depend on
    the measurement outcome.  The pseudo-inverse handles a degenerate
    measured variance.
    """
    i = _quad_index(quadrature)
    pi = np.zeros((2, 2))
    pi[i, i] = 1.0
    if _mode_index(measured_mode) == 1:
        keep, meas, cross = cov.gamma_a, cov.gamma_b, cov.gamma_cor
    else:
        keep, meas, cross = cov.gamma_b, cov.gamma_a, cov.gamma_cor.T
    pinv = np.linalg.pinv(pi @ meas @ pi, hermitian=True)
    return keep - cross @ pi @ pinv @ pi @ cross.T


@dataclass(frozen=True)
class QuadEntropies:
    """Differential entropies (bits) of Bob's quadratures, hbar = 2 variances.

    ``h_pb_a`` and ``h_qb_e`` are quantum conditional entropies obtained via
    purification: conditioning on the quantum side B replaces the classical
    conditional variance by the entropy change of the homodyne-conditioned
    remote state, and the purifying system E satisfies S(E) = S(AB) with the
    post-measurement AE state pure.
    """

    h_qb: float
    h_pb: float
    h_pb_pa: float
    h_pa_pb: float
    h_pb_a: float
    h_qb_e: float
    h_pb_e: float
    s_ab: float


def _h_gauss(var: float) -> float:
    if var <= 0:
        raise ValueError(f"non-positive variance: {var}")
    return 0.5 * math.log2(2.0 * math.pi * math.e * var)


def quad_entropies(cov: TwoModeCovariance) -> QuadEntropies:
    """Marginal, classical-conditional and quantum-conditional entropies.

    Classical conditionals use the scalar Gaussian conditional variance.
    Quantum conditionals:

    * ``h(P_B|A) = h(P_B) + S(rho_A | p-homodyne on B) - S(rho_A)``
    * ``h(Q_B|E) = h(Q_B) + S(rho_A | q-homodyne on B) - S(rho_AB)``

    using that E purifies AB, so S(E) = S(rho_AB), and that the
    post-measurement AE state is pure, so S(rho_E^q) = S(rho_A^q).
    """
    vqa, vpa = cov.variance("q", "a"), cov.variance("p", "a")
    vqb, vpb = cov.variance("q", "b"), cov.variance("p", "b")
    cq, cp = cov.correlation("q"), cov.correlation("p")

    h_qb = _h_gauss(vqb)
    h_pb = _h_gauss(vpb)
    h_pb_pa = _h_gauss(vpb - cp * cp / vpa)
    h_pa_pb = _h_gauss(vpa - cp * cp / vpb)

    s_a = _one_mode_entropy(cov.gamma_a)
    s_ab = vn_entropy(cov)
    s_a_given_p = _one_mode_entropy(homodyne_condition(cov, "b", "p"))
    s_a_given_q = _one_mode_entropy(homodyne_condition(cov, "b", "q"))

    return QuadEntropies(
        h_qb=h_qb,
        h_pb=h_pb,
        h_pb_pa=h_pb_pa,
        h_pa_pb=h_pa_pb,
        h_pb_a=h_pb + s_a_given_p - s_a,
        h_qb_e=h_qb + s_a_given_q - s_ab,
        h_pb_e=h_pb + s_a_given_p - s_ab,
        s_ab=s_ab,
    )
