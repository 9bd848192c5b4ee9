"""Discretization of quadrature data and binned-Gaussian statistics.

Measurement outcomes are grouped into ``2M/delta`` intervals
``I_k = (-M + (k-1) delta, -M + k delta]`` with the two outermost bins
absorbing the tails.  The joint probability table of a correlated pair is
built as a sparse window (about +-trunc_sigmas standard deviations around
the means) because the full table can reach ~1e6 bins per axis while the
mass occupies a few hundred.

Sign convention: Alice's phase data is anti-correlated with Bob's, so the
phase pipeline bins ``-t_p * P_A`` against ``P_B`` (amplitude bins
``+t_q * Q_A``); this is what makes the parameter-estimation distance small
for the honest state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import erf, roots_legendre

from .gaussian import TwoModeCovariance, _quad_index
from .bounds import PEStats

_GL_NODES = 8


@dataclass(frozen=True, eq=False)
class BinnedString:
    """A string of bin indices in {1, ..., 2M/delta}."""

    values: np.ndarray
    m_range: float
    delta: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "values", vals)
        nbins = 2.0 * self.m_range / self.delta
        if abs(nbins - round(nbins)) > 1e-6 * max(nbins, 1.0):
            raise ValueError(f"2*m_range/delta must be an integer, got {nbins}")
        if vals.size and (vals.min() < 1 or vals.max() > round(nbins)):
            raise ValueError("bin index out of range")

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def n_bins(self) -> int:
        return int(round(2.0 * self.m_range / self.delta))


def bin_index(q, m_range: float, delta: float):
    """Bin index of quadrature value(s): clamp(ceil((q+M)/delta), 1, 2M/delta).

    Boundary values land in the lower interval (half-open bins (lo, hi]).
    Accepts scalars or arrays.
    """
    nbins = int(round(2.0 * m_range / delta))
    k = np.ceil((np.asarray(q, dtype=float) + m_range) / delta)
    k = np.clip(k, 1, nbins).astype(np.int64)
    return int(k) if np.isscalar(q) else k


def _paired_values(x, y) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, BinnedString) and isinstance(y, BinnedString):
        if x.m_range != y.m_range or x.delta != y.delta:
            raise ValueError("strings use different binnings")
    xv = x.values if isinstance(x, BinnedString) else np.asarray(x)
    yv = y.values if isinstance(y, BinnedString) else np.asarray(y)
    if xv.shape != yv.shape:
        raise ValueError(f"length mismatch: {xv.shape} vs {yv.shape}")
    return xv, yv


def dist_d(x, y) -> float:
    """Average index distance (1/N) sum |x_k - y_k|."""
    xv, yv = _paired_values(x, y)
    return float(np.mean(np.abs(xv - yv)))


def dist_d2(x, y) -> float:
    """Average squared index distance (1/N) sum |x_k - y_k|^2."""
    xv, yv = _paired_values(x, y)
    return float(np.mean((xv - yv).astype(float) ** 2))


def moment_m2(x) -> float:
    """Average second moment (1/N) sum (x_k - M/delta)^2 of a binned string."""
    if not isinstance(x, BinnedString):
        raise TypeError("moment_m2 needs a BinnedString (requires M and delta)")
    center = x.m_range / x.delta
    return float(np.mean((x.values - center) ** 2))


# ---------------------------------------------------------------------------
# windowed joint pmf of a binned correlated Gaussian pair
# ---------------------------------------------------------------------------


class JointPMF:
    """Sparse joint probability table of binned (scaled Alice, Bob) values.

    Rows are Bob bins ``b_indices``; row ``i`` holds probabilities for Alice
    bins ``a_start[i] .. a_start[i] + width - 1``.  Gaussian mass outside the
    window is folded into the corner cells so the table sums to one.
    """

    def __init__(self, b_indices, a_start, probs, m_range, delta, quadrature):
        self.b_indices = np.asarray(b_indices, dtype=np.int64)
        self.a_start = np.asarray(a_start, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=float)
        self.m_range = float(m_range)
        self.delta = float(delta)
        self.quadrature = quadrature

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    def total_mass(self) -> float:
        return float(self.probs.sum())

    def _index_diff(self) -> np.ndarray:
        # a_index - b_index per cell
        offs = np.arange(self.width, dtype=np.int64)
        return (self.a_start[:, None] + offs[None, :]) - self.b_indices[:, None]

    def mean_abs_diff(self) -> float:
        """Expected index distance E|i_A - i_B|."""
        return float((self.probs * np.abs(self._index_diff())).sum())

    def mean_sq_diff(self) -> float:
        """Expected squared index distance E|i_A - i_B|^2."""
        return float((self.probs * self._index_diff().astype(float) ** 2).sum())

    def marginal_b(self) -> tuple[np.ndarray, np.ndarray]:
        return self.b_indices, self.probs.sum(axis=1)

    def marginal_a(self) -> tuple[np.ndarray, np.ndarray]:
        lo = int(self.a_start.min())
        hi = int(self.a_start.max()) + self.width
        out = np.zeros(hi - lo)
        for i in range(self.probs.shape[0]):
            s = self.a_start[i] - lo
            out[s : s + self.width] += self.probs[i]
        return np.arange(lo, hi, dtype=np.int64), out

    def m2_b(self) -> float:
        idx, p = self.marginal_b()
        return float((p * (idx - self.m_range / self.delta) ** 2).sum())

    def m2_a(self) -> float:
        idx, p = self.marginal_a()
        return float((p * (idx - self.m_range / self.delta) ** 2).sum())

    @staticmethod
    def _entropy(p: np.ndarray) -> float:
        nz = p[p > 0]
        return float(-(nz * np.log2(nz)).sum())

    def entropy_b(self) -> float:
        return self._entropy(self.marginal_b()[1])

    def entropy_a(self) -> float:
        return self._entropy(self.marginal_a()[1])

    def entropy_joint(self) -> float:
        return self._entropy(self.probs.ravel())

    def mutual_information(self) -> float:
        return self.entropy_a() + self.entropy_b() - self.entropy_joint()


def _aligned_pair_moments(
    cov: TwoModeCovariance, scaling: float, quadrature: str
) -> tuple[float, float, float]:
    """(Var(Z_A), Var(Z_B), Cov) of the sign-aligned scaled pair."""
    i = _quad_index(quadrature)
    sign = 1.0 if quadrature == "q" else -1.0
    var_a = scaling * scaling * cov.gamma_a[i, i]
    var_b = cov.gamma_b[i, i]
    c = sign * scaling * cov.gamma_cor[i, i]
    return float(var_a), float(var_b), float(c)


def joint_pmf(
    cov: TwoModeCovariance,
    scaling: float,
    quadrature: str,
    m_range: float,
    delta: float,
    trunc_sigmas: float = 10.0,
) -> JointPMF:
    """Binned joint pmf of (scaled Alice, Bob) for one quadrature.

    Bob's bin masses are exact error-function differences; the conditional
    Alice distribution inside each Bob bin is integrated with Gauss-Legendre
    quadrature of the (analytic) conditional bin mass over the bin, which is
    exact to well below 1e-10 per cell for the smooth Gaussian integrand.
    Mass beyond ``trunc_sigmas`` standard deviations is folded into the
    outermost window cells (and, through clamping, the overflow bins).
    """
    if delta <= 0 or m_range <= 0:
        raise ValueError("m_range and delta must be positive")
    nbins = int(round(2.0 * m_range / delta))
    var_a, var_b, c = _aligned_pair_moments(cov, scaling, quadrature)
    sd_b = math.sqrt(var_b)
    slope = c / var_b
    var_cond = var_a - c * c / var_b
    if var_cond < -1e-9 * var_a:
        raise ValueError("correlation exceeds marginal variances")
    sd_cond = math.sqrt(max(var_cond, 1e-300))

    # Bob window (indices clamped to the physical range)
    jlo = max(int(math.floor((-trunc_sigmas * sd_b + m_range) / delta)) + 1, 1)
    jhi = min(int(math.ceil((trunc_sigmas * sd_b + m_range) / delta)), nbins)
    j = np.arange(jlo, jhi + 1, dtype=np.int64)
    bedges = -m_range + np.arange(jlo - 1, jhi + 1, dtype=float) * delta
    zb = bedges / (sd_b * math.sqrt(2.0))
    cdf_b = 0.5 * (1.0 + erf(zb))
    rowmass = np.diff(cdf_b)
    tail_lo, tail_hi = float(cdf_b[0]), float(1.0 - cdf_b[-1])
    rowmass = rowmass.copy()
    rowmass[0] += tail_lo
    rowmass[-1] += tail_hi

    # Gauss-Legendre nodes on each Bob bin; conditional weights within the bin
    gx, gw = roots_legendre(_GL_NODES)
    y = bedges[:-1, None] + (gx[None, :] + 1.0) * (delta / 2.0)
    wphi = gw[None, :] * np.exp(-0.5 * (y / sd_b) ** 2)
    wphi /= wphi.sum(axis=1, keepdims=True)
    mu = slope * y

    # constant-width Alice window centred on the per-row conditional mean
    half = trunc_sigmas * sd_cond + abs(slope) * delta + delta
    width = int(math.ceil(2.0 * half / delta)) + 2
    centers = slope * (-m_range + (j - 0.5) * delta)
    a_start = np.floor((centers + m_range) / delta).astype(np.int64) - width // 2
    a_start = np.clip(a_start, 1, max(nbins - width + 1, 1))
    aedges = -m_range + (a_start[:, None] + np.arange(width + 1)[None, :] - 1.0) * delta

    nrows = j.size
    probs = np.empty((nrows, width))
    denom = sd_cond * math.sqrt(2.0)
    chunk = max(1, int(4_000_000 // (width * _GL_NODES)))
    for s in range(0, nrows, chunk):
        e = min(s + chunk, nrows)
        z = (aedges[s:e, None, :] - mu[s:e, :, None]) / denom
        cdf = 0.5 * (1.0 + erf(z))
        block = (wphi[s:e, :, None] * np.diff(cdf, axis=2)).sum(axis=1)
        block[:, 0] += (wphi[s:e] * cdf[:, :, 0]).sum(axis=1)
        block[:, -1] += (wphi[s:e] * (1.0 - cdf[:, :, -1])).sum(axis=1)
        probs[s:e] = block * rowmass[s:e, None]
    return JointPMF(j, a_start, probs, m_range, delta, quadrature)


class LeakIR(NamedTuple):
    per_symbol: float
    total: float


def leak_ir(pmf: JointPMF, beta: float, n_rounds: int = 1) -> LeakIR:
    """Reconciliation leakage H(X_B) - beta I(X_A; X_B), in bits.

    Returns the per-symbol value and the total for ``n_rounds`` key rounds.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    total = pmf.total_mass()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"pmf is not normalized: total mass {total}")
    per = pmf.entropy_b() - beta * pmf.mutual_information()
    return LeakIR(per, per * n_rounds)


@dataclass(frozen=True)
class ExpectedPEStats:
    """Model prediction of the parameter-estimation statistics.

    ``stats`` holds the expected values of the observed averages; ``d0`` is
    the recommended distance threshold for ``pe_rounds`` comparison rounds;
    ``var_d_sample`` is the per-sample variance of the index distance, from
    which ``d0_for`` rescales the threshold to other round counts.
    ``d_bound_continuous`` is the conservative continuous-limit bound
    sigma_Delta sqrt(2/pi)/delta + 1.
    """

    stats: PEStats
    d0: float
    var_d_sample: float
    d_bound_continuous: float
    margin_sigmas: float

    def d0_for(self, pe_rounds: int, margin_sigmas: float | None = None) -> float:
        m = self.margin_sigmas if margin_sigmas is None else margin_sigmas
        return self.stats.d_pe + m * math.sqrt(
            max(self.var_d_sample, 0.0) / pe_rounds
        )


def paired_tables(
    cov: TwoModeCovariance,
    t_q: float,
    t_p: float,
    m_range: float,
    delta: float,
    trunc_sigmas: float = 10.0,
) -> tuple[JointPMF, JointPMF]:
    """(phase table, amplitude table); computed once when they coincide.

    For the symmetric states produced by the source/loss model the aligned
    phase and amplitude pairs have identical second moments, so a single
    table serves both the PE-statistics and the leakage computation.
    """
    pmf_p = joint_pmf(cov, t_p, "p", m_range, delta, trunc_sigmas)
    if _aligned_pair_moments(cov, t_p, "p") == _aligned_pair_moments(cov, t_q, "q"):
        return pmf_p, pmf_p
    return pmf_p, joint_pmf(cov, t_q, "q", m_range, delta, trunc_sigmas)


def expected_stats_from(
    pmf: JointPMF, pe_rounds: int, margin_sigmas: float = 5.0
) -> ExpectedPEStats:
    """Expected PE statistics and d0 recommendation from a phase table."""
    if pe_rounds < 1:
        raise ValueError(f"pe_rounds must be >= 1, got {pe_rounds}")
    d = pmf.mean_abs_diff()
    v_d = pmf.mean_sq_diff()
    stats = PEStats(
        d_pe=d, v_d_pe=v_d, v_ya_pe=pmf.m2_a(), v_yb_pe=pmf.m2_b()
    )
    var_d = max(v_d - d * d, 0.0)
    d0 = d + margin_sigmas * math.sqrt(var_d / pe_rounds)
    return ExpectedPEStats(
        stats=stats,
        d0=d0,
        var_d_sample=var_d,
        d_bound_continuous=math.nan,
        margin_sigmas=margin_sigmas,
    )


def expected_pe_stats(
    cov: TwoModeCovariance,
    scaling: float,
    m_range: float,
    delta: float,
    pe_rounds: int,
    margin_sigmas: float = 5.0,
    trunc_sigmas: float = 10.0,
) -> ExpectedPEStats:
    """Expected PE statistics of the honest state, from the binned phase pmf.

    ``d0`` is set ``margin_sigmas`` standard errors above the expected
    distance so the honest protocol passes with overwhelming probability.
    Also fills the conservative continuous-limit distance bound
    sigma_Delta sqrt(2/pi)/delta + 1.
    """
    pmf = joint_pmf(cov, scaling, "p", m_range, delta, trunc_sigmas)
    result = expected_stats_from(pmf, pe_rounds, margin_sigmas)
    var_a, var_b, c = _aligned_pair_moments(cov, scaling, "p")
    sigma_delta = math.sqrt(max(var_a + var_b - 2.0 * c, 0.0))
    bound = sigma_delta * math.sqrt(2.0 / math.pi) / delta + 1.0
    return ExpectedPEStats(
        stats=result.stats,
        d0=result.d0,
        var_d_sample=result.var_d_sample,
        d_bound_continuous=bound,
        margin_sigmas=margin_sigmas,
    )
