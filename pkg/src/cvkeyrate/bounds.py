"""Closed-form bound functions for the finite-key analysis.

Tail bounds are evaluated in the log2 domain first (the energy-test tail
underflows double precision at realistic parameters) and clipped to [0, 1]
as probabilities afterwards.  All functions here are pure arithmetic on
their arguments; unit conversions (see :mod:`cvkeyrate.keyrate`) happen at
the call sites.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import spherical_jn

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# protocol parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolParams:
    """Tunable protocol parameters.

    ``2 * m_range / delta`` must be an integer (the number of bins); the
    energy-test threshold obeys ``alpha <= mu_test * m_range`` where it is
    used (checked in :func:`big_gamma_log2`).
    """

    n_tot: int
    r: float
    delta: float
    m_range: float
    alpha: float
    transmittance: float
    d0: float

    def __post_init__(self):
        if self.n_tot < 1:
            raise ValueError(f"n_tot must be >= 1, got {self.n_tot}")
        if not 0.0 < self.r < 1.0:
            raise ValueError(f"r must be in (0, 1), got {self.r}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.m_range <= 0:
            raise ValueError(f"m_range must be positive, got {self.m_range}")
        nbins = 2.0 * self.m_range / self.delta
        if abs(nbins - round(nbins)) > 1e-6 * max(nbins, 1.0):
            raise ValueError(
                f"2*m_range/delta must be an integer, got {nbins}"
            )
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.5 < self.transmittance < 1.0:
            raise ValueError(
                f"transmittance must be in (0.5, 1), got {self.transmittance}"
            )
        if self.d0 < 0:
            raise ValueError(f"d0 must be >= 0, got {self.d0}")

    @property
    def n_bins(self) -> int:
        return int(round(2.0 * self.m_range / self.delta))

    @property
    def m_over_delta(self) -> float:
        return self.m_range / self.delta


@dataclass(frozen=True)
class SecurityBudget:
    """Failure probabilities of the individual proof steps."""

    eps_s: float = 1e-9
    eps_c: float = 1e-9
    eps_1: float = 0.5e-9
    eps_2: float = 1e-10
    eps_t: float = 1e-9

    def __post_init__(self):
        for name in ("eps_s", "eps_c", "eps_1", "eps_2", "eps_t"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.eps_1 >= self.eps_s:
            raise ValueError("eps_1 must be smaller than eps_s")
        if self.eps_2 >= self.eps_s:
            raise ValueError("eps_2 must be smaller than eps_s")

    @classmethod
    def default(cls, eps_s: float = 1e-9, eps_c: float = 1e-9,
                eps_t: float = 1e-9) -> "SecurityBudget":
        """Standard split: eps_1 = eps_s/2 and eps_2 = eps_s/10."""
        return cls(eps_s=eps_s, eps_c=eps_c, eps_1=eps_s / 2.0,
                   eps_2=eps_s / 10.0, eps_t=eps_t)


@dataclass(frozen=True)
class RoundCounts:
    """Round bookkeeping: n both-amplitude, k both-phase, m per-party phase."""

    n: int
    k: int
    m: int

    def __post_init__(self):
        for name in ("n", "k", "m"):
            v = getattr(self, name)
            if v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.k > self.m:
            raise ValueError(f"k={self.k} cannot exceed m={self.m}")

    @property
    def n_cap(self) -> int:
        """N = n + k, the joint population size."""
        return self.n + self.k


@dataclass(frozen=True)
class PEStats:
    """Parameter-estimation statistics, in bin-index units.

    ``d_pe`` is the average index distance of the both-phase rounds,
    ``v_d_pe`` its average second moment, and ``v_ya_pe``/``v_yb_pe`` the
    average second moments of each party's full phase string.
    """

    d_pe: float
    v_d_pe: float
    v_ya_pe: float
    v_yb_pe: float

    def __post_init__(self):
        for name in ("d_pe", "v_d_pe", "v_ya_pe", "v_yb_pe"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")


# ---------------------------------------------------------------------------
# overlap of binned amplitude and phase measurements
# ---------------------------------------------------------------------------


def _prolate_r00_at_1(c: float, n_terms: int | None = None) -> float:
    """Radial prolate spheroidal function R_00^(1)(c, xi=1).

    Legendre-expansion eigenproblem: the even-order expansion coefficients
    d_r of the order-(0,0) angular function solve a tridiagonal eigenvalue
    problem (Flammer normalization cancels in the ratio used here), and

        R_00^(1)(c, 1) = sum_r (-1)^(r/2) d_r j_r(c) / sum_r d_r

    over even r, with j_r the spherical Bessel functions.
    """
    if n_terms is None:
        n_terms = 40 + int(2.0 * c)
    r = 2.0 * np.arange(n_terms)
    upper = (r + 2) * (r + 1) * c * c / ((2 * r + 3) * (2 * r + 5))
    diag = r * (r + 1) + c * c * (2 * r * (r + 1) - 1) / ((2 * r - 1) * (2 * r + 3))
    lower = r * (r - 1) * c * c / ((2 * r - 3) * (2 * r - 1))
    mat = np.diag(diag) + np.diag(upper[:-1], 1) + np.diag(lower[1:], -1)
    vals, vecs = np.linalg.eig(mat)
    order = np.argsort(vals.real)
    d = vecs[:, order[0]].real
    jr = spherical_jn((2 * np.arange(n_terms)).astype(int), c)
    signs = (-1.0) ** np.arange(n_terms)
    return float(np.sum(signs * d * jr) / np.sum(d))


def overlap_c(delta: float, mode: str = "approx") -> float:
    """Overlap of amplitude and phase measurements binned at width ``delta``.

    ``approx`` returns ``delta^2 / (2 pi)``; ``exact`` multiplies by the
    squared radial prolate spheroidal value ``R_00^(1)(delta^2/4, 1)^2``
    (equal to the top eigenvalue of the sinc-kernel concentration operator).
    The exact mode's series evaluation is guarded to ``delta <= 4``.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    approx = delta * delta / (2.0 * math.pi)
    if mode == "approx":
        return approx
    if mode == "exact":
        if delta > 4.0:
            raise ValueError("exact overlap mode supports delta <= 4")
        return approx * _prolate_r00_at_1(delta * delta / 4.0) ** 2
    raise ValueError(f"mode must be 'approx' or 'exact', got {mode!r}")


# ---------------------------------------------------------------------------
# max-entropy estimate and energy-test tail
# ---------------------------------------------------------------------------


def gamma_fn_log2(t: float) -> float:
    """log2 of gamma(t) = (t + sqrt(1+t^2)) * (t / (sqrt(1+t^2) - 1))^t.

    Uses sqrt(1+t^2) - 1 = t^2 / (sqrt(1+t^2) + 1) to avoid cancellation,
    and stays in the log domain for large t.  gamma(0) = 1 by continuity.
    """
    if t < 0:
        raise ValueError(f"distance must be >= 0, got {t}")
    if t == 0.0:
        return 0.0
    s = math.sqrt(1.0 + t * t)
    # t / (s - 1) == (s + 1) / t
    return math.log2(t + s) + t * (math.log2(s + 1.0) - math.log2(t))


def gamma_fn(t: float) -> float:
    """Linear-domain gamma(t); may overflow for very large t (use the log form)."""
    return 2.0 ** gamma_fn_log2(t)


def mu_test_of(transmittance: float) -> float:
    """Beam-splitter constant sqrt((1-T)/(2T)) of the energy test."""
    if not 0.5 < transmittance < 1.0:
        raise ValueError(f"transmittance must be in (0.5, 1), got {transmittance}")
    return math.sqrt((1.0 - transmittance) / (2.0 * transmittance))


def big_gamma_log2(m_range: float, transmittance: float, alpha: float) -> float:
    """log2 of the energy-test tail Gamma(M, T, alpha).

    Requires ``alpha <= mu_test * m_range``.  ``m_range`` and ``alpha`` must
    be supplied in canonically normalized quadrature units (vacuum variance
    1/2); callers holding hbar = 2 quantities divide them by sqrt(2).
    """
    mu_t = mu_test_of(transmittance)
    if alpha > mu_t * m_range:
        raise ValueError(
            f"alpha={alpha} exceeds mu_test*M={mu_t * m_range}; "
            "the tail bound requires alpha <= mu_test*M"
        )
    lam = ((2.0 * transmittance - 1.0) / transmittance) ** 2
    prefactor = 0.5 * (math.sqrt(1.0 + lam) + math.sqrt(1.0 + 1.0 / lam))
    exponent = -((mu_t * m_range - alpha) ** 2) / (transmittance * (1.0 + lam) / 2.0)
    return math.log2(prefactor) + exponent / LN2


def big_gamma(m_range: float, transmittance: float, alpha: float) -> float:
    """Energy-test tail as a probability, clipped to [0, 1]."""
    lg = big_gamma_log2(m_range, transmittance, alpha)
    if lg >= 0.0:
        return 1.0
    return 2.0**lg


# ---------------------------------------------------------------------------
# energy-test calibration (robustness side)
# ---------------------------------------------------------------------------


def abort_bound(sigma_t: float, n_tot: float, alpha: float) -> float:
    """Honest abort probability bound sqrt(8 pi) sigma_t N exp(-alpha^2/(2 sigma_t^2))."""
    if sigma_t <= 0 or n_tot <= 0 or alpha <= 0:
        raise ValueError("sigma_t, n_tot and alpha must be positive")
    log_val = (
        0.5 * math.log(8.0 * math.pi) + math.log(sigma_t) + math.log(n_tot)
        - alpha * alpha / (2.0 * sigma_t * sigma_t)
    )
    if log_val >= 0.0:
        return 1.0
    return math.exp(log_val)


def alpha_for(sigma_t: float, n_tot: float, eps_t: float) -> float:
    """Threshold alpha making the honest abort bound equal eps_t.

    Returns 0 with a warning when the bound cannot reach eps_t for any
    positive alpha (log argument <= 1).
    """
    if eps_t <= 0.0:
        raise ValueError(f"eps_t must be positive, got {eps_t}")
    arg = math.sqrt(8.0 * math.pi) * sigma_t * n_tot / eps_t
    if arg <= 1.0:
        warnings.warn(
            "abort budget already met at alpha = 0; returning 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return math.sqrt(2.0 * sigma_t * sigma_t * math.log(arg))


def choose_m_range(
    transmittance: float,
    alpha: float,
    n: float,
    eps_2: float,
    delta: float,
) -> float:
    """Smallest M with 2*sqrt(2 n Gamma(M, T, alpha)) <= eps_2.

    Inverts the tail exponent in the log domain and rounds M up to the next
    multiple of ``delta`` so that the bin count stays integral.  ``alpha``,
    ``delta`` and the returned M share whatever units the caller uses for
    :func:`big_gamma_log2`.
    """
    if n <= 0 or alpha < 0 or delta <= 0:
        raise ValueError("n and delta must be positive, alpha non-negative")
    if not 0.0 < eps_2 < 1.0:
        raise ValueError(f"eps_2 must be in (0, 1), got {eps_2}")
    mu_t = mu_test_of(transmittance)
    lam = ((2.0 * transmittance - 1.0) / transmittance) ** 2
    prefactor = 0.5 * (math.sqrt(1.0 + lam) + math.sqrt(1.0 + 1.0 / lam))
    # 2 sqrt(2 n Gamma) <= eps_2  <=>  log2 Gamma <= 2 log2(eps_2/2) - log2(2n)
    target = 2.0 * math.log2(eps_2 / 2.0) - math.log2(2.0 * n)
    need = math.log2(prefactor) - target
    dist = math.sqrt(max(need, 0.0) * LN2 * transmittance * (1.0 + lam) / 2.0)
    m_min = (alpha + dist) / mu_t
    steps = math.ceil(m_min / delta - 1e-12)
    return steps * delta


# ---------------------------------------------------------------------------
# sampling-without-replacement penalties
# ---------------------------------------------------------------------------


def serfling_bound(n: float, m: float, nu: float, m_over_delta: float) -> float:
    """Tail bound for the second-moment drift between PE and key samples.

    exp(-2 nu^2 n m^2 / ((M/delta)^4 (n+m)(m+1))), clipped to [0, 1];
    ``nu`` is in squared index units.
    """
    if n <= 0 or m <= 0 or m_over_delta <= 0:
        raise ValueError("n, m and m_over_delta must be positive")
    if nu < 0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    expo = -2.0 * nu * nu * n * m * m / (
        m_over_delta**4 * (n + m) * (m + 1.0)
    )
    return math.exp(expo) if expo < 0 else 1.0


def bernstein_bound(
    n: float,
    k: float,
    n_cap: float,
    mu: float,
    sigma: float,
    m_over_delta: float,
) -> float:
    """Tail bound for the distance drift between PE and key samples.

    exp(-mu^2 n (k/N)^2 / (2 sigma^2 + (4 mu / 3)(k/N)(M/delta))), clipped;
    valid for sampling without replacement.
    """
    if n <= 0 or k <= 0 or n_cap <= 0 or m_over_delta <= 0:
        raise ValueError("n, k, n_cap and m_over_delta must be positive")
    if mu < 0 or sigma < 0:
        raise ValueError("mu and sigma must be >= 0")
    if mu == 0.0:
        return 1.0
    frac = k / n_cap
    denom = 2.0 * sigma * sigma + (4.0 * mu / 3.0) * frac * m_over_delta
    expo = -mu * mu * n * frac * frac / denom
    return math.exp(expo) if expo < 0 else 1.0


# ---------------------------------------------------------------------------
# Theorem-style auxiliary quantities
# ---------------------------------------------------------------------------


class SigmaStar(NamedTuple):
    value: float
    floored: bool


def sigma_star(
    counts: RoundCounts, stats: PEStats, nu: float, delta: float
) -> SigmaStar:
    """Population standard-deviation bound sigma_* from the PE statistics.

    sigma_*^2 = (k/N)(V_d - (k/N) d^2) + (k/N)(V_A + V_B + 2 nu/delta^2)
                + 2 (k/N) sqrt((V_A + nu/delta^2)(V_B + nu/delta^2))

    A negative first radicand is floored at zero and flagged.
    """
    if nu < 0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    frac = counts.k / counts.n_cap
    first = stats.v_d_pe - frac * stats.d_pe**2
    floored = first < 0.0
    first = max(first, 0.0)
    shift = nu / (delta * delta)
    s2 = (
        frac * first
        + frac * (stats.v_ya_pe + stats.v_yb_pe + 2.0 * shift)
        + 2.0 * frac * math.sqrt((stats.v_ya_pe + shift) * (stats.v_yb_pe + shift))
    )
    return SigmaStar(math.sqrt(max(s2, 0.0)), floored)


def xi_fn(
    budget: SecurityBudget,
    counts: RoundCounts,
    gamma_val: float,
    nu: float,
    m_range: float,
) -> float:
    """Smoothing margin xi for a candidate nu.

    xi = (eps_s - eps_1 - 2 sqrt(2 n Gamma))^2
         - 2 exp(-2 (nu/M)^2 n m^2 / ((n+m)(m+1)))

    Returns ``-inf`` when the energy-test budget is exhausted
    (eps_s - eps_1 - 2 sqrt(2 n Gamma) <= 0), in which case no nu is valid
    and the key length is zero.
    """
    if m_range <= 0:
        raise ValueError(f"m_range must be positive, got {m_range}")
    base = budget.eps_s - budget.eps_1 - 2.0 * math.sqrt(2.0 * counts.n * gamma_val)
    if base <= 0.0:
        return -math.inf
    n, m = counts.n, counts.m
    expo = -2.0 * (nu / m_range) ** 2 * n * m * m / ((n + m) * (m + 1.0))
    tail = 2.0 * math.exp(expo) if expo < 0 else 2.0
    return base * base - tail


def smallest_valid_nu(
    budget: SecurityBudget,
    counts: RoundCounts,
    gamma_val: float,
    m_range: float,
    rel_tol: float = 1e-6,
) -> float | None:
    """Smallest nu with xi > 0, by bisection over [0, M^2].

    xi is monotone increasing in nu.  Returns None when no nu in the search
    interval achieves xi > 0 (zero-key condition).
    """
    lo, hi = 0.0, m_range * m_range
    if xi_fn(budget, counts, gamma_val, hi, m_range) <= 0.0:
        return None
    if xi_fn(budget, counts, gamma_val, lo, m_range) > 0.0:
        return lo
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if xi_fn(budget, counts, gamma_val, mid, m_range) > 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def mu_stat(
    counts: RoundCounts,
    sigma_star_val: float,
    xi_val: float,
    m_over_delta: float,
    log_base: float = 2.0,
) -> float:
    """Statistical distance penalty mu.

    mu = sqrt(2 log(1/xi)) (n+k) sigma_* / (k sqrt(n))
         + (4 (M/delta) log(1/xi) / 3) (n+k) / (n k)

    The logarithm base defaults to 2 (the global convention); base e is the
    variant matching the natural-log tail derivations.
    """
    if xi_val >= 1.0:
        return 0.0
    if xi_val <= 0.0:
        raise ValueError(f"xi must be positive, got {xi_val}")
    if log_base not in (2.0, math.e):
        raise ValueError(f"log_base must be 2 or e, got {log_base}")
    log_inv = -math.log(xi_val) / math.log(log_base)
    n, k = counts.n, counts.k
    ncap = counts.n_cap
    return (
        math.sqrt(2.0 * log_inv) * ncap * sigma_star_val / (k * math.sqrt(n))
        + (4.0 * m_over_delta * log_inv / 3.0) * ncap / (n * k)
    )


def epsilon_tilde(n: float, gamma_val: float, p_pass: float = 1.0) -> float:
    """Diagnostic purified-distance contribution sqrt(2 n Gamma / p_pass)."""
    if not 0.0 < p_pass <= 1.0:
        raise ValueError(f"p_pass must be in (0, 1], got {p_pass}")
    if n < 0 or gamma_val < 0:
        raise ValueError("n and gamma_val must be >= 0")
    return math.sqrt(2.0 * n * gamma_val / p_pass)
