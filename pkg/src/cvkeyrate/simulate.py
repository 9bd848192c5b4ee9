"""Monte Carlo execution of the protocol and tail-bound validation.

The protocol runs on sampled Gaussian data in streamed blocks with
counter-based per-block RNG streams (Philox, jumped from the master seed),
so results are identical for any block schedule.  Only aggregates and an
optional reservoir of early rounds are retained.

The bound validators report ``{bound, frequency, stderr, verdict}`` per
check and are the executable evidence that the closed-form tails dominate
the observed frequencies (at parameters where the frequencies are
observable).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds
from .binning import bin_index
from .bounds import PEStats, ProtocolParams, RoundCounts
from .gaussian import ChannelParams, channel_state, scaling_factors
from .keyrate import SQRT2, gamma_canonical_log2, sigma_t_of


def _rng_for_block(seed: int, block: int) -> np.random.Generator:
    # independent counter-based stream per block, reproducible under any
    # parallel schedule
    return np.random.Generator(np.random.Philox(key=seed).jumped(block))


@dataclass
class SimRecord:
    """Aggregated outcome of one protocol run."""

    seed: int
    n_tot: int
    n: int
    k: int
    m_a: int
    m_b: int
    pe_stats: PEStats | None
    d0: float
    alpha: float
    aborted_energy: bool
    aborted_distance: bool
    passed: bool
    max_energy_outcome: float
    empirical: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    def round_counts(self) -> RoundCounts:
        """Counts for the bound formulas; m is the smaller phase-string length."""
        return RoundCounts(n=self.n, k=self.k, m=min(self.m_a, self.m_b))


def run_protocol(
    ch: ChannelParams,
    pp: ProtocolParams,
    seed: int,
    block_size: int = 1_000_000,
    keep_samples: int = 0,
) -> SimRecord:
    """Simulate measurement, data generation and the tests for one run.

    Per round both parties choose phase with probability r (independently);
    same-basis rounds draw the correlated two-dimensional marginal of the
    post-channel covariance, mixed rounds draw independent marginals.  The
    energy-test outcomes are independent Gaussians with the heterodyne
    standard deviation sigma_t.  Alice's values are scaled by (t_q, -t_p)
    before binning.  Abort is a result state, not an error.
    """
    cov = channel_state(ch)
    t_q, t_p = scaling_factors(cov)
    sigma_t = sigma_t_of(cov, pp.transmittance)
    var = {
        "q": (cov.variance("q", "a"), cov.variance("q", "b"), cov.correlation("q")),
        "p": (cov.variance("p", "a"), cov.variance("p", "b"), cov.correlation("p")),
    }

    n_same_q = 0
    k_same_p = 0
    m_a = 0
    m_b = 0
    sum_d = 0.0
    sum_d2 = 0.0
    sum_m2_a = 0.0
    sum_m2_b = 0.0
    max_energy = 0.0
    aborted_energy = False
    # same-basis second-moment accumulators, per quadrature
    acc = {q: np.zeros(4) for q in ("q", "p")}  # sums of A^2, B^2, A*B, count
    acc_energy = np.zeros(2)  # sum of outcome^2, count
    center = pp.m_range / pp.delta
    kept: dict[str, list] = {}

    n_blocks = (pp.n_tot + block_size - 1) // block_size
    for blk in range(n_blocks):
        size = min(block_size, pp.n_tot - blk * block_size)
        rng = _rng_for_block(seed, blk)
        alice_p = rng.random(size) < pp.r
        bob_p = rng.random(size) < pp.r
        g1 = rng.standard_normal(size)
        g2 = rng.standard_normal(size)
        qt1 = sigma_t * rng.standard_normal(size)
        pt2 = sigma_t * rng.standard_normal(size)

        a_raw = np.empty(size)
        b_raw = np.empty(size)
        for quad, a_mask in (("q", ~alice_p), ("p", alice_p)):
            va = var[quad][0]
            a_raw[a_mask] = math.sqrt(va) * g1[a_mask]
        for quad, b_mask in (("q", ~bob_p), ("p", bob_p)):
            va, vb, c = var[quad]
            same = b_mask & (alice_p == (quad == "p"))
            mixed = b_mask & ~same
            slope = c / va
            resid = math.sqrt(vb - c * c / va)
            b_raw[same] = slope * a_raw[same] + resid * g2[same]
            b_raw[mixed] = math.sqrt(vb) * g2[mixed]

        a_scaled = np.where(alice_p, -t_p * a_raw, t_q * a_raw)
        ia = bin_index(a_scaled, pp.m_range, pp.delta)
        ib = bin_index(b_raw, pp.m_range, pp.delta)

        block_max = max(np.abs(qt1).max(), np.abs(pt2).max()) if size else 0.0
        max_energy = max(max_energy, float(block_max))
        if (np.abs(qt1) > pp.alpha).any() or (np.abs(pt2) > pp.alpha).any():
            aborted_energy = True

        both_q = ~alice_p & ~bob_p
        both_p = alice_p & bob_p
        n_same_q += int(both_q.sum())
        k_same_p += int(both_p.sum())
        m_a += int(alice_p.sum())
        m_b += int(bob_p.sum())
        dvals = np.abs(ia[both_p] - ib[both_p]).astype(float)
        sum_d += dvals.sum()
        sum_d2 += (dvals**2).sum()
        sum_m2_a += ((ia[alice_p] - center) ** 2).sum()
        sum_m2_b += ((ib[bob_p] - center) ** 2).sum()

        for quad, mask in (("q", both_q), ("p", both_p)):
            acc[quad] += (
                (a_raw[mask] ** 2).sum(),
                (b_raw[mask] ** 2).sum(),
                (a_raw[mask] * b_raw[mask]).sum(),
                mask.sum(),
            )
        acc_energy += ((qt1**2).sum() + (pt2**2).sum(), 2 * size)

        if keep_samples and len(kept.get("ia", ())) < keep_samples:
            take = keep_samples - len(kept.get("ia", []))
            for name, arr in (
                ("a_raw", a_raw), ("b_raw", b_raw), ("a_scaled", a_scaled),
                ("ia", ia), ("ib", ib), ("qt1", qt1), ("pt2", pt2),
                ("alice_p", alice_p), ("bob_p", bob_p),
            ):
                kept.setdefault(name, []).extend(arr[:take].tolist())

    pe = None
    aborted_distance = False
    if k_same_p > 0 and m_a > 0 and m_b > 0:
        pe = PEStats(
            d_pe=sum_d / k_same_p,
            v_d_pe=sum_d2 / k_same_p,
            v_ya_pe=sum_m2_a / m_a,
            v_yb_pe=sum_m2_b / m_b,
        )
        aborted_distance = pe.d_pe > pp.d0

    empirical = {"sigma_t": math.sqrt(acc_energy[0] / acc_energy[1])}
    for quad in ("q", "p"):
        s_a2, s_b2, s_ab, cnt = acc[quad]
        if cnt > 1:
            empirical[f"var_a_{quad}"] = s_a2 / cnt
            empirical[f"var_b_{quad}"] = s_b2 / cnt
            empirical[f"cov_{quad}"] = s_ab / cnt
            empirical[f"count_{quad}"] = int(cnt)

    return SimRecord(
        seed=seed,
        n_tot=pp.n_tot,
        n=n_same_q,
        k=k_same_p,
        m_a=m_a,
        m_b=m_b,
        pe_stats=pe,
        d0=pp.d0,
        alpha=pp.alpha,
        aborted_energy=aborted_energy,
        aborted_distance=aborted_distance,
        passed=not (aborted_energy or aborted_distance),
        max_energy_outcome=max_energy,
        empirical=empirical,
        samples={k_: np.asarray(v) for k_, v in kept.items()},
    )


# ---------------------------------------------------------------------------
# bound-vs-frequency reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    """One bound-domination comparison."""

    name: str
    bound: float
    frequency: float
    stderr: float
    trials: int
    verdict: str  # "ok" when bound >= frequency - 3 stderr

    @staticmethod
    def from_counts(name: str, bound: float, hits: int, trials: int) -> "BoundCheck":
        freq = hits / trials
        se = math.sqrt(max(freq * (1.0 - freq), 1.0 / trials) / trials)
        ok = bound >= freq - 3.0 * se
        return BoundCheck(name, bound, freq, se, trials, "ok" if ok else "violated")


@dataclass(frozen=True)
class AgreementCheck:
    """A moment-agreement comparison (expected vs observed, 5 sigma)."""

    name: str
    expected: float
    observed: float
    stderr: float
    verdict: str


def _report_json(checks) -> str:
    return json.dumps([asdict(c) for c in checks], indent=2)


@dataclass
class EnergyTestReport:
    bound_checks: list[BoundCheck]
    agreement_checks: list[AgreementCheck]
    sigma_t: float
    gamma_log2_canonical: float

    def all_ok(self) -> bool:
        return all(c.verdict == "ok" for c in self.bound_checks + self.agreement_checks)

    def to_json(self) -> str:
        return _report_json(self.bound_checks + self.agreement_checks)


def mc_verify_energy_test(
    ch: ChannelParams,
    pp: ProtocolParams,
    trials: int,
    seed: int = 20240,
    include_naive_units_check: bool = False,
) -> EnergyTestReport:
    """Validate the honest abort bound and the adversarial tail bound.

    Honest side: frequency of a single-round threshold violation against the
    per-round abort bound.  Adversarial side: coherent states displaced to
    amplitude M/sqrt(T) (so the post-tap homodyne sees M on average; a
    literal displacement M is also reported) are injected at the channel
    output and the frequency of the test passing anyway is compared against
    the tail bound.  Use an inflated alpha / small M so the frequencies are
    observable.

    ``include_naive_units_check`` adds an informational row evaluating the
    tail at unscaled hbar=2 arguments; that evaluation is not a valid bound
    and is expected to be violated.
    """
    if trials < 10_000:
        raise ValueError("need at least 1e4 trials for meaningful frequencies")
    cov = channel_state(ch)
    sigma_t = sigma_t_of(cov, pp.transmittance)
    rng = np.random.Generator(np.random.Philox(key=seed))
    T = pp.transmittance

    checks: list[BoundCheck] = []

    # honest: per-round failure of either heterodyne threshold
    qt1 = sigma_t * rng.standard_normal(trials)
    pt2 = sigma_t * rng.standard_normal(trials)
    hits = int(((np.abs(qt1) > pp.alpha) | (np.abs(pt2) > pp.alpha)).sum())
    checks.append(
        BoundCheck.from_counts(
            "honest-abort-per-round",
            bounds.abort_bound(sigma_t, 1, pp.alpha),
            hits,
            trials,
        )
    )

    # adversarial: displaced coherent input, explicit beam-splitter chain
    gamma_log2 = gamma_canonical_log2(pp.m_range, T, pp.alpha)
    gamma_bound = 1.0 if gamma_log2 >= 0 else 2.0 ** max(gamma_log2, -1074.0)
    for label, disp in (
        ("tap-compensated", pp.m_range / math.sqrt(T)),
        ("literal", pp.m_range),
    ):
        g_s = rng.standard_normal(trials)
        g_a = rng.standard_normal(trials)
        g_b = rng.standard_normal(trials)
        qt = (
            math.sqrt((1.0 - T) / 2.0) * (disp + g_s)
            - math.sqrt(T / 2.0) * g_a
            + math.sqrt(0.5) * g_b
        )
        hits = int((np.abs(qt) <= pp.alpha).sum())
        checks.append(
            BoundCheck.from_counts(
                f"tail-displaced-{label}", gamma_bound, hits, trials
            )
        )
        if include_naive_units_check:
            naive_log2 = bounds.big_gamma_log2(pp.m_range, T, pp.alpha)
            naive = 1.0 if naive_log2 >= 0 else 2.0 ** max(naive_log2, -1074.0)
            checks.append(
                BoundCheck.from_counts(
                    f"tail-displaced-{label}-naive-units-informational",
                    naive,
                    hits,
                    trials,
                )
            )

    # sigma_t from the explicit mode-mixing transform (the closed form's oracle)
    v_b = max(cov.variance("q", "b"), cov.variance("p", "b"))
    s = math.sqrt(v_b) * rng.standard_normal(trials)
    qt_mix = (
        math.sqrt((1.0 - T) / 2.0) * s
        - math.sqrt(T / 2.0) * rng.standard_normal(trials)
        + math.sqrt(0.5) * rng.standard_normal(trials)
    )
    observed = float(np.std(qt_mix))
    se = observed / math.sqrt(2.0 * (trials - 1))
    agreement = [
        AgreementCheck(
            "sigma-t-mode-mixing",
            expected=sigma_t,
            observed=observed,
            stderr=se,
            verdict="ok" if abs(observed - sigma_t) <= 5.0 * se else "violated",
        )
    ]
    return EnergyTestReport(
        bound_checks=checks,
        agreement_checks=agreement,
        sigma_t=sigma_t,
        gamma_log2_canonical=gamma_log2,
    )


@dataclass(frozen=True)
class PopulationSpec:
    """Adversarial two-valued populations for the sampling-bound checks.

    Second-moment (Serfling) check: ``n + m`` phase indices, a fraction
    ``frac_extreme`` at the top bin and the rest at the center bin.
    Distance (Bernstein) check: ``n + k`` index pairs, a fraction
    ``frac_extreme`` at maximal distance and the rest at distance zero.
    ``target_bound`` sets the slack (nu, mu) so the bound is observable.
    """

    n: int = 10_000
    m: int = 10_000
    k: int = 10_000
    m_over_delta: float = 10.0
    frac_extreme: float = 0.5
    target_bound: float = 0.1

    def __post_init__(self):
        if min(self.n, self.m, self.k) < 2:
            raise ValueError("population parts must have at least 2 entries")
        if max(self.n + self.m, self.n + self.k) > 1_000_000:
            raise ValueError("population sizes are limited to 1e6 per trial")
        if not 0.0 < self.frac_extreme < 1.0:
            raise ValueError("frac_extreme must be in (0, 1)")
        if not 0.0 < self.target_bound < 1.0:
            raise ValueError("target_bound must be in (0, 1)")


@dataclass
class SamplingBoundsReport:
    bound_checks: list[BoundCheck]
    nu: float
    mu: float

    def all_ok(self) -> bool:
        return all(c.verdict == "ok" for c in self.bound_checks)

    def to_json(self) -> str:
        return _report_json(self.bound_checks)


def mc_verify_sampling_bounds(
    spec: PopulationSpec,
    trials: int,
    seed: int = 20241,
    permutation_trials: int = 20_000,
) -> SamplingBoundsReport:
    """Empirical soundness of the two sampling-without-replacement tails.

    For the two-valued adversarial populations the without-replacement
    statistics are exactly hypergeometric, so the main checks sample
    hypergeometric counts directly (letting ``trials`` reach 1e5+ cheaply).
    Explicit random-permutation trials on a mixed-valued population
    cross-check the equivalence.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    checks: list[BoundCheck] = []
    mdelta = spec.m_over_delta
    log_inv = math.log(1.0 / spec.target_bound)

    # --- second-moment drift (key sample vs PE sample) ---
    n, m = spec.n, spec.m
    total = n + m
    n_hi = int(spec.frac_extreme * total)
    w_hi = mdelta**2  # squared index offset of the top bin, (2M/d - M/d)^2
    nu = math.sqrt(log_inv * mdelta**4 * (n + m) * (m + 1) / (2.0 * n * m * m))
    srf_bound = bounds.serfling_bound(n, m, nu, mdelta)
    h = rng.hypergeometric(n_hi, total - n_hi, m, size=trials)
    v_pe = h * w_hi / m
    v_key = (n_hi - h) * w_hi / n
    hits = int((v_key >= v_pe + nu).sum())
    checks.append(BoundCheck.from_counts("serfling-bimodal", srf_bound, hits, trials))

    # permutation cross-check on a mixed-valued population
    nbins = int(2 * mdelta)
    values = rng.integers(1, nbins + 1, size=total)
    w = (values - mdelta).astype(float) ** 2
    hits = 0
    for _ in range(permutation_trials):
        perm = rng.permutation(total)
        v_pe = w[perm[:m]].mean()
        v_key = w[perm[m:]].mean()
        hits += v_key >= v_pe + nu
    checks.append(
        BoundCheck.from_counts(
            "serfling-permutation", srf_bound, hits, permutation_trials
        )
    )

    # --- distance drift (key sample vs PE sample) ---
    k = spec.k
    ncap = n + k
    d_far = 2.0 * mdelta - 1.0
    n_far = int(spec.frac_extreme * ncap)
    f = n_far / ncap
    sigma = d_far * math.sqrt(f * (1.0 - f))
    # solve mu^2 a - mu b - c = 0 for the slack hitting the target bound
    a_coef = n * (k / ncap) ** 2
    b_coef = log_inv * (4.0 / 3.0) * (k / ncap) * mdelta
    c_coef = log_inv * 2.0 * sigma**2
    mu = (b_coef + math.sqrt(b_coef**2 + 4.0 * a_coef * c_coef)) / (2.0 * a_coef)
    brn_bound = bounds.bernstein_bound(n, k, ncap, mu, sigma, mdelta)
    h = rng.hypergeometric(n_far, ncap - n_far, k, size=trials)
    d_pe = h * d_far / k
    d_key = (n_far - h) * d_far / n
    hits = int((d_key >= d_pe + mu).sum())
    checks.append(BoundCheck.from_counts("bernstein-bimodal", brn_bound, hits, trials))

    # permutation cross-check with mixed distances
    dists = rng.integers(0, int(d_far) + 1, size=ncap).astype(float)
    dbar = dists.mean()
    sig_gen = math.sqrt((dists**2).mean() - dbar**2)
    brn_gen = bounds.bernstein_bound(n, k, ncap, mu, sig_gen, mdelta)
    hits = 0
    for _ in range(permutation_trials):
        perm = rng.permutation(ncap)
        d_pe = dists[perm[:k]].mean()
        d_key = dists[perm[k:]].mean()
        hits += d_key >= d_pe + mu
    checks.append(
        BoundCheck.from_counts(
            "bernstein-permutation", brn_gen, hits, permutation_trials
        )
    )

    return SamplingBoundsReport(bound_checks=checks, nu=nu, mu=mu)
