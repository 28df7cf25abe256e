"""Keystroke similarity baseline: Welch t-tests over shared digraph latencies.

Two sessions that were typed by the same person should produce digraph
latency samples drawn from the same distributions, so few per-digraph
two-sample tests reject. The similarity score is the count-weighted
fraction of shared digraphs whose test does NOT reject at alpha=0.01.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ringwatch.errors import InsufficientKeystrokeData, InsufficientOverlap, TooFewSamples
from ringwatch.features import N_MIN, keystroke_timings
from ringwatch.session import DEFAULT_POLICY, SessionRecord, ValidationPolicy, validate_session

ALPHA = 0.01  # per-digraph rejection level
MIN_SHARED_DIGRAPHS = 5

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_BETACF_FPMIN = 1e-300


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    dof: float
    p_value: float


def digraph_samples(record: SessionRecord,
                    policy: ValidationPolicy = DEFAULT_POLICY) -> dict[str, list[float]]:
    """Latency samples per digraph; digraphs with fewer than N_MIN samples dropped."""
    if not validate_session(record, policy).usable_for_keystroke:
        raise InsufficientKeystrokeData(record.session_id)
    _, _, digraphs = keystroke_timings(record)
    grouped: dict[str, list[float]] = {}
    for name, latency in digraphs:
        grouped.setdefault(name, []).append(latency)
    return {name: samples for name, samples in grouped.items() if len(samples) >= N_MIN}


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_FPMIN:
        d = _BETACF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: float) -> float:
    """Two-sided tail probability of Student's t via the incomplete beta."""
    if not math.isfinite(t):
        return 0.0
    x = dof / (dof + t * t)
    return regularized_incomplete_beta(0.5 * dof, 0.5, x)


def welch_t(a: list[float] | np.ndarray, b: list[float] | np.ndarray) -> TTestResult:
    """Welch two-sample t-test (unequal variances), two-sided.

    Degenerate zero-variance inputs are defined rather than raised: equal
    constant samples give (t=0, p=1); differing constants give p=0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise TooFewSamples(f"need >= 2 samples per side, got {na} and {nb}")
    mean_a, mean_b = a.mean(), b.mean()
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    if var_a == 0.0 and var_b == 0.0:
        dof = float(na + nb - 2)
        if mean_a == mean_b:
            return TTestResult(t_stat=0.0, dof=dof, p_value=1.0)
        return TTestResult(t_stat=math.copysign(math.inf, mean_a - mean_b),
                           dof=dof, p_value=0.0)
    sa = var_a / na
    sb = var_b / nb
    t = float((mean_a - mean_b) / math.sqrt(sa + sb))
    dof = float((sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1)))
    return TTestResult(t_stat=t, dof=dof, p_value=student_t_two_sided_p(t, dof))


def similarity_from_samples(samples_a: dict[str, list[float]],
                            samples_b: dict[str, list[float]],
                            alpha: float = ALPHA,
                            min_shared: int = MIN_SHARED_DIGRAPHS) -> float:
    """Score two precomputed digraph sample maps (see ttest_similarity)."""
    shared = sorted(set(samples_a) & set(samples_b))
    if len(shared) < min_shared:
        raise InsufficientOverlap(
            f"{len(shared)} shared digraphs, need {min_shared}")
    weight_total = 0.0
    weight_pass = 0.0
    for name in shared:
        result = welch_t(samples_a[name], samples_b[name])
        weight = float(min(len(samples_a[name]), len(samples_b[name])))
        weight_total += weight
        if result.p_value > alpha:
            weight_pass += weight
    return weight_pass / weight_total


def ttest_similarity(session_a: SessionRecord,
                     session_b: SessionRecord,
                     alpha: float = ALPHA,
                     min_shared: int = MIN_SHARED_DIGRAPHS,
                     policy: ValidationPolicy = DEFAULT_POLICY) -> float:
    """Similarity in [0, 1]: weighted fraction of shared digraphs not rejected.

    Weights are the smaller per-digraph sample count, so well-attested
    digraphs dominate. Symmetric in its arguments by construction.
    """
    return similarity_from_samples(digraph_samples(session_a, policy),
                                   digraph_samples(session_b, policy),
                                   alpha=alpha, min_shared=min_shared)
