"""Numerically stable Gaussian tail probabilities and their log-derivatives.

The binary-measurement likelihood is built from the upper-tail probability
of a zero-mean Gaussian with variance ``r`` evaluated at a margin ``d``:

    q_tail(d, r)  = Q(d / sqrt(r))          upper tail ("sensor fired")
    cdf(d, r)     = 1 - q_tail(d, r)        lower tail ("sensor silent")

where Q is the complementary CDF of the standard normal. The MAP cost uses
the *logarithms* of these, which a naive ``log(q_tail(...))`` cannot deliver:
Q underflows around 38 standard deviations while the optimizer routinely
probes margins far beyond that. The logs are therefore computed through the
scaled complementary error function erfcx, which stays representable for
arbitrarily large arguments:

    ln Q(s) = ln(1/2) + ln erfcx(s/sqrt(2)) - s^2/2        (s >= 0)

For s < 0 the tail is close to one and ``log1p`` of the mirrored tail is
exact. First and second log-derivatives are analytic in the hazard ratio
g(s) = pdf(s)/Q(s):

    d/ds   ln Q(s) = -g(s)
    d^2/ds^2 ln Q(s) = g(s) * (s - g(s))  <= 0   (log-concavity)

All functions accept scalars or arrays for ``d``; ``r`` may be a scalar or
broadcast against ``d``. They are pure and thread-safe.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, erfcx

_SQRT2 = math.sqrt(2.0)
_LOG_HALF = math.log(0.5)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _standardize(d, r):
    """Validate (d, r) and return (s, sqrt_r, scalar) with s = d / sqrt(r)."""
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("margin d must be finite")
    if not np.all(np.isfinite(r)) or np.any(r <= 0.0):
        raise ValueError("noise variance r must be finite and > 0")
    sqrt_r = np.sqrt(r)
    s = d / sqrt_r
    scalar = s.ndim == 0
    return np.atleast_1d(s), np.atleast_1d(sqrt_r), scalar


def _maybe_scalar(x, scalar):
    return float(x[0]) if scalar else x


def q_tail(d, r):
    """Upper-tail probability Q(d / sqrt(r)) of a N(0, r) variable."""
    s, _, scalar = _standardize(d, r)
    return _maybe_scalar(0.5 * erfc(s / _SQRT2), scalar)


def cdf(d, r):
    """Lower-tail probability 1 - q_tail(d, r)."""
    s, _, scalar = _standardize(d, r)
    return _maybe_scalar(0.5 * erfc(-s / _SQRT2), scalar)


def _log_q_std(s):
    """ln Q(s) for standardized argument s, stable over the whole real line."""
    out = np.empty_like(s)
    pos = s >= 0.0
    if np.any(pos):
        t = s[pos] / _SQRT2
        out[pos] = _LOG_HALF + np.log(erfcx(t)) - t * t
    if np.any(~pos):
        # tail is near one; erfc of the mirrored argument never overflows here
        mirrored = 0.5 * erfc(-s[~pos] / _SQRT2)
        out[~pos] = np.log1p(-mirrored)
    return out


def log_q_tail(d, r):
    """ln q_tail(d, r), finite for every finite margin."""
    s, _, scalar = _standardize(d, r)
    return _maybe_scalar(_log_q_std(s), scalar)


def log_cdf(d, r):
    """ln cdf(d, r); by the complement rule this is log_q_tail(-d, r)."""
    s, _, scalar = _standardize(d, r)
    return _maybe_scalar(_log_q_std(-s), scalar)


def _hazard(s):
    """Hazard ratio g(s) = pdf(s) / Q(s), stable for all s."""
    out = np.empty_like(s)
    pos = s >= 0.0
    if np.any(pos):
        out[pos] = _SQRT_2_OVER_PI / erfcx(s[pos] / _SQRT2)
    if np.any(~pos):
        sn = s[~pos]
        # Q(s) in (0.5, 1) here, so the plain ratio is well conditioned;
        # pdf underflow for s << -38 correctly drives the hazard to 0
        pdf = np.exp(-0.5 * sn * sn - _LOG_SQRT_2PI)
        out[~pos] = pdf / (0.5 * erfc(sn / _SQRT2))
    return out


def dlog_q_tail(d, r):
    """d/dd ln q_tail(d, r); always negative."""
    s, sqrt_r, scalar = _standardize(d, r)
    return _maybe_scalar(-_hazard(s) / sqrt_r, scalar)


def dlog_cdf(d, r):
    """d/dd ln cdf(d, r); always positive (mirror of dlog_q_tail)."""
    s, sqrt_r, scalar = _standardize(d, r)
    return _maybe_scalar(_hazard(-s) / sqrt_r, scalar)


def d2log_q_tail(d, r):
    """d^2/dd^2 ln q_tail(d, r); <= 0 everywhere (log-concave tail)."""
    s, sqrt_r, scalar = _standardize(d, r)
    g = _hazard(s)
    return _maybe_scalar(g * (s - g) / (sqrt_r * sqrt_r), scalar)


def d2log_cdf(d, r):
    """d^2/dd^2 ln cdf(d, r); <= 0 everywhere (log-concave CDF)."""
    s, sqrt_r, scalar = _standardize(d, r)
    g = _hazard(-s)
    return _maybe_scalar(g * (-s - g) / (sqrt_r * sqrt_r), scalar)
