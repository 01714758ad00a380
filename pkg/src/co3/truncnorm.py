"""Vectorized truncated-normal sampling.

Central intervals are inverted through the normal CDF, reflected so the
interval always sits on the side where the CDF is accurate.  When the
standardized interval lies beyond ``TAIL_THRESHOLD`` standard deviations the
sampler switches to exponential-proposal rejection (Robert, 1995), or to
uniform-proposal rejection for narrow intervals.
"""

import numpy as np
from scipy.special import ndtr, ndtri

TAIL_THRESHOLD = 5.0


def sample_truncnorm(mean, var, lo, hi, rng: np.random.Generator):
    """Draw from ``N(mean, var)`` restricted to ``(lo, hi]``.

    All arguments broadcast; a scalar input gives a float back.
    """
    mean, var, lo, hi = np.broadcast_arrays(
        np.asarray(mean, float), np.asarray(var, float),
        np.asarray(lo, float), np.asarray(hi, float))
    if np.any(lo >= hi):
        raise ValueError("truncation requires lo < hi")
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    sd = np.sqrt(var)
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    x = standard_truncnorm(a.ravel(), b.ravel(), rng).reshape(a.shape)
    out = mean + sd * x
    # the affine map can round onto an excluded endpoint
    out = np.minimum(np.maximum(out, np.nextafter(lo, np.inf)), hi)
    if out.ndim == 0:
        return float(out)
    return out


def standard_truncnorm(a, b, rng: np.random.Generator):
    """Draws from the standard normal restricted to ``(a, b)``; 1-d arrays."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    # reflect so that the interval never lies entirely in the upper tail
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    out = np.empty_like(lo)

    tail = hi < -TAIL_THRESHOLD
    central = ~tail
    if central.any():
        plo = ndtr(lo[central])
        phi = ndtr(hi[central])
        u = plo + rng.random(plo.size) * (phi - plo)
        x = ndtri(u)
        out[central] = np.clip(x, lo[central], hi[central])
    if tail.any():
        # in the lower tail: reflect again to an upper-tail interval (-hi, -lo)
        idx = np.nonzero(tail)[0]
        out[idx] = -_upper_tail(-hi[idx], -lo[idx], rng)
    return np.where(flip, -out, out)


def _upper_tail(a, b, rng):
    """Standard normal on ``(a, b)`` with ``a > TAIL_THRESHOLD``, one rejection loop per entry."""
    out = np.empty_like(a)
    for t in range(a.size):
        out[t] = _upper_tail_one(a[t], b[t], rng)
    return out


def _upper_tail_one(a, b, rng):
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    # width beyond which an exponential proposal beats a uniform one
    if b - a > 2.0 / lam:
        while True:
            x = a + rng.exponential(1.0 / lam)
            if x <= b and rng.random() <= np.exp(-0.5 * (x - lam) ** 2):
                return x
    while True:
        x = a + (b - a) * rng.random()
        if rng.random() <= np.exp(0.5 * (a * a - x * x)):
            return x
