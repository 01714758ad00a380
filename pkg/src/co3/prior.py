"""Dirichlet-process partition combinatorics.

Closed forms for the exchangeable partition probability function, unsigned
Stirling numbers of the first kind, and the prior law of the number of
bivariate clusters ``k = k_n * k_p`` induced by two independent DPs on the
rows and columns.  Everything is carried in log space.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp


def log_rising_factorial(alpha: float, n: int) -> float:
    """``log((alpha)_n) = log(alpha (alpha+1) ... (alpha+n-1))``."""
    return float(gammaln(alpha + n) - gammaln(alpha))


def log_eppf(alpha: float, sizes) -> float:
    """Log probability of one specific partition with block ``sizes`` under DP(alpha).

    Examples
    --------
    >>> round(float(np.exp(log_eppf(1.0, [2, 1]))), 12)
    0.166666666667
    """
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size == 0:
        raise ValueError("sizes must be non-empty")
    if np.any(sizes < 1):
        raise ValueError("block sizes must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    N = sizes.sum()
    k = sizes.size
    return float(k * np.log(alpha) - log_rising_factorial(alpha, N) + gammaln(sizes).sum())


class _StirlingTable:
    # Rows are built by the recurrence |s(m+1,k)| = m|s(m,k)| + |s(m,k-1)|,
    # continuing from the largest cached row not above the one requested.
    def __init__(self):
        self._lock = threading.Lock()
        self._rows = {1: np.array([-np.inf, 0.0])}

    def row(self, n: int) -> np.ndarray:
        """``log|s(n, k)|`` for ``k = 0..n`` (``-inf`` at ``k = 0``)."""
        cached = self._rows.get(n)
        if cached is not None:
            return cached
        with self._lock:
            cached = self._rows.get(n)
            if cached is not None:
                return cached
            start = max((m for m in self._rows if m <= n), default=1)
            cur = self._rows[start]
            for m in range(start, n):
                nxt = np.full(m + 2, -np.inf)
                nxt[1:m + 1] = np.log(m) + cur[1:m + 1]
                nxt[1:] = np.logaddexp(nxt[1:], cur[:m + 1])
                cur = nxt
            cur.flags.writeable = False
            self._rows[n] = cur
            return cur


_STIRLING = _StirlingTable()


def log_stirling1_unsigned_row(n: int) -> np.ndarray:
    """Vector of ``log|s(n, k)|`` for ``k = 0..n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _STIRLING.row(int(n))


def log_stirling1_unsigned(n: int, k: int) -> float:
    """``log|s(n, k)|``, the log count of permutations of ``n`` items with ``k`` cycles."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    return float(_STIRLING.row(int(n))[k])


def log_prior_num_clusters(n: int, alpha: float) -> np.ndarray:
    """Log pmf of the number of DP clusters among ``n`` items, indexed ``0..n``."""
    ks = np.arange(n + 1)
    with np.errstate(divide="ignore"):
        out = ks * np.log(alpha) + log_stirling1_unsigned_row(n) - log_rising_factorial(alpha, n)
    out[0] = -np.inf
    return out


@dataclass(frozen=True)
class BivariateClusterPrior:
    n: int
    p: int
    alpha1: float
    alpha2: float
    pmf: dict

    def mean(self) -> float:
        return float(sum(k * v for k, v in self.pmf.items()))

    def as_arrays(self):
        ks = np.array(sorted(self.pmf), dtype=np.int64)
        return ks, np.array([self.pmf[k] for k in ks])


def prior_k_pmf(n: int, p: int, alpha1: float, alpha2: float) -> BivariateClusterPrior:
    """Prior pmf of ``k = k_n k_p`` under independent DP(alpha1) rows and DP(alpha2) columns."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    log_rows = log_prior_num_clusters(n, alpha1)
    log_cols = log_prior_num_clusters(p, alpha2)
    # drop terms that underflow to exactly zero in double precision anyway
    rows = np.nonzero(log_rows > -745.0)[0]
    cols = np.nonzero(log_cols > -745.0)[0]
    prob = np.exp(log_rows[rows][:, None] + log_cols[cols][None, :])
    prods = rows[:, None] * cols[None, :]
    acc = np.bincount(prods.ravel(), weights=prob.ravel())
    support = np.nonzero(acc)[0]
    pmf = {int(k): float(acc[k]) for k in support}
    return BivariateClusterPrior(n, p, float(alpha1), float(alpha2), pmf)


def expected_k(n: int, p: int, alpha1: float, alpha2: float) -> float:
    """Prior mean of ``k_n k_p``: ``alpha1 alpha2 sum_i 1/(alpha1+i-1) sum_j 1/(alpha2+j-1)``."""
    i = np.arange(1, n + 1)
    j = np.arange(1, p + 1)
    return float(alpha1 * alpha2 * np.sum(1.0 / (alpha1 + i - 1)) * np.sum(1.0 / (alpha2 + j - 1)))


def sample_crp(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Seat ``n`` customers by the Chinese restaurant process; returns table labels."""
    labels = np.empty(n, dtype=np.int64)
    sizes = []
    for m in range(n):
        weights = np.array(sizes + [alpha], dtype=float)
        t = rng.choice(len(weights), p=weights / weights.sum())
        if t == len(sizes):
            sizes.append(1)
        else:
            sizes[t] += 1
        labels[m] = t
    return labels


def _crp_table_counts(n, alpha, draws, rng):
    # Customer m opens a new table with probability alpha/(alpha+m), independently
    # of the earlier seating, so the table count is a sum of independent Bernoullis.
    counts = np.zeros(draws, dtype=np.int64)
    for m in range(n):
        counts += rng.random(draws) < alpha / (alpha + m)
    return counts


def simulate_crp_bivariate(n: int, p: int, alpha1: float, alpha2: float,
                           draws: int, seed=None) -> dict:
    """Monte-Carlo pmf of ``k_n k_p`` from two independent CRPs."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng(seed)
    k = _crp_table_counts(n, alpha1, draws, rng) * _crp_table_counts(p, alpha2, draws, rng)
    values, counts = np.unique(k, return_counts=True)
    return {int(v): c / draws for v, c in zip(values, counts)}


def total_variation(pmf_a: dict, pmf_b: dict) -> float:
    keys = set(pmf_a) | set(pmf_b)
    return 0.5 * sum(abs(pmf_a.get(k, 0.0) - pmf_b.get(k, 0.0)) for k in keys)


def log_ascending_factorial_via_stirling(n: int, alpha: float) -> float:
    """``log sum_k |s(n,k)| alpha^k``; equals ``log((alpha)_n)``."""
    ks = np.arange(1, n + 1)
    return float(logsumexp(log_stirling1_unsigned_row(n)[1:] + ks * np.log(alpha)))
