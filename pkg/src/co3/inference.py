"""Chain post-processing: co-clustering probabilities, partition point
estimates, agreement metrics between partitions and predictive model
comparison across latent dimensions.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform
from scipy.special import logsumexp

from .model import PROB_FLOOR, NumericalFailure, Partition, canonical_labels

log = logging.getLogger(__name__)


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, Partition) else np.asarray(x)


def posterior_similarity(draws) -> np.ndarray:
    """Fraction of draws in which each pair of items shares a cluster.

    ``draws`` is a sequence of labelings (or an ``S x N`` array).
    """
    draws = [_labels(d) for d in draws]
    if not draws:
        raise ValueError("need at least one draw")
    N = draws[0].size
    if any(d.size != N for d in draws):
        raise ValueError("all draws must label the same number of items")
    s = np.zeros((N, N))
    for lab in draws:
        onehot = np.zeros((N, int(lab.max()) + 1))
        onehot[np.arange(N), lab] = 1.0
        s += onehot @ onehot.T
    s /= len(draws)
    np.fill_diagonal(s, 1.0)
    return s


def expected_vi_bound(labels, s: np.ndarray) -> float:
    """Jensen lower bound on the posterior expected variation of information.

    For a candidate labeling with clusters ``C(a)`` this is
    ``(1/N) sum_a [log2 |C(a)| - 2 log2 sum_{b in C(a)} s_ab + log2 sum_b s_ab]``.
    """
    labels = np.asarray(labels)
    N = labels.size
    same = labels[:, None] == labels[None, :]
    size = same.sum(axis=1)
    within = (s * same).sum(axis=1)
    total = s.sum(axis=1)
    return float(np.sum(np.log2(size) - 2.0 * np.log2(within) + np.log2(total)) / N)


def vi_point_estimate(s: np.ndarray, refine: bool = True) -> Partition:
    """Partition minimizing :func:`expected_vi_bound` for similarity matrix ``s``.

    Starts from the best cut of the complete-linkage dendrogram built on
    ``1 - s`` (ties go to fewer clusters).  With ``refine`` the cut is then
    improved by greedy local search: moving single items to another or a new
    cluster and merging pairs of clusters, until no move lowers the bound.
    """
    s = np.asarray(s, float)
    N = s.shape[0]
    if N == 1:
        return Partition(np.zeros(1, np.int64))
    dist = 1.0 - s
    np.fill_diagonal(dist, 0.0)
    dist = np.clip(0.5 * (dist + dist.T), 0.0, None)
    tree = linkage(squareform(dist, checks=False), method="complete")
    cuts = cut_tree(tree, n_clusters=np.arange(1, N + 1))
    best = None
    best_val = np.inf
    for k in range(N):
        val = expected_vi_bound(cuts[:, k], s)
        if val < best_val - 1e-12:
            best, best_val = cuts[:, k], val
    if refine:
        best = _greedy_refine(canonical_labels(best), best_val, s)
    return Partition(best)


#: Above this many items the quadratic pair moves are skipped.
PAIR_MOVE_LIMIT = 100


def _local_moves(labels):
    """Neighbouring labelings: one item reassigned (possibly to a new cluster),
    two items moved together, or two clusters merged."""
    k = labels.max() + 1
    N = labels.size
    for i in range(N):
        for c in range(k + 1):
            if c != labels[i]:
                cand = labels.copy()
                cand[i] = c
                yield cand
    for i in range(N if N <= PAIR_MOVE_LIMIT else 0):
        for j in range(i + 1, N):
            for c in range(k + 1):
                if c != labels[i] or c != labels[j]:
                    cand = labels.copy()
                    cand[[i, j]] = c
                    yield cand
    for a in range(k):
        for b in range(a + 1, k):
            cand = labels.copy()
            cand[cand == b] = a
            yield cand


def _greedy_refine(labels, value, s):
    # steepest descent over _local_moves
    while True:
        best, best_val = None, value
        for cand in _local_moves(labels):
            val = expected_vi_bound(cand, s)
            if val < best_val - 1e-12:
                best, best_val = cand, val
        if best is None:
            return labels
        labels, value = canonical_labels(best), best_val


def _pair_sum(counts) -> int:
    counts = np.asarray(counts, dtype=object)
    return int(np.sum(counts * (counts - 1))) // 2


def _contingency(a, b) -> np.ndarray:
    a = canonical_labels(a)
    b = canonical_labels(b)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _ari_from_sums(index, sum_a, sum_b, total_pairs) -> float:
    if total_pairs == 0:
        return 1.0
    expected = sum_a * sum_b / total_pairs
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all-one or all-singletons) in the same way
        return 1.0 if index == max_index else 0.0
    return float((index - expected) / (max_index - expected))


def ari(a, b) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    a = _labels(a)
    b = _labels(b)
    if a.size != b.size:
        raise ValueError("partitions must have equal length")
    table = _contingency(a, b)
    N = a.size
    return _ari_from_sums(_pair_sum(table), _pair_sum(table.sum(1)),
                          _pair_sum(table.sum(0)), N * (N - 1) // 2)


def _square_sum(x) -> int:
    x = np.asarray(x, dtype=object)
    return int(np.sum(x * x))


def bari(rows_a, cols_a, rows_b, cols_b) -> float:
    """ARI between the cell partitions induced by two row/column partition pairs.

    Cell ``(i, j)`` belongs to block ``(row_label_i, col_label_j)``.  The
    contingency table of the ``np`` cells is the Kronecker product of the row
    and column tables, so every pair count factorizes.
    """
    rows_a, cols_a, rows_b, cols_b = map(_labels, (rows_a, cols_a, rows_b, cols_b))
    if rows_a.size != rows_b.size or cols_a.size != cols_b.size:
        raise ValueError("row and column partitions must match in length")
    tr = _contingency(rows_a, rows_b)
    tc = _contingency(cols_a, cols_b)
    N = rows_a.size * cols_a.size
    # sum of C(x, 2) over a product table = (sum x_r^2 * sum x_c^2 - N) / 2
    index = (_square_sum(tr) * _square_sum(tc) - N) // 2
    sum_a = (_square_sum(tr.sum(1)) * _square_sum(tc.sum(1)) - N) // 2
    sum_b = (_square_sum(tr.sum(0)) * _square_sum(tc.sum(0)) - N) // 2
    return _ari_from_sums(index, sum_a, sum_b, N * (N - 1) // 2)


def log_cpo(loglik_draws) -> np.ndarray:
    """Per-entry log CPO from an ``S x ...`` stack of log-likelihoods (harmonic mean)."""
    ll = np.asarray(loglik_draws, float)
    if ll.ndim < 1 or ll.shape[0] < 1:
        raise ValueError("need at least one draw")
    ll = np.maximum(ll, np.log(PROB_FLOOR))
    return np.log(ll.shape[0]) - logsumexp(-ll, axis=0)


def lpml(likelihood_draws, log_scale: bool = False) -> float:
    """Log pseudo-marginal likelihood: sum over entries of log CPO.

    ``likelihood_draws`` stacks per-entry likelihoods (``log_scale=False``) or
    their logarithms (``log_scale=True``) along axis 0.
    """
    x = np.asarray(likelihood_draws, float)
    if not log_scale:
        if np.any(x <= 0):
            raise ValueError("likelihood values must be positive")
        x = np.log(np.maximum(x, PROB_FLOOR))
    return float(np.sum(log_cpo(x)))


@dataclass
class LpmlReport:
    per_d: dict
    failed: dict = field(default_factory=dict)

    @property
    def best_d(self):
        if not self.per_d:
            return None
        return max(self.per_d, key=lambda d: self.per_d[d])


def select_d(data, cutoffs, config_template, d_grid, controls, workers: int = 1) -> LpmlReport:
    """Fit one chain per latent dimension and score each by LPML.

    Each fit uses ``config_template.with_d(d)``, so base-measure shapes and the
    ``u = 1/sqrt(d)`` scaling are rebuilt per dimension, and its own seed
    derived from ``(controls.seed, d)``.  Failed fits are recorded in
    ``failed`` and left out of ``per_d``.
    """
    from .sampler import derive_seed, run_chain

    d_grid = list(d_grid)
    if not d_grid:
        raise ValueError("d_grid must be non-empty")

    def fit(d):
        ctl = replace(controls, seed=derive_seed(controls.seed, d))
        try:
            return run_chain(data, cutoffs, config_template.with_d(d), ctl)
        except NumericalFailure as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(fit, d_grid))
    else:
        outputs = [fit(d) for d in d_grid]
    per_d = {}
    failed = {}
    for d, out in zip(d_grid, outputs):
        if isinstance(out, NumericalFailure):
            log.warning("fit at d=%s failed: %s", d, out)
            failed[d] = str(out)
            continue
        if not out.valid or out.n_draws == 0:
            log.warning("fit at d=%s failed: %s", d, out.error)
            failed[d] = out.error or "no stored draws"
            continue
        per_d[d] = float(np.sum(out.log_cpo()))
    return LpmlReport(per_d, failed)


@dataclass
class CoClustering:
    """Point-estimate row and column partitions with their similarity matrices."""

    rows: Partition
    cols: Partition
    row_similarity: np.ndarray
    col_similarity: np.ndarray


def estimate_coclustering(chain) -> CoClustering:
    """VI point estimates of the row and column partitions of a fitted chain."""
    if chain.n_draws == 0:
        raise ValueError("chain stored no draws")
    s_rows = posterior_similarity(chain.row_labels)
    s_cols = posterior_similarity(chain.col_labels)
    return CoClustering(vi_point_estimate(s_rows), vi_point_estimate(s_cols), s_rows, s_cols)
