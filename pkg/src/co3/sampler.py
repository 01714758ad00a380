"""Marginal Gibbs sampler for the co-clustering model.

Each sweep runs, in order: a generalized Polya-urn pass over the rows, the
same over the columns, a reshuffle of the distinct row and column factor
values, a redraw of the latent Gaussians ``z``/``w`` and finally the noise
variances.  Base measures are matrix normal with diagonal column covariance,
so every factor matrix splits into two independent ``d``-vectors: column 0
drives ``z`` and column 1 drives ``w``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .model import (Cutoffs, LatentState, ModelConfig, NumericalFailure,
                    OrdinalDataset, entry_log_likelihood)
from .truncnorm import sample_truncnorm

LOG_2PI = np.log(2.0 * np.pi)
INIT_MODES = ("one", "singletons")


def derive_seed(seed, *keys) -> int:
    """Deterministic child seed for replicate or grid index ``keys``."""
    root = 0 if seed is None else int(seed)
    return int(np.random.SeedSequence([root, *map(int, keys)]).generate_state(1)[0])


@dataclass
class GibbsControls:
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: Optional[int] = None
    parallel_latent: bool = False
    low_memory: bool = False
    init: str = "singletons"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    def stored_iterations(self):
        return range(self.burn_in, self.iterations, self.thin)


@dataclass
class UrnWeights:
    """Unnormalized log weights of one urn draw.

    ``log_w[l]`` belongs to ``cluster_ids[l]`` (labels in the state before the
    draw); ``log_w0`` to opening a new cluster.
    """

    log_w0: float
    log_w: np.ndarray
    cluster_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def probabilities(self):
        """``(p_new, p_existing)`` after normalization."""
        allw = np.concatenate(([self.log_w0], self.log_w))
        allw = np.exp(allw - allw.max())
        allw /= allw.sum()
        return float(allw[0]), allw[1:]


@dataclass
class ChainOutput:
    """Post-burn-in draws of one chain.

    ``loglik`` holds per-entry log-likelihoods with shape ``(draws, n, p)``;
    in low-memory mode it is ``None`` and ``neg_loglik_lse`` carries the
    running ``logsumexp`` of ``-loglik`` over draws instead.
    """

    row_labels: np.ndarray
    col_labels: np.ndarray
    sigma1_sq: np.ndarray
    sigma2_sq: np.ndarray
    k_n: np.ndarray
    k_p: np.ndarray
    loglik: Optional[np.ndarray]
    neg_loglik_lse: np.ndarray
    n_draws: int
    iterations_run: int
    valid: bool = True
    error: Optional[str] = None
    final_state: Optional[LatentState] = field(default=None, repr=False)

    def log_cpo(self) -> np.ndarray:
        """Per-entry log conditional predictive ordinates (harmonic-mean estimator)."""
        if self.n_draws == 0:
            raise ValueError("chain stored no draws")
        return np.log(self.n_draws) - self.neg_loglik_lse


class _AxisUrn:
    """Quantities shared by every urn draw along one axis during one pass.

    ``Z`` and ``W`` are ``N x m`` with one row per item being clustered;
    ``other`` holds the ``m`` fixed factor matrices of the opposite axis.
    """

    def __init__(self, Z, W, other, M, u, V, alpha, sigma1_sq, sigma2_sq):
        self.Z = Z
        self.W = W
        self.N, self.m = Z.shape
        self.alpha = alpha
        self.s1 = sigma1_sq
        self.s2 = sigma2_sq
        self.A1 = np.ascontiguousarray(other[:, :, 0].T)  # d x m
        self.A2 = np.ascontiguousarray(other[:, :, 1].T)
        V_inv = np.linalg.inv(V)
        _, logdet_V = np.linalg.slogdet(V)
        d = V.shape[0]
        self.prec0 = (V_inv / u[0], V_inv / u[1])
        self.logdet_prior = (d * np.log(u[0]) + logdet_V, d * np.log(u[1]) + logdet_V)
        self.m0 = (M[:, 0], M[:, 1])
        self.gram = (self.A1 @ self.A1.T / self.s1, self.A2 @ self.A2.T / self.s2)
        self.prior_b = (self.prec0[0] @ self.m0[0], self.prec0[1] @ self.m0[1])
        self.chol = (_cholesky(self.gram[0] + self.prec0[0]),
                     _cholesky(self.gram[1] + self.prec0[1]))
        self.B1 = Z @ self.A1.T / self.s1 + self.prior_b[0]  # N x d
        self.B2 = W @ self.A2.T / self.s2 + self.prior_b[1]
        self.zsq = np.einsum("ij,ij->i", Z, Z)
        self.wsq = np.einsum("ij,ij->i", W, W)
        self.ll_const = -0.5 * self.m * (2 * LOG_2PI + np.log(self.s1) + np.log(self.s2))
        self.log_denominator = np.log(alpha + self.N - 1)

    @cached_property
    def log_marginal(self):
        """Per-item log prior predictive of ``(z_i, w_i)`` under the base measure."""
        return (self._log_marginal(0, self.B1, self.zsq, self.s1)
                + self._log_marginal(1, self.B2, self.wsq, self.s2))

    def _log_marginal(self, r, B, sq, s):
        # log N(x; A^T m0, s I + A^T U A) by the determinant and Woodbury lemmas
        L = self.chol[r]
        half = solve_triangular(L, B.T, lower=True, check_finite=False)  # d x N
        logdet_post = 2.0 * np.log(np.diag(L)).sum()
        m0 = self.m0[r]
        return (-0.5 * self.m * (LOG_2PI + np.log(s))
                - 0.5 * self.logdet_prior[r] - 0.5 * logdet_post
                - 0.5 * (sq / s + m0 @ self.prior_b[r])
                + 0.5 * np.einsum("ij,ij->j", half, half))

    def cluster_means(self, star):
        """Fitted ``z`` and ``w`` rows for each distinct value in ``star``."""
        return star[:, :, 0] @ self.A1, star[:, :, 1] @ self.A2

    def loglik_existing(self, i, mu_z, mu_w):
        z = self.Z[i]
        w = self.W[i]
        rz = self.zsq[i] - 2.0 * (mu_z @ z) + np.einsum("kj,kj->k", mu_z, mu_z)
        rw = self.wsq[i] - 2.0 * (mu_w @ w) + np.einsum("kj,kj->k", mu_w, mu_w)
        return self.ll_const - 0.5 * (rz / self.s1 + rw / self.s2)

    def weights(self, i, counts, mu_z, mu_w):
        log_w = np.log(counts) + self.loglik_existing(i, mu_z, mu_w) - self.log_denominator
        log_w0 = np.log(self.alpha) - self.log_denominator + self.log_marginal[i]
        return log_w0, log_w

    def _gaussian(self, r, b, rng):
        L = self.chol[r]
        mean = cho_solve((L, True), b, check_finite=False)
        return mean + solve_triangular(L.T, rng.standard_normal(b.size), lower=False,
                                       check_finite=False)

    def new_value(self, i, rng):
        """Conjugate-posterior draw of a fresh factor matrix given item ``i`` alone."""
        t = np.empty((self.A1.shape[0], 2))
        t[:, 0] = self._gaussian(0, self.B1[i], rng)
        t[:, 1] = self._gaussian(1, self.B2[i], rng)
        return t

    def cluster_value(self, members, rng):
        """Full-conditional draw of a distinct value shared by ``members``."""
        n_l = len(members)
        assert n_l > 0, "reshuffling an empty cluster"
        zbar = self.Z[members].mean(axis=0)
        wbar = self.W[members].mean(axis=0)
        t = np.empty((self.A1.shape[0], 2))
        for r, (A, xbar, s) in enumerate(((self.A1, zbar, self.s1), (self.A2, wbar, self.s2))):
            prec = self.prec0[r] + n_l * self.gram[r]
            L = _cholesky(prec)
            b = self.prior_b[r] + n_l * (A @ xbar) / s
            mean = cho_solve((L, True), b, check_finite=False)
            t[:, r] = mean + solve_triangular(L.T, rng.standard_normal(b.size),
                                              lower=False, check_finite=False)
        return t


def _cholesky(P):
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NumericalFailure("posterior precision matrix is not positive definite") from None


def _row_axis(state, config):
    return _AxisUrn(state.z, state.w, state.theta2(), config.M1, config.u1, config.V1,
                    config.alpha1, state.sigma1_sq, state.sigma2_sq)


def _col_axis(state, config):
    return _AxisUrn(np.ascontiguousarray(state.z.T), np.ascontiguousarray(state.w.T),
                    state.theta1(), config.M2, config.u2, config.V2,
                    config.alpha2, state.sigma1_sq, state.sigma2_sq)


def _leave_one_out(axis, labels, star, i):
    keep_mask = np.ones(star.shape[0], bool)
    counts = np.bincount(labels, minlength=star.shape[0]).astype(float)
    counts[labels[i]] -= 1
    keep_mask &= counts > 0
    ids = np.nonzero(keep_mask)[0]
    mu_z, mu_w = axis.cluster_means(star[ids])
    log_w0, log_w = axis.weights(i, counts[ids], mu_z, mu_w)
    return UrnWeights(float(log_w0), log_w, ids)


def urn_weights_row(i: int, state: LatentState, data: OrdinalDataset, config: ModelConfig) -> UrnWeights:
    """Urn weights for re-allocating row ``i``, with row ``i`` itself left out."""
    return _leave_one_out(_row_axis(state, config), state.row_labels, state.theta1_star, i)


def urn_weights_col(j: int, state: LatentState, data: OrdinalDataset, config: ModelConfig) -> UrnWeights:
    """Column counterpart of :func:`urn_weights_row`."""
    return _leave_one_out(_col_axis(state, config), state.col_labels, state.theta2_star, j)


def sample_base_row(i, state, data, config, rng) -> np.ndarray:
    """New distinct row value drawn from its posterior given ``(z_i, w_i)`` only."""
    return _row_axis(state, config).new_value(i, rng)


def sample_base_col(j, state, data, config, rng) -> np.ndarray:
    return _col_axis(state, config).new_value(j, rng)


def _urn_pass(axis: _AxisUrn, labels, star, rng):
    """Sequentially re-allocate every item; returns new ``(labels, star)``."""
    N = axis.N
    d = star.shape[1]
    k = star.shape[0]
    labels = labels.copy()
    buf = np.empty((N + 1, d, 2))
    buf[:k] = star
    counts = np.zeros(N + 1)
    counts[:k] = np.bincount(labels, minlength=k)
    mu_z = np.empty((N + 1, axis.m))
    mu_w = np.empty((N + 1, axis.m))
    mu_z[:k], mu_w[:k] = axis.cluster_means(star)
    log_alpha = np.log(axis.alpha)
    for i in range(N):
        cur = labels[i]
        counts[cur] -= 1
        if counts[cur] == 0:
            last = k - 1
            if cur != last:
                buf[cur] = buf[last]
                mu_z[cur] = mu_z[last]
                mu_w[cur] = mu_w[last]
                counts[cur] = counts[last]
                labels[labels == last] = cur
            counts[last] = 0
            k -= 1
        log_w = np.log(counts[:k]) + axis.loglik_existing(i, mu_z[:k], mu_w[:k])
        log_w0 = log_alpha + axis.log_marginal[i]
        top = max(log_w0, log_w.max()) if k else log_w0
        probs = np.exp(log_w - top)
        cum = np.cumsum(probs)
        total = cum[-1] + np.exp(log_w0 - top) if k else 1.0
        u = rng.random() * total
        choice = int(np.searchsorted(cum, u, side="right")) if k else 0
        if choice >= k:
            t = axis.new_value(i, rng)
            buf[k] = t
            mu_z[k] = t[:, 0] @ axis.A1
            mu_w[k] = t[:, 1] @ axis.A2
            counts[k] = 1
            labels[i] = k
            k += 1
        else:
            counts[choice] += 1
            labels[i] = choice
    return labels, buf[:k].copy()


def urn_pass_rows(state: LatentState, config: ModelConfig, rng) -> None:
    state.row_labels, state.theta1_star = _urn_pass(
        _row_axis(state, config), state.row_labels, state.theta1_star, rng)


def urn_pass_cols(state: LatentState, config: ModelConfig, rng) -> None:
    state.col_labels, state.theta2_star = _urn_pass(
        _col_axis(state, config), state.col_labels, state.theta2_star, rng)


def _reshuffle(axis, labels, star, rng):
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(star.shape[0] + 1))
    new = np.empty_like(star)
    for l in range(star.shape[0]):
        new[l] = axis.cluster_value(order[bounds[l]:bounds[l + 1]], rng)
    return new


def reshuffle_rows(state: LatentState, config: ModelConfig, rng) -> None:
    """Redraw every distinct row value from its full conditional."""
    state.theta1_star = _reshuffle(_row_axis(state, config), state.row_labels, state.theta1_star, rng)


def reshuffle_cols(state: LatentState, config: ModelConfig, rng) -> None:
    state.theta2_star = _reshuffle(_col_axis(state, config), state.col_labels, state.theta2_star, rng)


_BELOW_ZERO = np.nextafter(0.0, -1.0)


def _draw_latent_rows(rows, state, data, cutoffs, mz, mw, rng, which):
    obs = data.delta[rows] == 1
    if which == "z":
        mean = mz[rows]
        lo, hi = cutoffs.bounds(np.where(obs, data.y[rows], 1))
        out = np.empty(mean.shape)
        if obs.any():
            out[obs] = sample_truncnorm(mean[obs], state.sigma1_sq, lo[obs], hi[obs], rng)
        cens = ~obs
        if cens.any():
            out[cens] = mean[cens] + np.sqrt(state.sigma1_sq) * rng.standard_normal(cens.sum())
        return out
    mean = mw[rows]
    lo = np.where(obs, 0.0, -np.inf)
    hi = np.where(obs, np.inf, _BELOW_ZERO)
    return sample_truncnorm(mean, state.sigma2_sq, lo, hi, rng)


def update_z(state: LatentState, data: OrdinalDataset, cutoffs: Cutoffs, rng, means=None) -> None:
    """Redraw ``z``: truncated to the category cell where observed, plain normal elsewhere."""
    mz, mw = state.latent_means() if means is None else means
    rows = slice(None)
    state.z = _draw_latent_rows(rows, state, data, cutoffs, mz, mw, rng, "z")


def update_w(state: LatentState, data: OrdinalDataset, rng, means=None) -> None:
    """Redraw ``w``: truncated to ``[0, inf)`` where observed and ``(-inf, 0)`` where censored."""
    mz, mw = state.latent_means() if means is None else means
    state.w = _draw_latent_rows(slice(None), state, data, None, mz, mw, rng, "w")


def _worker_count():
    try:
        return max(1, int(os.environ.get("CO3_THREADS", "1")))
    except ValueError:
        return 1


def _update_latent_parallel(state, data, cutoffs, seed, iteration):
    # one counter-based stream per (seed, iteration, row): output is
    # independent of the thread count and of scheduling order
    mz, mw = state.latent_means()
    z = np.empty_like(state.z)
    w = np.empty_like(state.w)
    root = 0 if seed is None else int(seed)

    def work(i):
        ss = np.random.SeedSequence(root, spawn_key=(int(iteration), int(i)))
        gen = np.random.Generator(np.random.Philox(ss))
        z[i] = _draw_latent_rows(i, state, data, cutoffs, mz, mw, gen, "z")
        w[i] = _draw_latent_rows(i, state, data, cutoffs, mz, mw, gen, "w")

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        list(pool.map(work, range(data.n)))
    state.z = z
    state.w = w


def update_sigmas(state: LatentState, config: ModelConfig, rng) -> None:
    """Inverse-gamma full-conditional redraw of the two noise variances (no-op when fixed)."""
    if config.fixed_sigmas:
        return
    a1, b1, a2, b2 = config.sigma_prior
    mz, mw = state.latent_means()
    count = state.z.size
    ssr_z = np.sum((state.z - mz) ** 2)
    ssr_w = np.sum((state.w - mw) ** 2)
    state.sigma1_sq = 1.0 / rng.gamma(a1 + count / 2.0, 1.0 / (b1 + 0.5 * ssr_z))
    state.sigma2_sq = 1.0 / rng.gamma(a2 + count / 2.0, 1.0 / (b2 + 0.5 * ssr_w))


def gibbs_sweep(state: LatentState, data: OrdinalDataset, cutoffs: Cutoffs,
                config: ModelConfig, rng, iteration=None, latent_seed=None) -> None:
    """One full sweep.  With ``latent_seed`` set, ``z``/``w`` use per-row streams."""
    try:
        urn_pass_rows(state, config, rng)
        urn_pass_cols(state, config, rng)
        reshuffle_rows(state, config, rng)
        reshuffle_cols(state, config, rng)
        if latent_seed is not None:
            _update_latent_parallel(state, data, cutoffs, latent_seed, iteration or 0)
        else:
            means = state.latent_means()
            update_z(state, data, cutoffs, rng, means)
            update_w(state, data, rng, means)
        update_sigmas(state, config, rng)
    except NumericalFailure as exc:
        raise NumericalFailure(str(exc), iteration=iteration, coordinate=exc.coordinate) from exc
    if not (np.all(np.isfinite(state.z)) and np.all(np.isfinite(state.w))):
        raise NumericalFailure("non-finite latent draw", iteration=iteration)


def initial_z(data: OrdinalDataset, cutoffs: Cutoffs) -> np.ndarray:
    """Cell midpoints, or one unit beyond the outermost finite cutoff; 0 where censored."""
    g = cutoffs.gamma
    c = cutoffs.c
    mids = np.empty(c + 1)
    mids[0] = np.nan
    for k in range(1, c + 1):
        lo, hi = g[k - 1], g[k]
        if np.isinf(lo):
            mids[k] = hi - 1.0
        elif np.isinf(hi):
            mids[k] = lo + 1.0
        else:
            mids[k] = 0.5 * (lo + hi)
    return np.where(data.observed, mids[np.where(data.observed, data.y, 1)], 0.0)


def initial_state(data: OrdinalDataset, cutoffs: Cutoffs, config: ModelConfig, rng,
                  mode: str = "singletons") -> LatentState:
    """Admissible starting state with distinct values drawn from the base measures.

    ``mode="one"`` puts all rows in one cluster and all columns in another;
    ``mode="singletons"`` gives every row and every column its own cluster.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"init mode must be one of {INIT_MODES}")
    z = initial_z(data, cutoffs)
    w = np.where(data.observed, 1.0, -1.0)
    if mode == "one":
        row_labels = np.zeros(data.n, np.int64)
        col_labels = np.zeros(data.p, np.int64)
    else:
        row_labels = np.arange(data.n, dtype=np.int64)
        col_labels = np.arange(data.p, dtype=np.int64)
    return LatentState(
        z=z, w=w, row_labels=row_labels, col_labels=col_labels,
        theta1_star=sample_base_measure(config, 1, rng, size=row_labels.max() + 1),
        theta2_star=sample_base_measure(config, 2, rng, size=col_labels.max() + 1),
        sigma1_sq=config.sigma1_sq, sigma2_sq=config.sigma2_sq,
    )


def sample_base_measure(config: ModelConfig, which: int, rng, size=None) -> np.ndarray:
    """Draw from the matrix-normal base measure ``H_1`` or ``H_2`` (diagonal column covariance)."""
    M, u, V = (config.M1, config.u1, config.V1) if which == 1 else (config.M2, config.u2, config.V2)
    L = _cholesky(V)
    shape = (1 if size is None else size, config.d, 2)
    eps = rng.standard_normal(shape)
    out = M[None] + np.einsum("ab,nbr->nar", L, eps) * np.sqrt(np.asarray(u))[None, None, :]
    return out[0] if size is None else out


def run_chain(data: OrdinalDataset, cutoffs: Cutoffs, config: ModelConfig,
              controls: GibbsControls, state: Optional[LatentState] = None) -> ChainOutput:
    """Run the sampler and collect post-burn-in draws.

    A :class:`NumericalFailure` stops the chain; the draws gathered so far are
    returned with ``valid=False``.
    """
    if cutoffs.c != data.c:
        raise ValueError(f"cutoffs have {cutoffs.c} categories, data {data.c}")
    rng = np.random.default_rng(controls.seed)
    if state is None:
        state = initial_state(data, cutoffs, config, rng, controls.init)
    keep = set(controls.stored_iterations())
    S = len(keep)
    n, p = data.n, data.p
    row_draws = np.empty((S, n), np.int64)
    col_draws = np.empty((S, p), np.int64)
    s1 = np.empty(S)
    s2 = np.empty(S)
    k_n = np.empty(controls.iterations, np.int64)
    k_p = np.empty(controls.iterations, np.int64)
    loglik = None if controls.low_memory else np.empty((S, n, p))
    lse = np.full((n, p), -np.inf)
    latent_seed = None
    if controls.parallel_latent:
        latent_seed = 0 if controls.seed is None else controls.seed
    s = 0
    it = 0
    error = None
    try:
        for it in range(controls.iterations):
            gibbs_sweep(state, data, cutoffs, config, rng, iteration=it, latent_seed=latent_seed)
            k_n[it] = state.k_n
            k_p[it] = state.k_p
            if it in keep:
                mz, mw = state.latent_means()
                ll = entry_log_likelihood(data.y, data.delta, mz, mw,
                                          state.sigma1_sq, state.sigma2_sq, cutoffs)
                row_draws[s] = state.row_labels
                col_draws[s] = state.col_labels
                s1[s] = state.sigma1_sq
                s2[s] = state.sigma2_sq
                if loglik is not None:
                    loglik[s] = ll
                lse = np.logaddexp(lse, -ll)
                s += 1
        it = controls.iterations
    except NumericalFailure as exc:
        error = str(exc)
    return ChainOutput(
        row_labels=row_draws[:s], col_labels=col_draws[:s],
        sigma1_sq=s1[:s], sigma2_sq=s2[:s],
        k_n=k_n[:it], k_p=k_p[:it],
        loglik=None if loglik is None else loglik[:s],
        neg_loglik_lse=lse, n_draws=s, iterations_run=it,
        valid=error is None, error=error, final_state=state,
    )
