"""Data model, cutoffs, hyperparameters and pointwise likelihood.

The observed data are an ``n x p`` matrix of ordinal codes in ``1..c`` plus a
matrix of observation indicators.  Each entry carries two latent Gaussians:
``z`` (the ordinal response, cut at fixed thresholds) and ``w`` (observed iff
``w >= 0``).  Their means factorize as inner products of a row factor and a
column factor, each a ``d x 2`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

#: Probabilities are floored here before taking logarithms.
PROB_FLOOR = 1e-300

#: Value stored in ``y`` at censored positions.  Never read by the model.
MISSING_CODE = 0


class NumericalFailure(RuntimeError):
    """A precision matrix lost positive definiteness or a draw went non-finite."""

    def __init__(self, message, iteration=None, coordinate=None):
        self.iteration = iteration
        self.coordinate = coordinate
        ctx = []
        if iteration is not None:
            ctx.append(f"iteration={iteration}")
        if coordinate is not None:
            ctx.append(f"at={coordinate}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)


@dataclass(frozen=True)
class OrdinalDataset:
    """Ordinal codes ``y`` and observation indicators ``delta``, both ``n x p``."""

    y: np.ndarray
    delta: np.ndarray
    c: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        delta = np.asarray(self.delta, dtype=np.int8)
        if y.ndim != 2 or y.shape != delta.shape:
            raise ValueError("y and delta must be 2-d arrays of equal shape")
        if y.shape[0] < 1 or y.shape[1] < 1:
            raise ValueError("dataset needs at least one row and one column")
        if self.c < 2:
            raise ValueError(f"need at least 2 categories, got c={self.c}")
        if not np.isin(delta, (0, 1)).all():
            raise ValueError("delta entries must be 0 or 1")
        obs = delta == 1
        if obs.any() and (y[obs].min() < 1 or y[obs].max() > self.c):
            raise ValueError(f"observed codes must lie in 1..{self.c}")
        y = np.where(obs, y, MISSING_CODE)
        y.flags.writeable = False
        delta.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.delta == 1

    def permute_rows(self, order) -> "OrdinalDataset":
        order = np.asarray(order)
        return OrdinalDataset(self.y[order], self.delta[order], self.c)


@dataclass(frozen=True)
class Cutoffs:
    """Thresholds ``gamma_0 = -inf < gamma_1 < ... < gamma_c = +inf``."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 1 or g.size < 3:
            raise ValueError("cutoffs need at least one interior threshold")
        if g[0] != -np.inf or g[-1] != np.inf:
            raise ValueError("outer cutoffs must be -inf and +inf")
        inner = g[1:-1]
        if not np.all(np.isfinite(inner)):
            raise ValueError("interior cutoffs must be finite")
        if not np.all(np.diff(g) > 0):
            raise ValueError("cutoffs must be strictly increasing")
        g.flags.writeable = False
        object.__setattr__(self, "gamma", g)

    @classmethod
    def from_interior(cls, values: Sequence[float]) -> "Cutoffs":
        return cls(np.concatenate(([-np.inf], np.asarray(values, float), [np.inf])))

    @property
    def c(self) -> int:
        return self.gamma.size - 1

    def bounds(self, y):
        """Lower and upper latent bounds for category codes ``y`` (1-based)."""
        y = np.asarray(y)
        return self.gamma[y - 1], self.gamma[y]

    def categorize(self, z):
        """Map latent values to the category whose cell ``(gamma_{k-1}, gamma_k]`` holds them."""
        return np.searchsorted(self.gamma[1:-1], z, side="left") + 1


def make_default_cutoffs(c: int) -> Cutoffs:
    """Equispaced cutoffs ``gamma_k = k - c/2`` for ``k = 1..c-1``."""
    if c < 2:
        raise ValueError(f"need at least 2 categories, got c={c}")
    k = np.arange(1, c)
    return Cutoffs.from_interior(k - c / 2.0)


@dataclass
class ModelConfig:
    """Hyperparameters of the model.

    ``M1``/``M2`` are ``d x 2`` base means, ``u1``/``u2`` the diagonal of the
    column covariance of the matrix-normal base measures and ``V1``/``V2``
    their ``d x d`` row covariances.  When ``sigma_prior`` is ``None`` the
    noise variances stay at ``sigma1_sq``/``sigma2_sq``; otherwise it holds
    ``(a1, b1, a2, b2)`` for inverse-gamma priors and the two values are only
    starting points.
    """

    d: int = 3
    alpha1: float = 1.0
    alpha2: float = 1.0
    M1: Optional[np.ndarray] = None
    M2: Optional[np.ndarray] = None
    u1: Optional[tuple] = None
    u2: Optional[tuple] = None
    V1: Optional[np.ndarray] = None
    V2: Optional[np.ndarray] = None
    sigma1_sq: float = 0.1
    sigma2_sq: float = 1.5
    sigma_prior: Optional[tuple] = None

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise ValueError("latent dimension d must be >= 1")
        self.d = d
        default_u = 1.0 / np.sqrt(d)
        self.M1 = _as_matrix(self.M1, (d, 2), "M1")
        self.M2 = _as_matrix(self.M2, (d, 2), "M2")
        self.V1 = _as_matrix(self.V1, (d, d), "V1", identity=True)
        self.V2 = _as_matrix(self.V2, (d, d), "V2", identity=True)
        self.u1 = _as_pair(self.u1, default_u, "u1")
        self.u2 = _as_pair(self.u2, default_u, "u2")
        for name in ("alpha1", "alpha2", "sigma1_sq", "sigma2_sq"):
            value = float(getattr(self, name))
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
            setattr(self, name, value)
        for name in ("V1", "V2"):
            v = getattr(self, name)
            if not np.allclose(v, v.T):
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(v)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
        if self.sigma_prior is not None:
            prior = tuple(float(x) for x in self.sigma_prior)
            if len(prior) != 4 or min(prior) <= 0:
                raise ValueError("sigma_prior must be four positive numbers (a1, b1, a2, b2)")
            self.sigma_prior = prior

    @property
    def fixed_sigmas(self) -> bool:
        return self.sigma_prior is None

    def with_d(self, d: int) -> "ModelConfig":
        """Same settings at another latent dimension.

        Matrix-valued settings are rebuilt from defaults (zero means, identity
        ``V``, ``u = 1/sqrt(d)``) since their shapes depend on ``d``.
        """
        return replace(self, d=d, M1=None, M2=None, V1=None, V2=None, u1=None, u2=None)

    def echo(self) -> dict:
        out = {}
        for key in ("d", "alpha1", "alpha2", "sigma1_sq", "sigma2_sq"):
            out[key] = getattr(self, key)
        for key in ("M1", "M2", "V1", "V2"):
            out[key] = getattr(self, key).tolist()
        out["u1"] = list(self.u1)
        out["u2"] = list(self.u2)
        out["sigma_prior"] = None if self.sigma_prior is None else list(self.sigma_prior)
        return out


def _as_matrix(value, shape, name, identity=False):
    if value is None:
        return np.eye(shape[0]) if identity else np.zeros(shape)
    arr = np.array(value, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def _as_pair(value, default, name):
    if value is None:
        return (default, default)
    if np.isscalar(value):
        value = (value, value)
    pair = tuple(float(v) for v in value)
    if len(pair) != 2 or min(pair) <= 0:
        raise ValueError(f"{name} must be two positive variances")
    return pair


@dataclass
class LatentState:
    """One MCMC state.

    ``theta1_star`` has shape ``(k_n, d, 2)`` and ``row_labels[i]`` indexes it;
    likewise for columns.  Mutated in place by the sampler.
    """

    z: np.ndarray
    w: np.ndarray
    row_labels: np.ndarray
    col_labels: np.ndarray
    theta1_star: np.ndarray
    theta2_star: np.ndarray
    sigma1_sq: float
    sigma2_sq: float
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def k_n(self) -> int:
        return self.theta1_star.shape[0]

    @property
    def k_p(self) -> int:
        return self.theta2_star.shape[0]

    def theta1(self) -> np.ndarray:
        """Per-row factors, shape ``(n, d, 2)``."""
        return self.theta1_star[self.row_labels]

    def theta2(self) -> np.ndarray:
        """Per-column factors, shape ``(p, d, 2)``."""
        return self.theta2_star[self.col_labels]

    def latent_means(self):
        """Factorized means ``(mz, mw)``, each ``n x p``."""
        t1 = self.theta1()
        t2 = self.theta2()
        mz = t1[:, :, 0] @ t2[:, :, 0].T
        mw = t1[:, :, 1] @ t2[:, :, 1].T
        return mz, mw

    def copy(self) -> "LatentState":
        return LatentState(
            self.z.copy(), self.w.copy(), self.row_labels.copy(), self.col_labels.copy(),
            self.theta1_star.copy(), self.theta2_star.copy(),
            float(self.sigma1_sq), float(self.sigma2_sq),
        )

    def check(self, data: Optional[OrdinalDataset] = None, cutoffs: Optional[Cutoffs] = None):
        """Raise ``AssertionError`` if any state invariant is broken."""
        for labels, star, axis in ((self.row_labels, self.theta1_star, "row"),
                                   (self.col_labels, self.theta2_star, "col")):
            k = star.shape[0]
            assert k >= 1, f"no {axis} clusters"
            assert labels.min() >= 0 and labels.max() < k, f"{axis} label out of range"
            assert np.bincount(labels, minlength=k).min() >= 1, f"empty {axis} cluster"
        assert self.sigma1_sq > 0 and self.sigma2_sq > 0
        if data is not None:
            obs = data.observed
            assert np.all(self.w[obs] >= 0), "w < 0 on an observed entry"
            assert np.all(self.w[~obs] < 0), "w >= 0 on a censored entry"
            if cutoffs is not None:
                lo, hi = cutoffs.bounds(np.where(obs, data.y, 1))
                assert np.all(self.z[obs] > lo[obs]) and np.all(self.z[obs] <= hi[obs]), \
                    "z outside its category cell"


def canonical_labels(labels) -> np.ndarray:
    """Relabel clusters in order of first appearance, starting at 0."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse.reshape(-1)].astype(np.int64)


@dataclass(frozen=True)
class Partition:
    """A set partition of ``N`` items, stored in canonical label form."""

    labels: np.ndarray

    def __post_init__(self):
        labels = canonical_labels(self.labels)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.labels.tobytes())

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels)


def _log_diff_ndtr(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    # reflect so the interval sits in the lower tail, where log_ndtr is accurate
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log1p(-np.exp(log_lo - log_hi))
    return out


def entry_log_likelihood(y, delta, mz, mw, sigma1_sq, sigma2_sq, cutoffs: Cutoffs):
    """Vectorized log of :func:`entry_likelihood`, floored at ``log(PROB_FLOOR)``."""
    y = np.asarray(y)
    delta = np.asarray(delta)
    mz = np.asarray(mz, float)
    mw = np.asarray(mw, float)
    obs = delta == 1
    if np.any(obs & ((y < 1) | (y > cutoffs.c))):
        raise ValueError(f"observed codes must lie in 1..{cutoffs.c}")
    s1 = np.sqrt(sigma1_sq)
    s2 = np.sqrt(sigma2_sq)
    lo, hi = cutoffs.bounds(np.where(obs, y, 1))
    log_cell = _log_diff_ndtr((lo - mz) / s1, (hi - mz) / s1)
    log_obs = log_cell + log_ndtr(mw / s2)
    log_cens = log_ndtr(-mw / s2)
    out = np.where(obs, log_obs, log_cens)
    return np.maximum(out, np.log(PROB_FLOOR))


def entry_likelihood(y, delta, mz, mw, sigma1_sq, sigma2_sq, cutoffs: Cutoffs) -> float:
    """Probability of one augmented outcome ``(y, delta)`` given latent means.

    Observed entries contribute the ordinal cell probability of ``z`` times
    ``Pr(w >= 0)``; censored entries contribute ``Pr(w < 0)``.
    """
    if delta == 1 and not 1 <= int(y) <= cutoffs.c:
        raise ValueError(f"observed code {y} outside 1..{cutoffs.c}")
    s1 = np.sqrt(sigma1_sq)
    s2 = np.sqrt(sigma2_sq)
    if delta == 0:
        return float(ndtr(-mw / s2))
    lo, hi = cutoffs.bounds(int(y))
    cell = float(np.exp(_log_diff_ndtr((lo - mz) / s1, (hi - mz) / s1)))
    return cell * float(ndtr(mw / s2))
