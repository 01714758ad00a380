"""Synthetic co-clustered ordinal data with random or informative censoring.

Row and column factor matrices are drawn from finite Gaussian mixtures, the
latent pairs ``(z, w)`` from the factor model, ordinal codes by cutting
``z``, and finally a fraction of entries is hidden either uniformly at random
or only among entries carrying one target category.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .model import Cutoffs, OrdinalDataset, Partition, make_default_cutoffs

CENSOR_MODES = ("informative", "random")


@dataclass
class ScenarioConfig:
    n: int = 50
    p: int = 50
    c: int = 3
    d: int = 3
    n_row_components: int = 3
    n_col_components: int = 3
    component_separation: float = 3.0
    jitter_var: float = 0.1
    censor_rate: float = 0.05
    censor_mode: str = "informative"
    target_category: int = 1
    sigma1_sq: float = 0.1
    sigma2_sq: float = 1.5
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.d < 1:
            raise ValueError("n, p and d must be >= 1")
        if self.c < 2:
            raise ValueError("need c >= 2 categories")
        if self.n_row_components < 1 or self.n_col_components < 1:
            raise ValueError("component counts must be >= 1")
        if self.n_row_components > self.n or self.n_col_components > self.p:
            raise ValueError("more mixture components than items")
        if not 0 <= self.censor_rate < 1:
            raise ValueError("censor_rate must lie in [0, 1)")
        if self.censor_mode not in CENSOR_MODES:
            raise ValueError(f"censor_mode must be one of {CENSOR_MODES}")
        if not 1 <= self.target_category <= self.c:
            raise ValueError("target_category must lie in 1..c")
        if self.component_separation < 0 or self.jitter_var < 0:
            raise ValueError("separation and jitter must be non-negative")

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class Simulation:
    data: OrdinalDataset
    rows: Partition
    cols: Partition
    n_censored: int
    z: np.ndarray
    w: np.ndarray
    config: ScenarioConfig


def component_means(k: int, d: int) -> np.ndarray:
    """``k`` unit-norm, maximally spread points in ``R^d`` (shape ``k x d``).

    With ``k <= d + 1`` these are the vertices of a regular simplex, so two
    distinct points have inner product ``-1/(k-1)``.  Larger ``k`` fall back
    to equally spaced points on a circle (or an interval when ``d = 1``).
    """
    if k == 1:
        out = np.zeros((1, d))
        out[0, 0] = 1.0
        return out
    if k - 1 <= d:
        centered = np.eye(k) - 1.0 / k
        q, _ = np.linalg.qr(centered[:, :k - 1])
        pts = centered @ q
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        out = np.zeros((k, d))
        out[:, :k - 1] = pts
        return out
    out = np.zeros((k, d))
    if d == 1:
        out[:, 0] = np.linspace(-1.0, 1.0, k)
    else:
        angles = 2 * np.pi * np.arange(k) / k
        out[:, 0] = np.cos(angles)
        out[:, 1] = np.sin(angles)
    return out


def generate_factors(k_components: int, count: int, d: int, separation: float,
                     rng: np.random.Generator, jitter_var: float = 0.1):
    """Factor matrices ``(count, d, 2)`` from a ``k``-component mixture, plus labels.

    Both columns of a component's mean matrix sit at the same separated point;
    each factor adds independent ``N(0, jitter_var)`` noise.  Labels are
    balanced round-robin and then shuffled.
    """
    if k_components > count:
        raise ValueError("more components than factors")
    means = separation * component_means(k_components, d)
    labels = rng.permutation(np.arange(count) % k_components)
    factors = means[labels][:, :, None] + np.sqrt(jitter_var) * rng.standard_normal((count, d, 2))
    return factors, labels


def censor(y: np.ndarray, rate: float, mode: str, target_category: int,
           rng: np.random.Generator) -> np.ndarray:
    """Observation indicators hiding ``ceil(rate * y.size)`` entries."""
    delta = np.ones(y.shape, np.int8)
    wanted = math.ceil(rate * y.size)
    if wanted == 0:
        return delta
    flat = delta.reshape(-1)
    if mode == "random":
        eligible = np.arange(y.size)
    else:
        eligible = np.flatnonzero(y.reshape(-1) == target_category)
        if eligible.size < wanted:
            warnings.warn(f"only {eligible.size} entries of category {target_category} "
                          f"available; censoring {eligible.size} instead of {wanted}")
    chosen = rng.choice(eligible, size=min(wanted, eligible.size), replace=False)
    flat[chosen] = 0
    return delta


def generate_dataset(sc: ScenarioConfig, cutoffs: Optional[Cutoffs] = None) -> Simulation:
    """Simulate one dataset under the model with the scenario's censoring mechanism."""
    rng = np.random.default_rng(sc.seed)
    cutoffs = make_default_cutoffs(sc.c) if cutoffs is None else cutoffs
    if cutoffs.c != sc.c:
        raise ValueError("cutoffs do not match the number of categories")
    theta1, rows = generate_factors(sc.n_row_components, sc.n, sc.d,
                                    sc.component_separation, rng, sc.jitter_var)
    theta2, cols = generate_factors(sc.n_col_components, sc.p, sc.d,
                                    sc.component_separation, rng, sc.jitter_var)
    mz = theta1[:, :, 0] @ theta2[:, :, 0].T
    mw = theta1[:, :, 1] @ theta2[:, :, 1].T
    z = mz + np.sqrt(sc.sigma1_sq) * rng.standard_normal(mz.shape)
    w = mw + np.sqrt(sc.sigma2_sq) * rng.standard_normal(mw.shape)
    y = cutoffs.categorize(z)
    delta = censor(y, sc.censor_rate, sc.censor_mode, sc.target_category, rng)
    data = OrdinalDataset(y, delta, sc.c)
    return Simulation(data, Partition(rows), Partition(cols), int((delta == 0).sum()),
                      z, w, sc)
