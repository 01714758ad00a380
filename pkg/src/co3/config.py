"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  List values are comma
separated; matrices are given row-major.  Every key and its default:

=====================  =============  ==========================================
key                    default        meaning
=====================  =============  ==========================================
d                      3              latent dimension
alpha1, alpha2         1, 1           DP concentrations (rows, columns)
preset                 simulation     ``realdata`` switches alphas to 1e-5 / 1e5
sigma1_sq, sigma2_sq   0.1, 1.5       noise variances (fixed, or starting values)
sigma_prior            none           ``a1,b1,a2,b2`` inverse-gamma priors
u1, u2                 1/sqrt(d)      base column variances (one value or two)
M1, M2                 zeros          base means, ``d*2`` values
V1, V2                 identity       base row covariances, ``d*d`` values
c                      inferred       number of categories
cutoffs                k - c/2        interior cutoffs, ``c-1`` values
iterations             2000           Gibbs sweeps
burn_in                iterations/2   discarded sweeps
thin                   1              keep every ``thin``-th draw
seed                   0              RNG seed
init                   singletons     ``singletons`` or ``one``
parallel_latent        false          per-row RNG streams for ``z``/``w``
low_memory             false          stream CPO instead of storing likelihoods
header                 false          input CSV has a header row
binary01               false          input codes are {0,1}; mapped to {1,2}
n, p                   50, 50         simulated dimensions
n_row_components       3              simulated row mixture components
n_col_components       3              simulated column mixture components
component_separation   3.0            spread of simulated component means
jitter_var             0.1            within-component factor variance
censor_rate            0.05           fraction of entries censored
censor_mode            informative    ``informative`` or ``random``
target_category        1              category eligible for informative censoring
replicates             1              number of simulated datasets
=====================  =============  ==========================================
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import Cutoffs, ModelConfig, make_default_cutoffs
from .sampler import GibbsControls
from .simulate import ScenarioConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _optional(parse):
    def inner(text):
        return None if text.strip().lower() in ("", "none") else parse(text)
    return inner


KEYS = {
    "d": (int, 3),
    "alpha1": (float, None),
    "alpha2": (float, None),
    "preset": (str, "simulation"),
    "sigma1_sq": (float, 0.1),
    "sigma2_sq": (float, 1.5),
    "sigma_prior": (_optional(_floats), None),
    "u1": (_optional(_floats), None),
    "u2": (_optional(_floats), None),
    "M1": (_optional(_floats), None),
    "M2": (_optional(_floats), None),
    "V1": (_optional(_floats), None),
    "V2": (_optional(_floats), None),
    "c": (_optional(int), None),
    "cutoffs": (_optional(_floats), None),
    "iterations": (int, 2000),
    "burn_in": (_optional(int), None),
    "thin": (int, 1),
    "seed": (int, 0),
    "init": (str, "singletons"),
    "parallel_latent": (_bool, False),
    "low_memory": (_bool, False),
    "header": (_bool, False),
    "binary01": (_bool, False),
    "n": (int, 50),
    "p": (int, 50),
    "n_row_components": (int, 3),
    "n_col_components": (int, 3),
    "component_separation": (float, 3.0),
    "jitter_var": (float, 0.1),
    "censor_rate": (float, 0.05),
    "censor_mode": (str, "informative"),
    "target_category": (int, 1),
    "replicates": (int, 1),
}

PRESETS = {"simulation": (1.0, 1.0), "realdata": (1e-5, 1e5)}


class Settings(dict):
    """Resolved configuration values keyed by name."""

    def echo(self) -> dict:
        return {k: self[k] for k in sorted(self)}


def parse_config(text: str, source: str = "<config>", overrides=None) -> Settings:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parse, _ = KEYS[key]
        try:
            values[key] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    settings = Settings({k: default for k, (_, default) in KEYS.items()})
    settings.update(values)
    if settings["preset"] not in PRESETS:
        raise ConfigError(f"{source}: preset must be one of {sorted(PRESETS)}")
    a1, a2 = PRESETS[settings["preset"]]
    if settings["alpha1"] is None:
        settings["alpha1"] = a1
    if settings["alpha2"] is None:
        settings["alpha2"] = a2
    if settings["burn_in"] is None:
        settings["burn_in"] = settings["iterations"] // 2
    return settings


def load_config(path=None, overrides=None) -> Settings:
    if path is None:
        return parse_config("", overrides=overrides)
    return parse_config(Path(path).read_text(), source=str(path), overrides=overrides)


def _reshape(values, shape, name):
    if values is None:
        return None
    if len(values) != shape[0] * shape[1]:
        raise ConfigError(f"{name} needs {shape[0] * shape[1]} values, got {len(values)}")
    return np.array(values).reshape(shape)


def model_config(settings: Settings, d=None) -> ModelConfig:
    """Model hyperparameters; a ``d`` different from the configured one drops
    the dimension-dependent matrices back to their defaults."""
    use_d = settings["d"] if d is None else d
    keep = use_d == settings["d"]
    prior = settings["sigma_prior"]
    try:
        return ModelConfig(
            d=use_d, alpha1=settings["alpha1"], alpha2=settings["alpha2"],
            M1=_reshape(settings["M1"], (use_d, 2), "M1") if keep else None,
            M2=_reshape(settings["M2"], (use_d, 2), "M2") if keep else None,
            V1=_reshape(settings["V1"], (use_d, use_d), "V1") if keep else None,
            V2=_reshape(settings["V2"], (use_d, use_d), "V2") if keep else None,
            u1=settings["u1"] if keep else None, u2=settings["u2"] if keep else None,
            sigma1_sq=settings["sigma1_sq"], sigma2_sq=settings["sigma2_sq"],
            sigma_prior=tuple(prior) if prior is not None else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cutoffs_for(settings: Settings, c: int) -> Cutoffs:
    if settings["cutoffs"] is None:
        return make_default_cutoffs(c)
    try:
        cut = Cutoffs.from_interior(settings["cutoffs"])
    except ValueError as exc:
        raise ConfigError(f"cutoffs: {exc}") from None
    if cut.c != c:
        raise ConfigError(f"{len(settings['cutoffs'])} cutoffs given for c={c} categories")
    return cut


def gibbs_controls(settings: Settings, seed=None) -> GibbsControls:
    try:
        return GibbsControls(
            iterations=settings["iterations"], burn_in=settings["burn_in"],
            thin=settings["thin"], seed=settings["seed"] if seed is None else seed,
            parallel_latent=settings["parallel_latent"], low_memory=settings["low_memory"],
            init=settings["init"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def scenario_config(settings: Settings, seed=None) -> ScenarioConfig:
    try:
        return ScenarioConfig(
            n=settings["n"], p=settings["p"], c=settings["c"] or 3, d=settings["d"],
            n_row_components=settings["n_row_components"],
            n_col_components=settings["n_col_components"],
            component_separation=settings["component_separation"],
            jitter_var=settings["jitter_var"], censor_rate=settings["censor_rate"],
            censor_mode=settings["censor_mode"], target_category=settings["target_category"],
            sigma1_sq=settings["sigma1_sq"], sigma2_sq=settings["sigma2_sq"],
            seed=settings["seed"] if seed is None else seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
