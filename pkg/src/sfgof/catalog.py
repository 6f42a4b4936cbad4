"""Built-in model families and shipped alternatives, addressable by name.

Configuration files refer to models and alternatives by short names; a
plug-in escape hatch accepts a ``module:callable`` path whose callable
returns the model (or alternative function) given the remaining parameters.
"""

from __future__ import annotations

import importlib
from typing import Any, Callable

from . import ar, ergodic, poisson, small_noise
from .errors import ConfigError


def _load_plugin(spec: str) -> Callable:
    mod_name, _, attr = spec.partition(":")
    if not mod_name or not attr:
        raise ConfigError(f"plugin spec must look like 'module:callable', got {spec!r}")
    module = importlib.import_module(mod_name)
    return getattr(module, attr)


def build_small_noise_model(params: dict[str, Any]) -> small_noise.SmallNoiseModel:
    params = dict(params)
    params.pop("theta0", None)
    if "plugin" in params:
        return _load_plugin(params.pop("plugin"))(**params)
    name = params.pop("name", "linear")
    if name == "linear":
        return small_noise.linear_model(**params)
    if name == "gated-linear":
        return small_noise.gated_linear_model(**params)
    raise ConfigError(f"unknown small-noise model {name!r}")


def small_noise_alternative(
    model: small_noise.SmallNoiseModel, name: str, params: dict[str, Any]
) -> small_noise.SmallNoiseModel:
    params = dict(params)
    if name == "plugin":
        drift = _load_plugin(params.pop("plugin"))(**params)
    elif name == "sin-perturbed":
        drift = small_noise.sin_perturbed_drift(horizon=model.horizon, **params)
    elif name == "gated-early":
        drift = small_noise.gated_early_drift(horizon=model.horizon, **params)
    else:
        raise ConfigError(f"unknown small-noise alternative {name!r}")
    return small_noise.with_alternative_drift(model, drift)


def build_ergodic_model(params: dict[str, Any]) -> ergodic.ErgodicModel:
    params = dict(params)
    params.pop("theta0", None)
    if "plugin" in params:
        return _load_plugin(params.pop("plugin"))(**params)
    name = params.pop("name", "ou")
    if name == "ou":
        return ergodic.ou_model(**params)
    raise ConfigError(f"unknown ergodic model {name!r}")


def ergodic_alternative(model: ergodic.ErgodicModel, name: str, params: dict[str, Any]) -> ergodic.ErgodicModel:
    params = dict(params)
    if name == "plugin":
        drift = _load_plugin(params.pop("plugin"))(**params)
    elif name == "tanh-perturbed":
        drift = ergodic.tanh_perturbed_drift(**params)
    else:
        raise ConfigError(f"unknown ergodic alternative {name!r}")
    return ergodic.with_alternative_drift(model, drift)


def build_poisson_model(params: dict[str, Any]) -> poisson.PoissonModel:
    params = dict(params)
    params.pop("theta0", None)
    if "plugin" in params:
        return _load_plugin(params.pop("plugin"))(**params)
    name = params.pop("name", "linear-h")
    if name == "linear-h":
        period = params.pop("period", 1.0)
        profile = poisson.sin_profile(period, amplitude=params.pop("profile_amplitude", 0.5))
        return poisson.linear_intensity_model(
            profile,
            lam0=params.pop("lam0", 1.0),
            period=period,
            theta_lo=params.pop("theta_lo", 0.5),
            theta_hi=params.pop("theta_hi", 5.0),
        )
    raise ConfigError(f"unknown poisson model {name!r}")


def poisson_alternative(model: poisson.PoissonModel, name: str, params: dict[str, Any]) -> Callable:
    params = dict(params)
    if name == "plugin":
        return _load_plugin(params.pop("plugin"))(**params)
    if name == "step-bump":
        if not isinstance(model, poisson.LinearPoissonModel):
            raise ConfigError("step-bump alternative needs the linear-intensity family")
        return poisson.step_bump_intensity(model, **params)
    raise ConfigError(f"unknown poisson alternative {name!r}")


def build_ar_model(params: dict[str, Any]) -> ar.ARModel:
    params = dict(params)
    params.pop("theta0", None)
    if "plugin" in params:
        return _load_plugin(params.pop("plugin"))(**params)
    name = params.pop("name", "linear-gaussian")
    if name == "linear-gaussian":
        return ar.linear_gaussian_ar(**params)
    raise ConfigError(f"unknown autoregression model {name!r}")


def ar_alternative(model: ar.ARModel, name: str, params: dict[str, Any]) -> ar.ARModel:
    params = dict(params)
    if name == "plugin":
        regression = _load_plugin(params.pop("plugin"))(**params)
    elif name == "cosine-perturbed":
        regression = ar.cosine_perturbed_regression(**params)
    else:
        raise ConfigError(f"unknown autoregression alternative {name!r}")
    return ar.with_alternative_regression(model, regression)
