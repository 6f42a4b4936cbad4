"""Asymptotically distribution-free goodness-of-fit tests for stochastic processes.

Four observation models share one testing recipe: fit the parametric
family, accumulate the normalized score process along the sample, apply
the empirical time change, and compare the quadratic or sup functional to
a Brownian-bridge critical value.  The limit law is the same for every
family and every parameter value, so a single critical-value table serves
all tests.
"""

from .errors import ConfigError, DomainError, ModelError, NumericalError, SfgofError
from .inference_kit import ParamInterval, RngStream, TimeGrid
from .limit_laws import CriticalValue, critical_value_cvm, critical_value_ks, default_critical_value
from .score import ScorePath, TestOutcome, delta_stat

__all__ = [
    "ConfigError",
    "CriticalValue",
    "DomainError",
    "ModelError",
    "NumericalError",
    "ParamInterval",
    "RngStream",
    "ScorePath",
    "SfgofError",
    "TestOutcome",
    "TimeGrid",
    "critical_value_cvm",
    "critical_value_ks",
    "default_critical_value",
    "delta_stat",
]

__version__ = "0.1.0"
