"""Perturbation distributions for the escape strength ``xi``.

All five families live on a subset of ``[0, inf)`` and have closed-form CDFs,
quantiles and truncated first moments, so sampling is by inverse CDF and every
integral the tau law needs is evaluated without quadrature.

==============  ==========================  ===============  ==========
family          pdf                         support          mean
==============  ==========================  ===============  ==========
half_cauchy     2g / (pi (x^2 + g^2))       [0, inf)         infinite
pareto          j x^-(1+j)                  [1, inf)         infinite
log_squared     1 / (x log^2 x)             [e, inf)         infinite
exponential     r exp(-r x)                 [0, inf)         1/r
point_mass      Dirac at 1                  {1}              1
==============  ==========================  ===============  ==========
"""

from dataclasses import dataclass
import math

import numba as nb
import numpy as np
from scipy.special import expi

from ._validation import ConfigError, DomainError, check_real

FAMILIES = ("half_cauchy", "pareto", "log_squared", "exponential", "point_mass")

# name of the single shape/scale parameter per family, as it appears in JSON
_PARAM_NAME = {
    "half_cauchy": "gamma",
    "pareto": "j",
    "log_squared": None,
    "exponential": "rate",
    "point_mass": None,
}

FAMILY_CODES = {name: i for i, name in enumerate(FAMILIES)}

_LI_E_MINUS_E = float(expi(1.0)) - math.e


@dataclass(frozen=True)
class TailSpec:
    """A perturbation law. ``param`` is gamma, j or rate depending on ``family``."""

    family: str
    param: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown tail family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "pareto":
            check_real(self.param, "j", low=0.0, high=1.0, low_open=True, high_open=True)
        elif _PARAM_NAME[self.family] is not None:
            check_real(self.param, _PARAM_NAME[self.family], low=0.0, low_open=True)
        else:
            object.__setattr__(self, "param", 1.0)
        object.__setattr__(self, "param", float(self.param))

    @classmethod
    def half_cauchy(cls, gamma=1.0):
        return cls("half_cauchy", gamma)

    @classmethod
    def pareto(cls, j=0.5):
        return cls("pareto", j)

    @classmethod
    def log_squared(cls):
        return cls("log_squared")

    @classmethod
    def exponential(cls, rate=1.0):
        return cls("exponential", rate)

    @classmethod
    def point_mass(cls):
        return cls("point_mass")

    @property
    def code(self):
        return FAMILY_CODES[self.family]

    @property
    def support_min(self):
        return {"pareto": 1.0, "log_squared": math.e, "point_mass": 1.0}.get(self.family, 0.0)

    @property
    def has_finite_mean(self):
        return self.family in ("exponential", "point_mass")

    def to_dict(self):
        out = {"family": self.family}
        name = _PARAM_NAME[self.family]
        if name is not None:
            out[name] = self.param
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        family = data.pop("family", None)
        if family not in FAMILIES:
            raise ConfigError(f"unknown tail family {family!r}")
        name = _PARAM_NAME[family]
        if name is None:
            if data:
                raise ConfigError(f"{family} takes no parameters, got {sorted(data)}")
            return cls(family)
        extra = set(data) - {name}
        if extra:
            raise ConfigError(f"unexpected keys for {family}: {sorted(extra)}")
        return cls(family, data.get(name, 0.5 if family == "pareto" else 1.0))


# -- vectorised kernels -------------------------------------------------------
# These accept arrays, never raise on out-of-support input and are what the
# tau-law evaluator calls in its inner loop.

def _cdf(spec, x):
    x = np.asarray(x, dtype=float)
    fam, a = spec.family, spec.param
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam == "half_cauchy":
            return (2.0 / np.pi) * np.arctan(x / a)
        if fam == "pareto":
            return np.where(x > 1.0, -np.expm1(-a * np.log(np.maximum(x, 1.0))), 0.0)
        if fam == "log_squared":
            return np.where(x > math.e, 1.0 - 1.0 / np.log(np.maximum(x, math.e)), 0.0)
        if fam == "exponential":
            return np.where(x > 0.0, -np.expm1(-a * np.maximum(x, 0.0)), 0.0)
        return np.where(x >= 1.0, 1.0, 0.0)


def _sf(spec, x):
    """1 - CDF, computed without cancellation in the far tail."""
    x = np.asarray(x, dtype=float)
    fam, a = spec.family, spec.param
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam == "half_cauchy":
            return np.where(x > 0.0, (2.0 / np.pi) * np.arctan(a / np.maximum(x, 1e-300)), 1.0)
        if fam == "pareto":
            return np.where(x > 1.0, np.maximum(x, 1.0) ** -a, 1.0)
        if fam == "log_squared":
            return np.where(x > math.e, 1.0 / np.log(np.maximum(x, math.e)), 1.0)
        if fam == "exponential":
            return np.where(x > 0.0, np.exp(-a * np.maximum(x, 0.0)), 1.0)
        return np.where(x >= 1.0, 0.0, 1.0)


def _first_moment(spec, u):
    """Integral of ``x f(x)`` over ``[0, u]``; zero below the support."""
    u = np.asarray(u, dtype=float)
    fam, a = spec.family, spec.param
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if fam == "half_cauchy":
            return (a / np.pi) * np.log1p((u / a) ** 2)
        if fam == "pareto":
            uu = np.maximum(u, 1.0)
            return np.where(u > 1.0, (a / (1.0 - a)) * np.expm1((1.0 - a) * np.log(uu)), 0.0)
        if fam == "log_squared":
            uu = np.maximum(u, math.e)
            lu = np.log(uu)
            return np.where(u > math.e, expi(lu) - uu / lu - _LI_E_MINUS_E, 0.0)
        if fam == "exponential":
            uu = np.maximum(u, 0.0)
            return (-np.expm1(-a * uu) - a * uu * np.exp(-a * uu)) / a
        return np.where(u >= 1.0, 1.0, 0.0)


def _quantile(spec, u):
    u = np.asarray(u, dtype=float)
    fam, a = spec.family, spec.param
    with np.errstate(divide="ignore", over="ignore"):
        if fam == "half_cauchy":
            return a * np.tan(0.5 * np.pi * u)
        if fam == "pareto":
            return np.exp(-np.log1p(-u) / a)
        if fam == "log_squared":
            return np.exp(1.0 / (1.0 - u))
        if fam == "exponential":
            return -np.log1p(-u) / a
        return np.ones_like(u)


# -- public scalar API ----------------------------------------------------------

def pdf(spec, x):
    """Density at ``x >= 0``; zero below the support (``inf`` at the point mass)."""
    x = check_real(x, "x", low=0.0)
    fam, a = spec.family, spec.param
    if fam == "half_cauchy":
        return 2.0 * a / (math.pi * (x * x + a * a))
    if fam == "pareto":
        return a * x ** (-1.0 - a) if x >= 1.0 else 0.0
    if fam == "log_squared":
        return 1.0 / (x * math.log(x) ** 2) if x >= math.e else 0.0
    if fam == "exponential":
        return a * math.exp(-a * x)
    return math.inf if x == 1.0 else 0.0


def cdf(spec, x):
    return float(_cdf(spec, check_real(x, "x", low=0.0)))


def tail_mass(spec, lower):
    """P(xi > lower)."""
    return float(_sf(spec, check_real(lower, "lower", low=0.0)))


def quantile(spec, u):
    """Inverse CDF at ``u`` in [0, 1)."""
    u = check_real(u, "u", low=0.0, high=1.0, high_open=True)
    return float(_quantile(spec, u))


def truncated_first_moment(spec, upper):
    """Integral of ``x f(x)`` over ``[0, upper]``.

    ``upper`` may be ``inf``; the result is then the mean (``inf`` for the
    heavy families).
    """
    if upper != math.inf:
        upper = check_real(upper, "upper")
    if not upper > spec.support_min:
        raise DomainError(f"upper={upper} must exceed the support minimum {spec.support_min}")
    if upper == math.inf:
        if spec.family == "exponential":
            return 1.0 / spec.param
        if spec.family == "point_mass":
            return 1.0
        return math.inf
    return float(_first_moment(spec, upper))


_EXP_MAX = 709.782712893384


@nb.njit(cache=True)
def _exp_or_inf(x):
    return math.exp(x) if x < _EXP_MAX else math.inf


@nb.njit(cache=True)
def quantile_scalar(code, a, u):
    """Scalar inverse CDF by family code.

    Compiled, and shared by :func:`sample` and the Monte Carlo kernels, so
    both paths draw bit-identical variates.
    """
    if code == 0:
        return a * math.tan(0.5 * math.pi * u)
    if code == 1:
        return _exp_or_inf(-math.log1p(-u) / a)
    if code == 2:
        return _exp_or_inf(1.0 / (1.0 - u))
    if code == 3:
        return -math.log1p(-u) / a
    return 1.0


def sample(spec, n, rng, scale_rule=None):
    """Draw one variate by inverse CDF from a single uniform of ``rng``.

    ``rng`` is anything with a ``random()`` method. ``scale_rule`` (model III)
    multiplies the variate by ``scale_rule(n)``.
    """
    x = quantile_scalar(spec.code, spec.param, rng.random())
    if scale_rule is not None:
        x *= scale_rule(n)
    return x
