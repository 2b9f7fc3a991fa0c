"""Small argument checkers shared by the public entry points."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class ConfigError(ValueError):
    """Invalid model, ensemble or run configuration."""


class NumericalError(RuntimeError):
    """A quadrature, series or fit failed to reach its tolerance."""


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(value, name, *, low=None, high=None, low_open=False, high_open=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ConfigError(f"{name}={value} below allowed range")
    if high is not None and (value > high or (high_open and value == high)):
        raise ConfigError(f"{name}={value} above allowed range")
    return value


def check_delta_grid(deltas):
    """Return ``deltas`` as a 1-d float array of positive, strictly decreasing values."""
    deltas = check_array(np.asarray(deltas, dtype=float).reshape(-1, 1), ensure_min_samples=1)
    deltas = deltas.ravel()
    if np.any(deltas <= 0):
        raise ConfigError("delta grid must be strictly positive")
    if deltas.size > 1 and np.any(np.diff(deltas) >= 0):
        raise ConfigError("delta grid must be strictly decreasing")
    return deltas


def check_checkpoints(checkpoints, n_steps):
    cps = np.asarray(checkpoints, dtype=np.int64).ravel()
    if cps.size == 0:
        raise ConfigError("at least one checkpoint is required")
    if np.any(np.diff(cps) <= 0):
        raise ConfigError("checkpoints must be strictly increasing")
    if cps[0] < 1 or cps[-1] > n_steps:
        raise ConfigError(f"checkpoints must lie in [1, {n_steps}]")
    return cps
