"""delta-sweeps of the diffusion constant and scaling-law fits.

Six candidate laws for ``nu(delta)`` as ``delta -> 0`` (``L = |log delta|``):

==================  ===============================
INV_LOG             nu ~ c / L
INV_LOGLOG          nu ~ c / log L
OFFSET_LINEAR       nu = nu0 + c delta
OFFSET_DELTA_LOG    nu = nu0 + c delta L
OFFSET_POWER        nu = nu0 + c delta^j,  0 < j < 1
OFFSET_INV_LOG2     nu = nu0 + c / L^2
==================  ===============================

The two vanishing laws are fitted affinely in the reciprocal,
``1/nu = a + T/c`` with ``T = L`` or ``log L``: the intercept ``a`` absorbs
the slowly varying next-order term so that the family comparison is about
the leading shape. With ``a = 0`` this is the pure law. Offset laws are fitted
linearly in ``nu - nu0`` with ``nu0`` supplied (from the delta = 0 series) or,
if absent, fitted as a free intercept.

Families are ranked by the relative RMS residual
``sqrt(mean(((nu - nu_hat) / nu)^2))``; every family's residual is kept.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import math
import os

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, NumericalError, check_delta_grid
from .tails import truncated_first_moment
from .tau import DEFAULT_MAX_TERMS, DEFAULT_TOL, TauLaw, diffusion_constant

MIN_POINTS = 5


class ScalingFamily(str, Enum):
    INV_LOG = "INV_LOG"
    INV_LOGLOG = "INV_LOGLOG"
    OFFSET_LINEAR = "OFFSET_LINEAR"
    OFFSET_DELTA_LOG = "OFFSET_DELTA_LOG"
    OFFSET_POWER = "OFFSET_POWER"
    OFFSET_INV_LOG2 = "OFFSET_INV_LOG2"

    @property
    def is_offset(self):
        return self.name.startswith("OFFSET")

    def transform(self, delta, j=None):
        """The shape function ``g(delta)``: nu ~ c g for INV laws, nu - nu0 ~ c g for offsets."""
        delta = np.asarray(delta, dtype=float)
        L = np.abs(np.log(delta))
        if self is ScalingFamily.INV_LOG:
            return 1.0 / L
        if self is ScalingFamily.INV_LOGLOG:
            return 1.0 / np.log(L)
        if self is ScalingFamily.OFFSET_LINEAR:
            return delta
        if self is ScalingFamily.OFFSET_DELTA_LOG:
            return delta * L
        if self is ScalingFamily.OFFSET_POWER:
            if j is None:
                raise ValueError("OFFSET_POWER needs an exponent")
            return delta**j
        return 1.0 / L**2


FAMILIES = tuple(ScalingFamily)


def _as_family(family):
    try:
        return ScalingFamily(family.upper() if isinstance(family, str) else family)
    except ValueError:
        raise ConfigError(f"unknown scaling family {family!r}") from None


def relative_rms(y, y_hat):
    y = np.asarray(y, dtype=float)
    return float(np.sqrt(np.mean(((y - y_hat) / y) ** 2)))


def _lstsq(A, b):
    coef, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[1] or sv[-1] <= 1e-12 * sv[0]:
        raise NumericalError("degenerate design matrix in scaling fit")
    return coef


class ScalingLawRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of one scaling family to ``(delta, nu)`` points.

    Parameters
    ----------
    family : str or ScalingFamily
    nu0 : float, optional
        Fixed offset for OFFSET families. ``None`` fits it as an intercept.
        Ignored by the INV families.
    j_bounds : (float, float)
        Search interval for the OFFSET_POWER exponent when the log-linear
        estimate is unavailable or falls outside it.

    Attributes
    ----------
    coef_ : float
        The constant ``c``.
    intercept_ : float
        ``a`` in ``1/nu = a + T/c`` for INV laws, else ``nu0_``.
    exponent_ : float or None
        Fitted ``j`` (OFFSET_POWER only).
    nu0_ : float
        Offset used (0 for INV laws).
    residual_ : float
        Relative RMS residual on the training points.
    residual_abs_ : float
        Absolute RMS residual.
    """

    def __init__(self, family="INV_LOG", nu0=None, j_bounds=(1e-3, 0.999)):
        self.family = family
        self.nu0 = nu0
        self.j_bounds = j_bounds

    def fit(self, X, y):
        delta = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if delta.shape != y.shape:
            raise ConfigError("X and y lengths differ")
        if delta.size < MIN_POINTS:
            raise ConfigError(f"need at least {MIN_POINTS} points, got {delta.size}")
        if np.any(delta <= 0) or np.any(delta >= 1) or not np.all(np.isfinite(y)):
            raise ConfigError("deltas must lie in (0, 1) and nu must be finite")
        fam = _as_family(self.family)
        self.exponent_ = None
        if not fam.is_offset:
            if np.any(y <= 0):
                raise ConfigError("INV laws need positive nu")
            # transform() is 1/T, regress 1/nu on T
            T = 1.0 / fam.transform(delta)
            a, b = _lstsq(np.c_[np.ones_like(T), T], 1.0 / y)
            if b <= 0:
                raise NumericalError(f"{fam.value} fit has non-positive slope")
            self.coef_, self.intercept_, self.nu0_ = 1.0 / b, a, 0.0
        elif fam is ScalingFamily.OFFSET_POWER:
            self._fit_power(delta, y)
        else:
            self.coef_, self.nu0_ = self._offset_lstsq(fam.transform(delta), y)
            self.intercept_ = self.nu0_
        self.family_ = fam
        y_hat = self.predict(delta)
        self.residual_ = relative_rms(y, y_hat)
        self.residual_abs_ = float(np.sqrt(np.mean((y - y_hat) ** 2)))
        return self

    def _offset_lstsq(self, g, y):
        if self.nu0 is not None:
            gg = float(g @ g)
            if gg == 0.0:
                raise NumericalError("degenerate design matrix in scaling fit")
            return float(g @ (y - self.nu0)) / gg, float(self.nu0)
        nu0, c = _lstsq(np.c_[np.ones_like(g), g], y)
        return float(c), float(nu0)

    def _fit_power(self, delta, y):
        lo, hi = self.j_bounds
        j = None
        if self.nu0 is not None:
            z = y - self.nu0
            if np.all(z > 0):
                j, _ = np.polyfit(np.log(delta), np.log(z), 1)
                if not lo < j < hi:
                    j = None
        if j is None:

            def loss(jj):
                c, nu0 = self._offset_lstsq(delta**jj, y)
                return relative_rms(y, nu0 + c * delta**jj)

            res = minimize_scalar(loss, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
            j = res.x
        self.exponent_ = float(j)
        self.coef_, self.nu0_ = self._offset_lstsq(delta**j, y)
        self.intercept_ = self.nu0_

    def predict(self, X):
        check_is_fitted(self, "coef_")
        delta = np.asarray(X, dtype=float).reshape(-1)
        fam = self.family_
        if not fam.is_offset:
            T = 1.0 / fam.transform(delta)
            return 1.0 / (self.intercept_ + T / self.coef_)
        return self.nu0_ + self.coef_ * fam.transform(delta, self.exponent_)


@dataclass(frozen=True)
class ScalingFit:
    family: ScalingFamily
    c: float
    nu0: float
    j: float | None
    intercept: float
    residual: float
    residual_abs: float
    n_points: int

    @property
    def residual_over_nu0(self):
        return self.residual_abs / self.nu0 if self.nu0 > 0 else math.nan

    def to_dict(self):
        return {
            "family": self.family.value,
            "c": self.c,
            "nu0": self.nu0,
            "j": self.j,
            "intercept": self.intercept,
            "residual": self.residual,
            "residual_abs": self.residual_abs,
            "n_points": self.n_points,
        }


@dataclass
class SweepResult:
    """``nu`` over a delta grid, one entry per grid point in grid order."""

    model: object
    deltas: np.ndarray
    nu: np.ndarray
    bounds: np.ndarray
    status: list = field(default_factory=list)
    terms_used: list = field(default_factory=list)
    nu0: float | None = None
    mean_tau: np.ndarray | None = None

    @property
    def nonconverged(self):
        return [(float(d), s) for d, s in zip(self.deltas, self.status) if s != "converged"]

    @property
    def points(self):
        return list(zip(self.deltas.tolist(), self.nu.tolist(), self.bounds.tolist()))

    def rows(self):
        for d, v, b, s, t in zip(self.deltas, self.nu, self.bounds, self.status, self.terms_used):
            yield float(d), float(v), float(b), s, int(t)

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "nu0": self.nu0,
            "points": [
                {"delta": d, "nu": v, "truncation_bound": b, "status": s, "terms_used": t}
                for d, v, b, s, t in self.rows()
            ],
        }


def _threads():
    try:
        return max(1, int(os.environ.get("SERW_THREADS", "1")))
    except ValueError:
        raise ConfigError("SERW_THREADS must be an integer") from None


def nu_at_zero(model, tol=DEFAULT_TOL, max_terms=DEFAULT_MAX_TERMS):
    """Unperturbed diffusion constant of ``model``'s lattice (0 in d = 1)."""
    return diffusion_constant(TauLaw(model.with_delta(0.0)), tol, max_terms)


def sweep_nu(model_template, delta_grid, tol=DEFAULT_TOL, max_terms=DEFAULT_MAX_TERMS, *, with_nu0=None):
    """Analytic ``nu(delta)`` over a strictly decreasing grid.

    Points are independent and may be evaluated on ``SERW_THREADS`` threads;
    results are collected in grid order. Non-converged points are kept and
    listed in ``SweepResult.nonconverged``. ``with_nu0`` (default: d >= 2)
    also stores the delta = 0 value for offset fits.
    """
    grid = check_delta_grid(delta_grid)
    models = [model_template.with_delta(float(d)) for d in grid]

    def one(m):
        law = TauLaw(m)
        return diffusion_constant(law, tol, max_terms), law.summary(tol, max_terms).mean.value

    n = _threads()
    if n > 1:
        with ThreadPoolExecutor(n) as ex:
            vals = list(ex.map(one, models))
    else:
        vals = [one(m) for m in models]
    means = np.array([e for _, e in vals])
    vals = [v for v, _ in vals]
    if with_nu0 is None:
        with_nu0 = model_template.dimension >= 2
    nu0 = nu_at_zero(model_template, tol, max_terms).value if with_nu0 else None
    return SweepResult(
        model=models[0],
        deltas=grid,
        nu=np.array([v.value for v in vals]),
        bounds=np.array([v.truncation_bound for v in vals]),
        status=[v.status for v in vals],
        terms_used=[v.terms_used for v in vals],
        nu0=nu0,
        mean_tau=means,
    )


def _xy(points):
    if isinstance(points, SweepResult):
        return points.deltas, points.nu
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ConfigError("points must be a SweepResult or rows of (delta, nu[, bound])")
    return arr[:, 0], arr[:, 1]


def fit_scaling(points, family, nu0=None):
    """Fit one family. ``nu0`` defaults to the sweep's stored offset (if any) for OFFSET laws."""
    fam = _as_family(family)
    delta, y = _xy(points)
    if nu0 is None and isinstance(points, SweepResult):
        nu0 = points.nu0
    if nu0 is None and points_dimension(points) == 1:
        nu0 = 0.0
    est = ScalingLawRegressor(fam, nu0=nu0 if fam.is_offset else None).fit(delta, y)
    return ScalingFit(
        family=fam,
        c=float(est.coef_),
        nu0=float(est.nu0_),
        j=est.exponent_,
        intercept=float(est.intercept_),
        residual=float(est.residual_),
        residual_abs=float(est.residual_abs_),
        n_points=len(y),
    )


def points_dimension(points):
    if isinstance(points, SweepResult):
        return points.model.dimension
    return None


def select_family(points, nu0=None, families=FAMILIES):
    """Fit every family; return ``(best, {family: fit or error message})``.

    Families that cannot be fitted (for example a non-positive INV slope) are
    reported with their error instead of a fit.
    """
    fits = {}
    for fam in families:
        fam = _as_family(fam)
        try:
            fits[fam] = fit_scaling(points, fam, nu0)
        except NumericalError as exc:
            fits[fam] = str(exc)
    ok = [f for f in fits.values() if isinstance(f, ScalingFit)]
    if not ok:
        raise NumericalError("no scaling family could be fitted")
    return min(ok, key=lambda f: f.residual), fits


def compensated_ratio(points, family, j=None):
    """``nu / g(delta)`` for INV laws or ``(nu - nu0) / g(delta)`` for offsets."""
    fam = _as_family(family)
    delta, y = _xy(points)
    if fam.is_offset:
        nu0 = points.nu0 if isinstance(points, SweepResult) and points.nu0 is not None else 0.0
        y = y - nu0
    return y / fam.transform(delta, j)


def plot_data(points, fits):
    """Per family: ``x = g(delta)``, observed ``nu`` and the fitted curve."""
    delta, y = _xy(points)
    out = {}
    for fam, fit in fits.items():
        if not isinstance(fit, ScalingFit):
            continue
        x = fam.transform(delta, fit.j)
        if fam.is_offset:
            y_hat = fit.nu0 + fit.c * x
        else:
            y_hat = 1.0 / (fit.intercept + 1.0 / (x * fit.c))
        out[fam.value] = {"x": x.tolist(), "nu": y.tolist(), "nu_fit": y_hat.tolist()}
    return out


def effective_perturbation_exponent(tail, deltas, c=1.0):
    """Log-log slope of ``delta * M(c / delta)`` against ``delta``.

    ``M`` is the truncated first moment of ``tail``; for a Pareto(j) law the
    slope tends to ``j``.
    """
    deltas = check_delta_grid(deltas)
    eff = np.array([d * truncated_first_moment(tail, c / d) for d in deltas])
    slope, _ = np.polyfit(np.log(deltas), np.log(eff), 1)
    return float(slope)
