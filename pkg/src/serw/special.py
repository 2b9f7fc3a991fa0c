"""Upper incomplete gamma function and the escape-rate integral.

``upper_incomplete_gamma`` covers real ``s`` of either sign, which the
library routines in scipy do not (``gammaincc`` needs ``s > 0``).
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import gamma as _gamma
from scipy.special import zeta

from ._validation import DomainError, NumericalError, check_positive_int, check_real

EULER_GAMMA = 0.57721566490153286061

_EPS = 1e-16
_MAX_ITER = 10_000


def _gamma1p_minus1_over_s(s):
    """``(Gamma(1+s) - 1) / s`` for ``|s| <= 0.5`` without cancellation.

    Uses ``log Gamma(1+s) = -gamma_E s + sum_{k>=2} (-1)^k zeta(k) s^k / k``.
    """
    if s == 0.0:
        return -EULER_GAMMA
    lg = -EULER_GAMMA * s
    term = -s
    for k in range(2, 200):
        term *= -s
        inc = zeta(k) * term / k
        lg += inc
        if abs(inc) < _EPS * abs(lg):
            break
    return math.expm1(lg) / s


def _cf(s, x):
    """Modified Lentz evaluation of the continued fraction for ``Gamma(s, x)``."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + s * math.log(x)) * h
    raise NumericalError(f"incomplete gamma continued fraction stalled at s={s}, x={x}")


def _lower_series(s, x):
    """``gamma(s, x) = x^s e^-x sum_n x^n / (s (s+1) ... (s+n))`` for ``s > 0``."""
    term = 1.0 / s
    total = term
    a = s
    for _ in range(_MAX_ITER):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < _EPS * abs(total):
            return math.exp(-x + s * math.log(x)) * total
    raise NumericalError(f"incomplete gamma series stalled at s={s}, x={x}")


def _small_s_series(s, x):
    """``Gamma(s, x)`` for ``|s| <= 0.5`` and moderate ``x``.

    ``Gamma(s, x) = [Gamma(s) - x^s / s] - x^s sum_{n>=1} (-x)^n / (n! (s+n))``,
    with the bracket rewritten so that the two ``1/s`` poles cancel analytically.
    """
    lx = math.log(x)
    if s == 0.0:
        head = -EULER_GAMMA - lx
    else:
        head = _gamma1p_minus1_over_s(s) - math.expm1(s * lx) / s
    total = 0.0
    term = 1.0
    for n in range(1, _MAX_ITER):
        term *= -x / n
        inc = term / (s + n)
        total += inc
        if abs(inc) < _EPS * max(abs(total), 1e-300):
            break
    else:
        raise NumericalError(f"incomplete gamma series stalled at s={s}, x={x}")
    return head - math.exp(s * lx) * total


def upper_incomplete_gamma(s, x):
    """``Gamma(s, x)``, the integral of ``t^(s-1) e^-t`` over ``[x, inf)``.

    ``s`` may be any real number; ``x`` must be positive.

    >>> round(upper_incomplete_gamma(1.0, 1.0), 12) == round(math.exp(-1.0), 12)
    True
    """
    s = check_real(s, "s")
    x = check_real(x, "x")
    if x <= 0.0:
        raise DomainError(f"x must be positive, got {x}")
    if x >= max(1.0, s + 1.0):
        return _cf(s, x)
    if abs(s) <= 0.5:
        return _small_s_series(s, x)
    if s > 0.5:
        return float(_gamma(s)) - _lower_series(s, x)
    # s < -0.5: step down from s + 1, where Gamma(s, x) = (Gamma(s+1, x) - x^s e^-x) / s
    return (upper_incomplete_gamma(s + 1.0, x) - math.exp(s * math.log(x) - x)) / s


def rate_integral(k, d=1, *, rtol=1e-10, tail_tol=1e-12):
    """``f(k) = integral over [1, inf) of exp(-k x) / x^((2d-1)(1+k)) dx``.

    In d = 1 the integral diverges logarithmically as ``k -> 0``, so ``k`` must
    be positive; for ``d >= 2`` it is finite down to ``k = 0``. The range is
    cut at ``X`` where the neglected tail is below ``tail_tol`` and the rest
    is integrated adaptively in ``u = log x``.
    """
    d = check_positive_int(d, "d")
    k = check_real(k, "k")
    if k < 0.0 or (d == 1 and k == 0.0):
        raise DomainError(f"rate integral needs k > 0 in d = 1 (k >= 0 for d >= 2), got k={k}")
    expo = (2 * d - 1) * (1.0 + k)
    # tail beyond X is at most min(exp(-kX)/k, X^(1-expo)/(expo-1))
    log_x = math.inf
    if k > 0.0:
        # exp(-kX)/k < tol  <=>  X > log(1/(k tol)) / k
        log_x = math.log(max(math.log(1.0 / (k * tail_tol)), 1.0) / k)
    if expo > 1.0:
        log_x = min(log_x, math.log(1.0 / (tail_tol * (expo - 1.0))) / (expo - 1.0))
    log_x = max(log_x, 1.0)

    def integrand(u):
        return math.exp(-k * math.exp(u) - (expo - 1.0) * u)

    # the integrand is flat up to u ~ log(1/k), then collapses; split there
    pts = None
    if k > 0.0 and 0.0 < -math.log(k) < log_x:
        pts = [-math.log(k)]
    val, err = integrate.quad(integrand, 0.0, log_x, epsabs=0.0, epsrel=rtol, limit=500, points=pts)
    if not np.isfinite(val) or err > 10 * rtol * abs(val):
        raise NumericalError(f"rate integral quadrature failed at k={k}, d={d} (err {err:.3g})")
    return val
