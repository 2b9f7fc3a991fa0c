"""Law of tau, the number of consecutive traversals of the first edge.

With ``p_m`` the probability of re-traversing an edge already crossed ``m``
times in a row, ``P(tau >= n) = p_1 p_2 ... p_{n-1}`` and
``P(tau = n) = P(tau >= n) (1 - p_n)``. The diffusion constant is

    nu = P(tau odd) / ((1 - P(tau odd) / d) E[tau])

which is zero when ``E[tau]`` diverges (d = 1 without perturbation).

Series are summed in compiled chunks with compensated accumulation; each
reported value carries a truncation bound derived from a geometric comparison
(``sup_{k>=N} p_k < 1``) or, in d >= 2, from the exact unperturbed power-law
tail. The bounds are heuristic in the sense that floating-point rounding is
not included.
"""

from dataclasses import dataclass
import math

import numba as nb
import numpy as np

from .tails import _cdf, _first_moment, _sf
from .walk import ModelSpec

DEFAULT_TOL = 1e-10
DEFAULT_MAX_TERMS = 4 * 10**9


@dataclass(frozen=True)
class SeriesValue:
    """A summed series: the exact value lies in ``value +/- truncation_bound``.

    ``status`` is ``converged``, ``diverges``, ``subdiffusive`` (a diffusion
    constant forced to 0 by a divergent mean) or ``truncated`` (term cap hit
    before the bound fell below tolerance).
    """

    value: float
    truncation_bound: float
    terms_used: int
    status: str = "converged"

    @property
    def converged(self):
        return self.status in ("converged", "subdiffusive")

    @property
    def diverges(self):
        return self.status == "diverges"

    def to_dict(self):
        return {
            "value": self.value,
            "truncation_bound": self.truncation_bound,
            "terms_used": self.terms_used,
            "status": self.status,
        }


def continue_escape(model, m):
    """Arrays ``(p_m, 1 - p_m)`` for traversal counts ``m`` (each >= 1).

    The escape probability is assembled from non-cancelling pieces so that it
    keeps full relative precision when ``p_m`` is close to 1.
    """
    m = np.asarray(m, dtype=float)
    c = model.reinforcement_continue(m)
    c_esc = model.reinforcement_escape(m)
    kind, delta = model.perturbation, model.delta
    if kind == "none":
        return c, c_esc
    if kind == "deterministic":
        p = np.maximum(c - delta, 0.0)
        return p, np.where(p > 0.0, c_esc + delta, 1.0)
    s = model.scale_rule.scales(m) if kind == "independent" else 1.0
    upper = c / (delta * s)
    first = s * _first_moment(model.tail, upper)
    p = np.maximum(c * _cdf(model.tail, upper) - delta * first, 0.0)
    q = np.minimum(c_esc + c * _sf(model.tail, upper) + delta * first, 1.0)
    return p, np.where(p > 0.0, q, 1.0)


def continue_prob(k, model):
    """Probability of re-traversing the current edge at consecutive count ``k``."""
    if k < 1:
        raise ValueError("traversal count must be >= 1")
    return float(continue_escape(model, [k])[0][0])


def _sup_continue(model, n):
    """Upper bound on ``p_k`` over all ``k >= n``."""
    c_inf = 1.0 if model.reinforced else 1.0 / model.n_moves
    if model.perturbation == "none":
        return c_inf
    if model.perturbation == "deterministic":
        return max(c_inf - model.delta, 0.0)
    s = model.scale_rule(n) if model.perturbation == "independent" else 1.0
    upper = c_inf / (model.delta * s)
    first = s * float(_first_moment(model.tail, upper))
    return min(max(c_inf * float(_cdf(model.tail, upper)) - model.delta * first, 0.0), 1.0)


# survival below the smallest normal double is flushed to 0: in the subnormal
# range s - s*q can round back to s and the product would never reach 0
_TINY = 2.2250738585072014e-308


@nb.njit(cache=True, nogil=True)
def _survival_run(q, s0):
    """Survival values after each factor ``1 - q[i]``, starting from ``s0``."""
    out = np.empty(q.shape[0])
    s = s0
    for i in range(q.shape[0]):
        s = s - s * q[i]
        if s < _TINY:
            s = 0.0
        out[i] = s
    return out


@nb.njit(cache=True, nogil=True)
def _accumulate(q, n0, acc):
    """Add terms ``n0 .. n0+len(q)-1`` into ``acc`` in place.

    Survival is advanced as ``s - s*q`` rather than ``s*p``: ``q`` keeps full
    relative precision where ``p`` is within a few ulps of 1, and the product
    form then drifts systematically over ~1e9 terms.

    ``acc`` = [survival, E, E_comp, odd, odd_comp, even, even_comp]; survival
    is ``P(tau >= n0)`` on entry and ``P(tau >= n0 + used)`` on exit.
    Returns the number of terms used (fewer than ``len(q)`` if survival hit 0).
    """
    s = acc[0]
    e, ec, o, oc, v, vc = acc[1], acc[2], acc[3], acc[4], acc[5], acc[6]
    used = 0
    for i in range(q.shape[0]):
        if s == 0.0:
            break
        t = e + s
        if abs(e) >= s:
            ec += (e - t) + s
        else:
            ec += (s - t) + e
        e = t
        pm = s * q[i]
        if (n0 + i) % 2 == 1:
            t = o + pm
            if abs(o) >= pm:
                oc += (o - t) + pm
            else:
                oc += (pm - t) + o
            o = t
        else:
            t = v + pm
            if abs(v) >= pm:
                vc += (v - t) + pm
            else:
                vc += (pm - t) + v
            v = t
        s = s - pm
        if s < _TINY:
            s = 0.0
        used += 1
    acc[0] = s
    acc[1], acc[2], acc[3], acc[4], acc[5], acc[6] = e, ec, o, oc, v, vc
    return used


@dataclass(frozen=True)
class TauSummary:
    mean: SeriesValue
    p_odd: SeriesValue
    p_even: SeriesValue
    pmf_sum: float  # sum of pmf over the terms used
    tail_mass: float  # P(tau > terms_used), exact remainder of the pmf sum
    terms_used: int


class TauLaw:
    """Survival function, pmf and moments of tau for one model.

    Point evaluations are memoised (the memo only grows); series summaries are
    cached per ``(tol, max_terms)``.
    """

    def __init__(self, model: ModelSpec):
        self.model = model
        self._surv = np.ones(1)  # _surv[n-1] = P(tau >= n)
        self._summaries = {}
        d = model.dimension
        self.pmf_monotone = model.perturbation != "independent"
        self.power_tail = model.reinforced and d >= 2
        self.mean_diverges = (
            model.reinforced and d == 1 and model.perturbation == "none"
        )

    def continue_probs(self, m):
        return continue_escape(self.model, m)[0]

    def _extend(self, n):
        have = self._surv.size
        if n <= have:
            return
        size = max(n, 2 * have)
        _, q = continue_escape(self.model, np.arange(have, size, dtype=float))
        ext = _survival_run(q, self._surv[-1])
        self._surv = np.concatenate([self._surv, ext])

    def survival(self, n):
        """``P(tau >= n)`` for integer ``n >= 1``."""
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        self._extend(n)
        return float(self._surv[n - 1])

    def survival_table(self, n_max):
        self._extend(n_max)
        return self._surv[:n_max].copy()

    def pmf(self, n):
        """``P(tau = n)``."""
        _, q = continue_escape(self.model, [n])
        return self.survival(n) * float(q[0])

    def pmf_table(self, n_max):
        _, q = continue_escape(self.model, np.arange(1, n_max + 1, dtype=float))
        return self.survival_table(n_max) * q

    def _mean_tail_bound(self, n_next, surv_next):
        """Bound on ``sum_{n >= n_next} P(tau >= n)`` given ``surv_next = P(tau >= n_next)``."""
        if surv_next == 0.0:
            return 0.0
        bound = math.inf
        p_sup = _sup_continue(self.model, n_next)
        if p_sup < 1.0:
            bound = surv_next / (1.0 - p_sup)
        if self.power_tail:
            d2 = self.model.n_moves
            bound = min(bound, surv_next * (1.0 + (n_next + 1) / (d2 - 2)))
        return bound

    def summary(self, tol=DEFAULT_TOL, max_terms=DEFAULT_MAX_TERMS):
        key = (tol, max_terms)
        if key not in self._summaries:
            self._summaries[key] = self._summarise(tol, max_terms)
        return self._summaries[key]

    def _summarise(self, tol, max_terms):
        acc = np.zeros(7)
        acc[0] = 1.0
        n = 1  # next term index
        chunk = 1024
        while True:
            size = min(chunk, max_terms - n + 1)
            m = np.arange(n, n + size, dtype=float)
            _, q = continue_escape(self.model, m)
            used = _accumulate(q, n, acc)
            n += used
            surv = acc[0]
            e_bound = self._mean_tail_bound(n, surv)
            pmf_next = surv * float(continue_escape(self.model, [n])[1][0]) if surv else 0.0
            par_bound = pmf_next / 4.0 if self.pmf_monotone else surv / 2.0
            e_done = e_bound <= tol or self.mean_diverges
            if (e_done and par_bound <= tol) or surv == 0.0 or n > max_terms:
                break
            chunk = min(chunk * 2, 1 << 21)

        terms = n - 1
        e_sum = acc[1] + acc[2]
        odd, even = acc[3] + acc[4], acc[5] + acc[6]
        if self.pmf_monotone:
            alt = pmf_next / 2.0  # midpoint of [0, pmf(n)] for the alternating remainder
            lead, trail = (surv + alt) / 2.0, (surv - alt) / 2.0
            odd_tail, even_tail = (lead, trail) if n % 2 == 1 else (trail, lead)
        else:
            odd_tail = even_tail = surv / 2.0
        status = "converged"
        if self.mean_diverges:
            mean = SeriesValue(math.inf, math.inf, terms, "diverges")
        else:
            if e_bound > tol:
                status = "truncated"
            mean = SeriesValue(e_sum + e_bound / 2.0, e_bound / 2.0, terms, status)
        par_status = "converged" if par_bound <= tol else "truncated"
        return TauSummary(
            mean=mean,
            p_odd=SeriesValue(odd + odd_tail, par_bound, terms, par_status),
            p_even=SeriesValue(even + even_tail, par_bound, terms, par_status),
            pmf_sum=odd + even,
            tail_mass=surv,
            terms_used=terms,
        )


def _as_law(law):
    return law if isinstance(law, TauLaw) else TauLaw(law)


def tau_survival(n, law):
    return _as_law(law).survival(n)


def tau_mean(law, tol=DEFAULT_TOL, max_terms=DEFAULT_MAX_TERMS):
    """``E[tau] = sum_n P(tau >= n)``; ``status == 'diverges'`` in d = 1 without perturbation."""
    return _as_law(law).summary(tol, max_terms).mean


def tau_parity(law, tol=DEFAULT_TOL, max_terms=DEFAULT_MAX_TERMS):
    """``(P(tau odd), P(tau even))``."""
    s = _as_law(law).summary(tol, max_terms)
    return s.p_odd, s.p_even


def _nu(p_odd, mean, d):
    return p_odd / ((1.0 - p_odd / d) * mean)


def diffusion_constant(law, tol=DEFAULT_TOL, max_terms=DEFAULT_MAX_TERMS):
    """Diffusion constant from the law of tau, with a propagated truncation bound.

    Returns value 0 with status ``subdiffusive`` when ``E[tau]`` diverges.
    """
    law = _as_law(law)
    s = law.summary(tol, max_terms)
    if s.mean.diverges:
        return SeriesValue(0.0, 0.0, s.terms_used, "subdiffusive")
    d = law.model.dimension
    po, e = s.p_odd, s.mean
    value = _nu(po.value, e.value, d)
    lo = _nu(po.value - po.truncation_bound, e.value + e.truncation_bound, d)
    hi = _nu(po.value + po.truncation_bound, e.value - e.truncation_bound, d)
    status = "converged" if po.converged and e.converged else "truncated"
    return SeriesValue(value, max(hi - value, value - lo), s.terms_used, status)


def diffusion_constant_parity_ratio(law, tol=DEFAULT_TOL, max_terms=DEFAULT_MAX_TERMS):
    """``P(tau odd) / (P(tau even) E[tau])``; equals :func:`diffusion_constant` in d = 1."""
    law = _as_law(law)
    s = law.summary(tol, max_terms)
    if s.mean.diverges:
        return SeriesValue(0.0, 0.0, s.terms_used, "subdiffusive")
    po, pe, e = s.p_odd, s.p_even, s.mean
    value = po.value / (pe.value * e.value)
    lo = (po.value - po.truncation_bound) / (
        (pe.value + pe.truncation_bound) * (e.value + e.truncation_bound))
    hi = (po.value + po.truncation_bound) / (
        (pe.value - pe.truncation_bound) * (e.value - e.truncation_bound))
    status = "converged" if po.converged and e.converged else "truncated"
    return SeriesValue(value, max(hi - value, value - lo), s.terms_used, status)
