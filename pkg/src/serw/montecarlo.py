"""Monte Carlo ensembles of walkers.

Walker ``w`` draws from its own counter-based stream keyed by
``(master_seed, w)``; the compiled kernels consume uniforms in exactly the
order of :func:`serw.walk.step`, so a kernel trajectory can be replayed step
by step in Python.

Walkers are cut into fixed blocks of ``BLOCK`` consecutive indices. Each
block produces a Welford summary per checkpoint; blocks are merged pairwise in
a fixed tree order. Block boundaries and merge order do not depend on the
number of threads, so results are bit-identical for any thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numba as nb
import numpy as np

from ._validation import ConfigError, check_checkpoints, check_positive_int, check_real
from .rng import nb_raw, walker_keys
from .tails import quantile_scalar
from .tau import continue_escape
from .walk import ModelSpec

BLOCK = 1024
_TWO53 = 9007199254740992.0
_TO_UNIT = 1.0 / _TWO53


def default_checkpoints(n_steps):
    """Powers of two up to ``n_steps``, plus ``n_steps`` itself."""
    cps = [1 << i for i in range(int(math.log2(n_steps)) + 1) if (1 << i) <= n_steps]
    if cps[-1] != n_steps:
        cps.append(n_steps)
    return np.array(cps, dtype=np.int64)


def log_checkpoints(n_steps, per_decade=4):
    """Roughly log-spaced integer checkpoints in ``[1, n_steps]``."""
    n_dec = math.log10(n_steps)
    pts = np.unique(np.round(10.0 ** np.linspace(0.0, n_dec, int(n_dec * per_decade) + 1)).astype(np.int64))
    pts = pts[(pts >= 1) & (pts <= n_steps)]
    if pts[-1] != n_steps:
        pts = np.append(pts, n_steps)
    return pts


@dataclass(frozen=True)
class EnsembleConfig:
    model: ModelSpec
    n_steps: int
    n_walkers: int
    checkpoints: tuple = None
    master_seed: int = 0

    def __post_init__(self):
        if not isinstance(self.model, ModelSpec):
            raise ConfigError("model must be a ModelSpec")
        check_positive_int(self.n_steps, "n_steps")
        check_positive_int(self.n_walkers, "n_walkers")
        check_positive_int(self.master_seed, "master_seed", minimum=0)
        if self.master_seed >= 1 << 64:
            raise ConfigError("master_seed must fit in 64 bits")
        cps = default_checkpoints(self.n_steps) if self.checkpoints is None else self.checkpoints
        cps = check_checkpoints(cps, self.n_steps)
        object.__setattr__(self, "checkpoints", tuple(int(c) for c in cps))

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "n_steps": self.n_steps,
            "n_walkers": self.n_walkers,
            "checkpoints": list(self.checkpoints),
            "master_seed": self.master_seed,
        }


@dataclass
class MsdCurve:
    """Mean of ``|S_n|^2`` at each checkpoint with its standard error."""

    checkpoints: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n_walkers: int

    def rows(self):
        for n, m, s in zip(self.checkpoints, self.mean, self.se):
            yield int(n), float(m), float(s), self.n_walkers


@dataclass
class EnsembleResult:
    config: EnsembleConfig
    msd: MsdCurve
    tau_counts: np.ndarray = field(repr=False)  # tau_counts[n] = #walkers with tau = n
    tau_overflow: int = 0  # still on the first edge after n_steps

    def tau_survival(self, n):
        """Empirical ``P(tau >= n)``, valid for ``1 <= n <= n_steps``."""
        if not 1 <= n <= self.config.n_steps:
            raise ValueError("n outside the observed range")
        return (int(self.tau_counts[n:].sum()) + self.tau_overflow) / self.config.n_walkers

    def tau_pmf(self, n):
        return int(self.tau_counts[n]) / self.config.n_walkers if n < len(self.tau_counts) else 0.0


# -- compiled kernels ----------------------------------------------------------

@nb.njit(inline="always")
def _record(x, j, cnt, mean, m2):
    k = cnt + 1.0
    dx = x - mean[j]
    mean[j] += dx / k
    m2[j] += dx * (x - mean[j])


@nb.njit(inline="always")
def _escape_move(r, p, cont, d2):
    u = np.float64(r) * _TO_UNIT
    k = min(int((u - p) / (1.0 - p) * (d2 - 1)), d2 - 2)
    return k if k < cont else k + 1


@nb.njit(cache=True, nogil=True)
def _block_d1_det(keys, n_steps, cps, thr, mean, m2, tau):
    """d = 1 with deterministic continue probabilities: integer thresholds only."""
    ncp = cps.shape[0]
    for w in range(keys.shape[0]):
        key = keys[w]
        r = nb_raw(key, np.uint64(1)) >> np.uint64(11)
        step = 1 if np.float64(r) * _TO_UNIT * 2.0 < 1.0 else -1
        pos = step
        m = 1
        on_first = True
        ci = 0
        if cps[0] == 1:
            _record(1.0, 0, np.float64(w), mean, m2)
            ci = 1
        for n in range(2, n_steps + 1):
            r = nb_raw(key, np.uint64(n)) >> np.uint64(11)
            if r < thr[m]:
                step = -step
                m += 1
            else:
                if on_first:
                    tau[w] = m
                    on_first = False
                m = 1
            pos += step
            if ci < ncp and n == cps[ci]:
                _record(np.float64(pos) * np.float64(pos), ci, np.float64(w), mean, m2)
                ci += 1
        if on_first:
            tau[w] = -1


@nb.njit(cache=True, nogil=True)
def _block_general(keys, n_steps, d, cps, ptab, thr, stochastic, code, a, delta,
                   scaled, expo, reinforced, mean, m2, tau):
    """Any dimension; stochastic models draw xi from one extra uniform per step."""
    ncp = cps.shape[0]
    d2 = 2 * d
    pos = np.zeros(d, np.int64)
    for w in range(keys.shape[0]):
        key = keys[w]
        pos[:] = 0
        ctr = np.uint64(1)
        u = np.float64(nb_raw(key, ctr) >> np.uint64(11)) * _TO_UNIT
        k = min(int(u * d2), d2 - 1)
        pos[k // 2] += 1 if k % 2 == 0 else -1
        last = k
        m = 1
        on_first = True
        ci = 0
        if cps[0] == 1:
            _record(1.0, 0, np.float64(w), mean, m2)
            ci = 1
        for n in range(2, n_steps + 1):
            cont = last ^ 1
            if stochastic:
                ctr += np.uint64(1)
                u1 = np.float64(nb_raw(key, ctr) >> np.uint64(11)) * _TO_UNIT
                xi = quantile_scalar(code, a, u1)
                if scaled:
                    xi *= np.float64(m) ** expo
                if reinforced:
                    c = (1.0 + m) / (d2 + m)
                else:
                    c = 1.0 / d2
                p = max(c - delta * xi, 0.0)
                ctr += np.uint64(1)
                r = nb_raw(key, ctr) >> np.uint64(11)
                go = np.float64(r) * _TO_UNIT < p
            else:
                ctr += np.uint64(1)
                r = nb_raw(key, ctr) >> np.uint64(11)
                go = r < thr[m]
                p = 0.0
            if go:
                k = cont
                m += 1
            else:
                if not stochastic:
                    p = ptab[m]
                k = _escape_move(r, p, cont, d2)
                if on_first:
                    tau[w] = m
                    on_first = False
                m = 1
            pos[k // 2] += 1 if k % 2 == 0 else -1
            last = k
            if ci < ncp and n == cps[ci]:
                s = 0.0
                for i in range(d):
                    s += np.float64(pos[i] * pos[i])
                _record(s, ci, np.float64(w), mean, m2)
                ci += 1
        if on_first:
            tau[w] = -1


def _thresholds(model, n_steps):
    """``ceil(p_m * 2^53)`` for ``m = 0..n_steps``: ``u < p_m`` iff ``(raw >> 11) < thr[m]``."""
    m = np.arange(n_steps + 1, dtype=float)
    p = np.zeros(n_steps + 1)
    if n_steps >= 1:
        p[1:] = continue_escape(model, m[1:])[0]
    return p, np.ceil(p * _TWO53).astype(np.uint64)


def _thresholds(model, n_steps):
    """``p_m`` and ``ceil(p_m * 2^53)`` for ``m = 0..n_steps``.

    ``u < p_m`` iff ``(raw >> 11) < thr[m]`` exactly, since ``u = (raw >> 11) 2^-53``.
    """
    p = np.zeros(n_steps + 1)
    if n_steps >= 1:
        p[1:] = continue_escape(model, np.arange(1, n_steps + 1, dtype=float))[0]
    return p, np.ceil(p * _TWO53).astype(np.uint64)


def _n_threads(threads):
    if threads is None:
        env = os.environ.get("SERW_THREADS")
        if env is None:
            return os.cpu_count() or 1
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"SERW_THREADS must be an integer, got {env!r}") from None
    return check_positive_int(threads, "threads")


def _merge(a, b):
    """Chan et al. pairwise merge of (count, mean, M2) summaries."""
    na, ma, sa = a
    nb_, mb, sb = b
    n = na + nb_
    dm = mb - ma
    return n, ma + dm * (nb_ / n), sa + sb + dm * dm * (na * nb_ / n)


def _tree_merge(parts):
    while len(parts) > 1:
        nxt = [_merge(parts[i], parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def run_ensemble(cfg, threads=None, progress=None):
    """Simulate ``cfg.n_walkers`` independent walkers for ``cfg.n_steps`` steps.

    ``threads`` defaults to ``SERW_THREADS`` (or all cores); it affects speed
    only. ``progress(done_blocks, total_blocks)`` is called as blocks finish.
    """
    model = cfg.model
    n_steps, nw = cfg.n_steps, cfg.n_walkers
    cps = np.asarray(cfg.checkpoints, dtype=np.int64)
    keys = walker_keys(cfg.master_seed, nw)
    ptab, thr = _thresholds(model, n_steps) if not model.is_stochastic else (np.zeros(1), np.zeros(1, np.uint64))
    fast = model.dimension == 1 and not model.is_stochastic
    code = model.tail.code if model.tail is not None else 0
    a = model.tail.param if model.tail is not None else 1.0
    scaled = model.perturbation == "independent"
    expo = model.scale_rule.exponent if scaled else 1.0

    starts = list(range(0, nw, BLOCK))
    tau = np.empty(nw, np.int64)
    done = [0]

    def one(start):
        ks = keys[start:start + BLOCK]
        mean = np.zeros(cps.size)
        m2 = np.zeros(cps.size)
        t = tau[start:start + BLOCK]
        if fast:
            _block_d1_det(ks, n_steps, cps, thr, mean, m2, t)
        else:
            _block_general(ks, n_steps, model.dimension, cps, ptab, thr, model.is_stochastic,
                           code, a, model.delta, scaled, expo, model.reinforced, mean, m2, t)
        if progress is not None:
            done[0] += 1
            progress(done[0], len(starts))
        return float(ks.size), mean, m2

    n = min(_n_threads(threads), len(starts))
    if n > 1:
        with ThreadPoolExecutor(n) as ex:
            parts = list(ex.map(one, starts))
    else:
        parts = [one(s) for s in starts]
    count, mean, m2 = _tree_merge(parts)
    if count > 1:
        se = np.sqrt(m2 / (count - 1) / count)
    else:
        se = np.zeros_like(mean)
    curve = MsdCurve(cps, mean, se, nw)
    overflow = int(np.count_nonzero(tau < 0))
    counts = np.bincount(tau[tau > 0], minlength=n_steps + 1)
    return EnsembleResult(cfg, curve, counts, overflow)


@dataclass(frozen=True)
class NuEstimate:
    value: float
    se: float
    intercept: float
    n_points: int

    @property
    def ci95(self):
        return self.value - 1.96 * self.se, self.value + 1.96 * self.se

    def to_dict(self):
        return {"nu": self.value, "se": self.se, "intercept": self.intercept, "n_points": self.n_points}


def nu_estimate(curve, window=0.5):
    """Weighted least-squares slope of ``E|S_n|^2`` against ``n``.

    Uses the last ``ceil(window * len)`` checkpoints, weights ``1/SE^2`` and a
    free intercept. Checkpoint errors share walkers and are correlated, so the
    returned standard error is indicative only.
    """
    window = check_real(window, "window", low=0.0, high=1.0, low_open=True)
    k = math.ceil(window * len(curve.checkpoints))
    if k < 3:
        raise ConfigError(f"need >= 3 checkpoints in the trailing window, got {k}")
    x = np.asarray(curve.checkpoints[-k:], dtype=float)
    y = np.asarray(curve.mean[-k:], dtype=float)
    se = np.asarray(curve.se[-k:], dtype=float)
    positive = se[se > 0]
    floor = positive.min() * 1e-3 if positive.size else 1.0
    wts = 1.0 / np.maximum(se, floor) ** 2
    A = np.c_[np.ones_like(x), x]
    Aw = A * wts[:, None]
    cov = np.linalg.inv(A.T @ Aw)
    coef = cov @ (Aw.T @ y)
    return NuEstimate(float(coef[1]), float(math.sqrt(cov[1, 1])), float(coef[0]), k)


SUBDIFFUSIVE_LIMIT = (1.0 - math.log(2.0)) / (2.0 * math.log(2.0) - 1.0)


def subdiffusion_probe(cfg, threads=None, result=None):
    """``(n, (log n / n) E|S_n|^2, se)`` at each checkpoint ``n >= 2``.

    Only meaningful for the unperturbed reinforced walk in d = 1, where the
    rescaled value tends (slowly) to :data:`SUBDIFFUSIVE_LIMIT`.
    """
    m = cfg.model
    if m.dimension != 1 or m.perturbation != "none" or not m.reinforced:
        raise ConfigError("the subdiffusion probe needs the unperturbed reinforced walk in d = 1")
    if result is None:
        result = run_ensemble(cfg, threads)
    out = []
    for n, mean, se, _ in result.msd.rows():
        if n >= 2:
            f = math.log(n) / n
            out.append((n, f * mean, f * se))
    return out
