import math

import numpy as np
import pytest

from serw._validation import ConfigError
from serw.montecarlo import (
    SUBDIFFUSIVE_LIMIT,
    EnsembleConfig,
    MsdCurve,
    _block_d1_det,
    _block_general,
    _thresholds,
    default_checkpoints,
    log_checkpoints,
    nu_estimate,
    run_ensemble,
    subdiffusion_probe,
)
from serw.rng import CounterStream, walker_keys
from serw.tails import TailSpec
from serw.tau import TauLaw, diffusion_constant
from serw.walk import ModelSpec, ScaleRule, WalkState, step

KERNEL_MODELS = [
    ModelSpec.unperturbed(1),
    ModelSpec.deterministic(1, 0.1),
    ModelSpec.deterministic(2, 0.05),
    ModelSpec.unperturbed(3),
    ModelSpec.iid(1, 0.05, TailSpec.half_cauchy()),
    ModelSpec.iid(2, 0.1, TailSpec.log_squared()),
    ModelSpec.independent(1, 0.01, TailSpec.pareto(0.5)),
    ModelSpec.independent(2, 0.01, TailSpec.exponential(2.0), ScaleRule(0.5)),
    ModelSpec.iid(3, 0.2, TailSpec.point_mass()),
    ModelSpec.unperturbed(2, reinforced=False),
]


def _python_msd(model, seed, walker, n):
    rng = CounterStream(seed, walker)
    s = WalkState.origin(model.dimension)
    out = []
    for _ in range(n):
        s = step(s, model, rng)
        out.append(float(sum(c * c for c in s.position)))
    return np.array(out)


@pytest.mark.parametrize("model", KERNEL_MODELS, ids=lambda m: f"{m.perturbation}-d{m.dimension}")
def test_kernel_replays_python_step(model):
    n = 300
    cps = np.arange(1, n + 1, dtype=np.int64)
    keys = walker_keys(99, 4)
    ptab, thr = _thresholds(model, n)
    scaled = model.perturbation == "independent"
    for w in range(4):
        mean, m2, tau = np.zeros(n), np.zeros(n), np.zeros(1, np.int64)
        _block_general(keys[w:w + 1], n, model.dimension, cps, ptab, thr, model.is_stochastic,
                       model.tail.code if model.tail else 0, model.tail.param if model.tail else 1.0,
                       model.delta, scaled, model.scale_rule.exponent if scaled else 1.0,
                       model.reinforced, mean, m2, tau)
        ref = _python_msd(model, 99, w, n)
        np.testing.assert_array_equal(mean, ref)
        if model.dimension == 1 and not model.is_stochastic:
            fast = np.zeros(n)
            _block_d1_det(keys[w:w + 1], n, cps, thr, fast, np.zeros(n), tau)
            np.testing.assert_array_equal(fast, ref)


def test_thresholds_reproduce_float_comparison():
    p, thr = _thresholds(ModelSpec.deterministic(1, 0.01), 10**5)
    r = np.arange(0, 2**53, 2**53 // 997, dtype=np.uint64)
    for m in (1, 2, 50, 99_999):
        u = r.astype(float) * 2.0**-53
        np.testing.assert_array_equal(u < p[m], r < thr[m])
        edge = np.array([thr[m] - 1, thr[m]], dtype=np.uint64)
        np.testing.assert_array_equal(edge.astype(float) * 2.0**-53 < p[m], [True, False])


@pytest.mark.parametrize("model", [ModelSpec.deterministic(1, 0.1), ModelSpec.iid(2, 0.05, TailSpec.pareto(0.5))],
                         ids=["fast", "general"])
def test_thread_count_invariance(model):
    cfg = EnsembleConfig(model, 500, 5000, master_seed=5)
    a = run_ensemble(cfg, threads=1)
    b = run_ensemble(cfg, threads=3)
    np.testing.assert_array_equal(a.msd.mean, b.msd.mean)
    np.testing.assert_array_equal(a.msd.se, b.msd.se)
    np.testing.assert_array_equal(a.tau_counts, b.tau_counts)
    assert a.tau_overflow == b.tau_overflow


def test_walker_prefix_is_stable():
    # walker w's trajectory depends only on (seed, w): a larger ensemble extends a smaller one
    model = ModelSpec.deterministic(2, 0.1)
    a = run_ensemble(EnsembleConfig(model, 64, 10, master_seed=3), threads=1)
    b = run_ensemble(EnsembleConfig(model, 64, 1, master_seed=3), threads=1)
    ref = _python_msd(model, 3, 0, 64)
    assert b.msd.mean[-1] == ref[-1]
    assert a.msd.n_walkers == 10


def test_first_step_is_unit():
    for model in KERNEL_MODELS:
        res = run_ensemble(EnsembleConfig(model, 1, 257, master_seed=1))
        assert res.msd.mean[0] == 1.0 and res.msd.se[0] == 0.0


def test_msd_bounds():
    res = run_ensemble(EnsembleConfig(ModelSpec.iid(2, 0.1, TailSpec.half_cauchy()), 2048, 2000, master_seed=2))
    n = res.msd.checkpoints.astype(float)
    assert np.all(res.msd.mean >= 0) and np.all(res.msd.se >= 0)
    assert np.all(res.msd.mean <= n**2)


def test_tau_one_at_zero_delta():
    res = run_ensemble(EnsembleConfig(ModelSpec.unperturbed(1), 10**4, 20000, master_seed=11))
    p = 1 / 3
    se = math.sqrt(p * (1 - p) / 20000)
    assert abs(res.tau_pmf(1) - p) <= 3 * se
    # E[tau] is infinite here: some walkers must still sit on their first edge
    assert res.tau_overflow > 0
    assert res.tau_counts.sum() + res.tau_overflow == 20000


def test_tau_histogram_matches_pmf():
    model = ModelSpec.deterministic(1, 0.01)
    n = 10**6
    res = run_ensemble(EnsembleConfig(model, 60, n, checkpoints=[60], master_seed=123))
    pmf = TauLaw(model).pmf_table(50)
    emp = res.tau_counts[1:51] / n
    se = np.sqrt(pmf * (1 - pmf) / n)
    assert np.all(np.abs(emp - pmf) <= 3 * se)


MATRIX = [
    ModelSpec.deterministic(d, delta) for d in (1, 2) for delta in (0.01, 0.1)
] + [
    ModelSpec.iid(d, delta, tail)
    for d in (1, 2)
    for delta in (0.01, 0.1)
    for tail in (TailSpec.half_cauchy(), TailSpec.pareto(0.5), TailSpec.log_squared(), TailSpec.exponential())
] + [ModelSpec.independent(1, 0.01, TailSpec.pareto(0.5)), ModelSpec.unperturbed(3)]


@pytest.mark.parametrize("model", MATRIX, ids=lambda m: f"{m.perturbation}-d{m.dimension}-{m.delta}-"
                         f"{m.tail.family if m.tail else 'none'}")
def test_survival_cross_validation(model):
    nw = 20000
    res = run_ensemble(EnsembleConfig(model, 25, nw, checkpoints=[25], master_seed=2024))
    law = TauLaw(model)
    for n in range(1, 21):
        p = law.survival(n)
        se = math.sqrt(p * (1 - p) / nw)
        assert abs(res.tau_survival(n) - p) <= 3 * se + 1e-12, n


def test_nu_estimate_exact_line():
    cps = np.array([2**k for k in range(12)])
    curve = MsdCurve(cps, 0.7 * cps, np.zeros(len(cps)), 100)
    est = nu_estimate(curve)
    assert est.value == pytest.approx(0.7, rel=1e-12)
    assert est.n_points == 6


def test_nu_estimate_needs_points():
    cps = np.array([1, 2, 4, 8])
    with pytest.raises(ConfigError):
        nu_estimate(MsdCurve(cps, cps * 1.0, np.ones(4), 10), window=0.5)


def test_simple_walk_nu_is_one():
    cfg = EnsembleConfig(ModelSpec.unperturbed(1, reinforced=False), 4096, 20000, master_seed=9)
    est = nu_estimate(run_ensemble(cfg).msd)
    lo, hi = est.value - 4 * est.se, est.value + 4 * est.se
    assert lo <= 1.0 <= hi
    assert est.value == pytest.approx(1.0, abs=0.05)


def test_model_one_nu_matches_analytic():
    model = ModelSpec.deterministic(1, 0.05)
    est = nu_estimate(run_ensemble(EnsembleConfig(model, 20000, 20000, master_seed=17)).msd)
    nu = diffusion_constant(TauLaw(model)).value
    assert est.value == pytest.approx(nu, rel=0.05)


def test_subdiffusion_probe_positive():
    cfg = EnsembleConfig(ModelSpec.unperturbed(1), 10**4, 2000, checkpoints=log_checkpoints(10**4), master_seed=4)
    rows = subdiffusion_probe(cfg)
    assert all(v > 0 for _, v, _ in rows)
    assert rows[0][0] >= 2 and rows[-1][0] == 10**4
    assert 0.3 < rows[-1][1] < 1.6
    assert SUBDIFFUSIVE_LIMIT == pytest.approx(0.7944, abs=1e-4)


def test_subdiffusion_probe_rejects_perturbed():
    with pytest.raises(ConfigError):
        subdiffusion_probe(EnsembleConfig(ModelSpec.deterministic(1, 0.1), 10, 1))


def test_config_validation():
    m = ModelSpec.unperturbed(1)
    with pytest.raises(ConfigError):
        EnsembleConfig(m, 100, 10, checkpoints=[50, 200])
    with pytest.raises(ConfigError):
        EnsembleConfig(m, 100, 10, checkpoints=[50, 20])
    with pytest.raises(ConfigError):
        EnsembleConfig(m, 100, 0)
    with pytest.raises(ConfigError):
        EnsembleConfig(m, 100, 10, master_seed=-1)
    with pytest.raises(ConfigError):
        EnsembleConfig("model", 100, 10)


def test_default_checkpoints():
    assert list(default_checkpoints(100)) == [1, 2, 4, 8, 16, 32, 64, 100]
    assert list(default_checkpoints(64)) == [1, 2, 4, 8, 16, 32, 64]
    assert EnsembleConfig(ModelSpec.unperturbed(1), 8, 1).checkpoints == (1, 2, 4, 8)
    lc = log_checkpoints(10**6)
    assert lc[0] == 1 and lc[-1] == 10**6 and np.all(np.diff(lc) > 0)


def test_progress_callback(monkeypatch):
    calls = []
    run_ensemble(EnsembleConfig(ModelSpec.unperturbed(2), 10, 3000), threads=1,
                 progress=lambda d, t: calls.append((d, t)))
    assert calls == [(1, 3), (2, 3), (3, 3)]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SERW_THREADS", "nope")
    with pytest.raises(ConfigError):
        run_ensemble(EnsembleConfig(ModelSpec.unperturbed(1), 10, 10))
