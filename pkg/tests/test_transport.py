import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtransport.diagnostics import Monitor, records_to_csv
from vtransport.ensemble import Ensemble, Gaussian, NumericalError, sample_init
from vtransport.functionals import FunctionalSpec, constant, quadratic
from vtransport.kernel import Kernel, mmd2_vstat
from vtransport.space import Space
from vtransport.transport import (
    TransportConfig,
    TransportMapHistory,
    apply_history,
    replay,
    run_direct,
    run_map_composition,
)
from vtransport.witness import Potential, lifted_witness

R1, R2, T1 = Space.euclidean(1), Space.euclidean(2), Space.torus(1)
INIT2 = Gaussian([3.0, 3.0], [1.0, 1.0])


def lifted(g):
    return FunctionalSpec("linear_lifted", "closed_form", g=g)


def mmd_spec(n=64, seed=0):
    Y = sample_init(R2, Gaussian([0.0, 0.0], [1.0, 1.0]), n, seed, 1)
    return FunctionalSpec("mmd", "closed_form", target_samples=Y)


# ------------------------------------------------------------------ config
@pytest.mark.parametrize(
    "kw,key",
    [({"alpha": -1.0}, "alpha"), ({"iters": -2}, "iters"), ({"n_particles": 0}, "n_particles"),
     ({"lam": 0.0}, "lambda"), ({"mode": "sideways"}, "mode"), ({"grad_norm_tol": -1.0}, "grad_norm_tol")],
)
def test_config_validation(kw, key):
    with pytest.raises(ValueError, match=f"transport.{key}"):
        TransportConfig(**kw)


# -------------------------------------------------------------- direct runs
def test_zero_witness_leaves_ensemble(gen):
    e = Ensemble(gen.normal(size=(20, 2)), R2)
    res = run_direct(TransportConfig(iters=1), lifted(constant(2.0)), None, e)
    np.testing.assert_array_equal(res.ensemble.positions, e.positions)
    assert len(res.records) == 2


def test_quadratic_contraction(gen):
    e = Ensemble(gen.normal(size=(30, 2)), R2)
    res = run_direct(TransportConfig(alpha=0.1, iters=10), lifted(quadratic()), None, e)
    np.testing.assert_allclose(res.ensemble.positions, e.positions * 0.9**10, rtol=1e-13)
    assert 0.9**10 == pytest.approx(0.3487, abs=1e-4)
    assert [r.alpha_used for r in res.records[:-1]] == [0.1] * 10
    assert res.records[-1].alpha_used is None


def test_records_schema(gen):
    res = run_direct(TransportConfig(iters=3, n_particles=16), mmd_spec(16), Kernel(1.0, R2), INIT2, space=R2)
    assert [r.iter for r in res.records] == [0, 1, 2, 3]
    for r in res.records:
        assert r.grad_norm2 >= 0
        assert r.alpha_used is None or r.alpha_used <= 0.1
        assert r.witness_norm >= 0 and r.objective >= 0


def test_mmd_descent_small():
    cfg = TransportConfig(alpha=1.0, iters=60, n_particles=64)
    res = run_direct(cfg, mmd_spec(64), Kernel(1.0, R2), INIT2, space=R2)
    obj = [r.objective for r in res.records]
    dec = np.mean(np.diff(obj[:51]) < 0)
    assert dec >= 0.95
    assert obj[-1] < obj[0]


def test_safeguard_clamps_and_off_does_not():
    e = sample_init(R2, INIT2, 32, 0)
    spec, k = mmd_spec(32), Kernel(0.5, R2)
    on = run_direct(TransportConfig(alpha=10.0, iters=5), spec, k, e)
    off = run_direct(TransportConfig(alpha=10.0, iters=5, safeguard=False), spec, k, e)
    for r in on.records[:-1]:
        assert r.alpha_used * r.hessian_bound <= 0.5 * (1 + 1e-12)
        assert r.alpha_used < 10.0
    assert all(r.alpha_used == 10.0 for r in off.records[:-1])


@settings(max_examples=8)
@given(alpha=st.floats(0.01, 50.0), h=st.floats(0.3, 2.0), seed=st.integers(0, 1000))
def test_safeguard_soundness(alpha, h, seed):
    cfg = TransportConfig(alpha=alpha, iters=4, n_particles=16, seed=seed)
    res = run_direct(cfg, mmd_spec(16, seed), Kernel(h, R2), INIT2, space=R2)
    for r in res.records[:-1]:
        assert r.alpha_used <= alpha
        assert r.alpha_used * r.hessian_bound <= 0.5 * (1 + 1e-12)


def test_empirical_safeguard_for_score_backend():
    spec = FunctionalSpec("kl", "kde_score", target=Gaussian([0.0], [1.0]))
    res = run_direct(TransportConfig(alpha=5.0, iters=4, n_particles=50), spec, None, Gaussian([2.0], [1.0]), space=R1)
    for r in res.records[:-1]:
        assert r.hessian_bound > 0
        assert r.alpha_used * r.hessian_bound <= 0.5 * (1 + 1e-12)


def test_repro_determinism():
    cfg = TransportConfig(iters=5, n_particles=24, repro=True, seed=3)
    mon = lambda: Monitor(sample_init(R2, Gaussian([0.0, 0.0], [1.0, 1.0]), 24, 3, 1).positions, Kernel(1.0, R2))  # noqa: E731
    a = run_direct(cfg, mmd_spec(24, 3), Kernel(1.0, R2), INIT2, mon(), space=R2)
    b = run_direct(cfg, mmd_spec(24, 3), Kernel(1.0, R2), INIT2, mon(), space=R2)
    assert records_to_csv(a.records) == records_to_csv(b.records)
    assert all(r.wall_ms is None for r in a.records)
    np.testing.assert_array_equal(a.ensemble.positions, b.ensemble.positions)


def test_early_stop(gen):
    e = Ensemble(gen.normal(size=(10, 1)) * 1e-3, R1)
    res = run_direct(TransportConfig(iters=50, grad_norm_tol=1e-4), lifted(quadratic()), None, e)
    assert len(res.records) < 51
    assert res.records[-1].alpha_used is None
    assert res.records[-1].grad_norm2 < 1e-4


def test_snapshots(gen):
    e = Ensemble(gen.normal(size=(5, 1)), R1)
    res = run_direct(TransportConfig(iters=5, snapshot_every=2), lifted(quadratic()), None, e)
    assert [i for i, _ in res.snapshots] == [0, 2, 4, 5]
    np.testing.assert_array_equal(res.snapshots[-1][1].positions, res.ensemble.positions)


def test_nonfinite_aborts_with_iteration():
    def grad(x):
        x = np.atleast_2d(x)
        return np.where(np.abs(x) > 1.5, np.inf, -x)

    g = Potential(lambda x: np.zeros(len(np.atleast_2d(x))), grad, name="blowup")
    spec = lifted(g)
    e = Ensemble([[1.0]], R1)
    with pytest.raises(NumericalError, match="iteration"):
        run_direct(TransportConfig(alpha=0.3, iters=10, safeguard=False), spec, None, e)


def test_backend_failure_names_iteration():
    calls = []

    def grad(x):
        calls.append(1)
        if len(calls) > 3:
            raise NumericalError("solver blew up")
        return np.atleast_2d(x)

    spec = lifted(Potential(lambda x: np.zeros(len(np.atleast_2d(x))), grad, name="flaky"))
    with pytest.raises(NumericalError, match=r"iteration \d+: solver blew up"):
        run_direct(TransportConfig(iters=5, safeguard=False), spec, None, Ensemble([[1.0]], R1))


def test_torus_run_stays_wrapped():
    Y = sample_init(T1, {"name": "uniform_torus"}, 32, 0, 1)
    spec = FunctionalSpec("mmd", "closed_form", target_samples=Y)
    res = run_direct(TransportConfig(alpha=0.5, iters=10, n_particles=32), spec, Kernel(0.1, T1), {"name": "wrapped_gaussian", "mean": [0.2], "std": [0.05]}, space=T1)
    x = res.ensemble.positions
    assert np.all((x >= 0) & (x < 1))


# ---------------------------------------------------------- map composition
def test_map_k0_identity():
    cfg = TransportConfig(iters=0, n_particles=8)
    hist, ens, recs = run_map_composition(cfg, lifted(quadratic()), None, Gaussian([0.0], [1.0]), space=R1)
    assert len(hist) == 1 and len(ens) == 1 and len(recs) == 1
    base = sample_init(R1, Gaussian([0.0], [1.0]), 8, 0)
    np.testing.assert_array_equal(replay(cfg, hist, Gaussian([0.0], [1.0]), R1).positions, base.positions)


def test_map_quadratic_closed_form():
    cfg = TransportConfig(alpha=0.1, iters=7, n_particles=20, safeguard=False)
    law = Gaussian([1.0, -1.0], [2.0, 2.0])
    hist, _, _ = run_map_composition(cfg, lifted(quadratic()), None, law, space=R2)
    assert len(hist) == 8
    x = np.random.default_rng(0).normal(size=(50, 2))
    np.testing.assert_allclose(apply_history(hist, x), x * 0.9**7, rtol=0, atol=1e-12)


def test_map_and_direct_agree_for_lifted():
    cfg = TransportConfig(alpha=0.1, iters=12, n_particles=40, seed=5)
    law = Gaussian([1.0, -1.0], [2.0, 2.0])
    direct = run_direct(cfg, lifted(quadratic()), None, law, space=R2).ensemble
    hist, _, _ = run_map_composition(cfg, lifted(quadratic()), None, law, space=R2)
    np.testing.assert_allclose(replay(cfg, hist, law, R2).positions, direct.positions, rtol=0, atol=1e-12)


def test_map_vs_direct_mmd_calibrated():
    n = 64
    cfg = TransportConfig(alpha=1.0, iters=30, n_particles=n, seed=2)
    spec, k = mmd_spec(n, 2), Kernel(1.0, R2)
    direct = run_direct(cfg, spec, k, INIT2, space=R2).ensemble
    hist, _, _ = run_map_composition(cfg, spec, k, INIT2, space=R2)
    mapped = replay(cfg, hist, INIT2, R2)
    a = apply_history(hist, sample_init(R2, INIT2, n, 2, 7001).positions)
    b = apply_history(hist, sample_init(R2, INIT2, n, 2, 7002).positions)
    assert mmd2_vstat(k, direct.positions, mapped.positions) < 4 * mmd2_vstat(k, a, b)


def test_map_replay_deterministic():
    cfg = TransportConfig(alpha=1.0, iters=5, n_particles=16)
    hist, ens, _ = run_map_composition(cfg, mmd_spec(16), Kernel(1.0, R2), INIT2, space=R2)
    pts = np.random.default_rng(1).normal(size=(10, 2))
    np.testing.assert_array_equal(apply_history(hist, pts), apply_history(hist, pts))
    # iterate j refits on fresh draws, so the stored ensembles differ from one another
    assert not np.array_equal(ens[1].positions, ens[2].positions)


def test_map_rejects_ensemble_init():
    with pytest.raises(ValueError):
        run_map_composition(TransportConfig(iters=1), lifted(quadratic()), None, Ensemble([[0.0]], R1), space=R1)


# ------------------------------------------------------------- histories
def _linear_history(space, alphas):
    h = TransportMapHistory(space)
    for a in alphas:
        h.append(lifted_witness(quadratic()), a)
    return h


def test_apply_history_examples(gen):
    x = gen.normal(size=(6, 1))
    np.testing.assert_array_equal(apply_history(TransportMapHistory(R1), x), x)
    np.testing.assert_array_equal(apply_history(_linear_history(R1, [0.1]), x), x - 0.1 * x)


@settings(max_examples=30)
@given(a=st.lists(st.floats(0.0, 0.9), max_size=4), b=st.lists(st.floats(0.0, 0.9), max_size=4), seed=st.integers(0, 99))
def test_history_associativity(a, b, seed):
    x = np.random.default_rng(seed).normal(size=(5, 2))
    h1, h2 = _linear_history(R2, a), _linear_history(R2, b)
    assert np.array_equal(apply_history(h2, apply_history(h1, x)), apply_history(h1 + h2, x))


def test_history_space_mismatch():
    with pytest.raises(ValueError):
        _linear_history(R1, [0.1]) + _linear_history(R2, [0.1])


def test_history_nonfinite():
    h = TransportMapHistory(R1)
    h.append(lifted_witness(Potential(lambda x: x, lambda x: np.full_like(np.atleast_2d(x), np.nan))), 0.1)
    with pytest.raises(NumericalError):
        apply_history(h, [[0.0]])
