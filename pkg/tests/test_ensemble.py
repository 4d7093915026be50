import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vtransport.ensemble import (
    Ensemble,
    Gaussian,
    NumericalError,
    WrappedGaussian,
    empirical_mean,
    make_sampler,
    push,
    read_snapshots,
    rng,
    sample_init,
    write_snapshots,
)
from vtransport.space import Space

R1, R2, T1 = Space.euclidean(1), Space.euclidean(2), Space.torus(1)


def test_degenerate_gaussian():
    e = sample_init(R2, {"name": "gaussian", "mean": [2.0, 2.0], "std": 0.0}, 1, seed=3)
    assert e.positions.tolist() == [[2.0, 2.0]]


def test_uniform_torus_mean():
    e = sample_init(T1, {"name": "uniform_torus"}, 100_000, seed=0)
    assert abs(e.positions.mean() - 0.5) < 0.01
    assert np.all((e.positions >= 0) & (e.positions < 1))


def test_gaussian_mean_rate():
    e = sample_init(R2, Gaussian([1.0, -2.0], [0.5, 0.5]), 40_000, seed=1)
    assert np.abs(e.positions.mean(0) - [1.0, -2.0]).max() < 3 * 0.5 / np.sqrt(40_000) * 1.5


def test_seed_determinism():
    a = sample_init(R2, {"name": "gaussian"}, 50, seed=7)
    b = sample_init(R2, {"name": "gaussian"}, 50, seed=7)
    c = sample_init(R2, {"name": "gaussian"}, 50, seed=8)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_streams_are_independent():
    assert rng(0, 0).random() != rng(0, 1).random()


@pytest.mark.parametrize(
    "spec,space",
    [({"name": "nope"}, R1), ({"name": "gaussian", "std": -1.0}, R1), ({"name": "uniform_torus"}, R1),
     ({"name": "gaussian", "mean": [0.0, 0.0]}, R1)],
)
def test_sampler_errors(spec, space):
    with pytest.raises(ValueError):
        make_sampler(space, spec)


def test_wrapped_gaussian_score_matches_fd():
    law = WrappedGaussian([0.3], 0.15, 1.0)
    x = np.array([[0.1], [0.55], [0.95]])
    s = law.score(x)
    step = 1e-6
    fd = (law.log_density(x + step) - law.log_density(x - step)) / (2 * step)
    np.testing.assert_allclose(s[:, 0], fd, atol=1e-6)


def test_push_examples():
    e = Ensemble(np.array([[0.3], [-1.2]]), R1)
    assert np.array_equal(push(e, lambda x: np.zeros_like(x), 0.5).positions, e.positions)
    assert push(Ensemble([[2.0]], R1), lambda x: x, 0.1).positions[0, 0] == pytest.approx(1.8, abs=1e-15)
    t = push(Ensemble([[0.05]], T1), lambda x: np.full_like(x, 0.2), 0.5)
    assert t.positions[0, 0] == pytest.approx(0.95, abs=1e-15)


def test_push_is_pure_and_reports_bad_particle():
    e = Ensemble(np.array([[0.0], [1.0], [2.0]]), R1)
    before = e.positions.copy()
    push(e, lambda x: x, 0.1)
    assert np.array_equal(e.positions, before)

    def bad(x):
        g = np.zeros_like(x)
        g[2] = np.nan
        return g

    with pytest.raises(NumericalError, match="index 2"):
        push(e, bad, 0.1)
    with pytest.raises(ValueError):
        push(e, lambda x: x, -0.1)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_push_composition(xs, a, b):
    e = Ensemble(np.array(xs)[:, None], R1)
    f = lambda x: np.sin(x)
    g = lambda x: x**2
    two = push(push(e, f, a), g, b).positions
    x = e.positions
    y = x + (-a * f(x))
    composed = y + (-b * g(y))
    assert np.array_equal(two, composed)


def test_empirical_mean_examples():
    e = Ensemble(np.array([[1.0], [3.0]]), R1)
    assert empirical_mean(e, lambda x: np.full(len(x), 4.5)) == 4.5
    assert empirical_mean(e, lambda x: x[:, 0]) == 2.0
    with pytest.raises(NumericalError):
        empirical_mean(e, lambda x: np.array([1.0, np.inf]))


def test_empirical_mean_of_bin_indicator_matches_histogram(gen):
    e = Ensemble(gen.normal(size=(500, 1)), R1)
    edges = np.linspace(-3, 3, 13)
    counts, _ = np.histogram(e.positions[:, 0], edges)
    for b in range(12):
        lo, hi = edges[b], edges[b + 1]
        ind = lambda x: ((x[:, 0] >= lo) & ((x[:, 0] < hi) if b < 11 else (x[:, 0] <= hi))).astype(float)
        assert empirical_mean(e, ind) * 500 == counts[b]


def test_ensemble_invariants():
    with pytest.raises(ValueError):
        Ensemble(np.zeros((0, 1)), R1)
    with pytest.raises(NumericalError):
        Ensemble(np.array([[np.nan]]), R1)
    e = Ensemble(np.array([[1.25], [-0.5]]), T1)
    assert e.positions.tolist() == [[0.25], [0.5]]
    with pytest.raises(ValueError):
        e.positions[0, 0] = 0.0


def test_snapshot_round_trip(tmp_path):
    e = sample_init(Space.torus(2), {"name": "uniform_torus"}, 5, seed=2)
    p = tmp_path / "s.jsonl"
    write_snapshots(p, [(0, e), (4, e)])
    rec = json.loads(p.read_text().splitlines()[0])
    assert set(rec) == {"iter", "n", "d", "space", "positions"}
    back = read_snapshots(p)
    assert [it for it, _ in back] == [0, 4]
    assert np.array_equal(back[1][1].positions, e.positions)
