import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roughmkv.errors import EvaluationError
from roughmkv.transport import (
    EmpiricalMeasure,
    MeasureFunctional,
    apply_functional,
    kantorovich_lower_bound,
    make_functional,
    mean_functional,
    read_measure_csv,
    stacked_functional,
    tanh_functional,
    wasserstein1,
    wasserstein1_1d,
    wasserstein1_nd,
    wasserstein2_1d,
    write_measure_csv,
)


def brute_force_w1(x, y):
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    n = len(x)
    return min(np.mean(np.linalg.norm(x - y[list(p)], axis=1)) for p in itertools.permutations(range(n)))


def test_two_point_cases():
    assert wasserstein1_1d([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert wasserstein1_1d(np.zeros(5), np.full(5, 3.0)) == 3.0
    assert wasserstein1_1d([0.0, 1.0], [0.0, 2.0]) == 0.5
    assert wasserstein1_1d([1.0, 0.0], [2.0, 0.0]) == 0.5


def test_diagonal_example_in_plane():
    mu = np.array([[0.0, 0.0], [1.0, 1.0]])
    nu = np.array([[1.0, 0.0], [0.0, 1.0]])
    res = wasserstein1_nd(mu, nu)
    assert res.exact and res.value == pytest.approx(1.0)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_assignment_matches_enumeration(n):
    rng = np.random.default_rng(n)
    x, y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    assert wasserstein1_nd(x, y).value == pytest.approx(brute_force_w1(x, y), rel=1e-12)


def test_translation_nd():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    c = np.array([0.3, -1.2, 2.0])
    assert wasserstein1_nd(x, x + c).value == pytest.approx(np.linalg.norm(c), rel=1e-12)


def test_unequal_counts_1d_exact():
    # {0} vs {0, 1}: half the mass moves by 1
    assert wasserstein1_1d([0.0], [0.0, 1.0]) == pytest.approx(0.5)
    assert wasserstein1_1d([0.0, 0.0, 3.0], [0.0, 3.0]) == pytest.approx(0.5)


@pytest.mark.parametrize("shift", [0.1, 1.0])
def test_entropic_path_brackets_the_exact_value(shift):
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(300, 2)), rng.normal(size=(300, 2)) + np.array([shift, 0.0])
    exact = wasserstein1_nd(x, y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        approx = wasserstein1_nd(x, y, exact_max=64)
    assert exact.exact and not approx.exact
    assert abs(approx.value - exact.value) <= approx.tolerance + 1e-12


def test_functionals():
    assert apply_functional(mean_functional(), [-1.0, 1.0]) == pytest.approx(0.0)
    assert apply_functional(tanh_functional(), np.full(4, 0.7)) == pytest.approx(math.tanh(0.7))
    out = apply_functional(stacked_functional(), [[0.5], [0.5]])
    assert out.shape == (2,) and out[1] == pytest.approx(math.tanh(0.5))
    assert make_functional("stacked").lipschitz == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        make_functional("median")
    bad = MeasureFunctional(lambda x: np.log(x), 1.0, 1)
    with pytest.raises(EvaluationError), np.errstate(all="ignore"):
        apply_functional(bad, [-1.0, 1.0])


def test_duality_examples():
    assert kantorovich_lower_bound(np.zeros(3), np.full(3, 3.0), [lambda x: -x[0]]) == pytest.approx(3.0)
    assert kantorovich_lower_bound([0.0], [1.0], []) == 0.0
    with pytest.warns(UserWarning):
        assert kantorovich_lower_bound([0.0], [1.0], [lambda x: -5 * x[0]]) == 0.0


def test_random_piecewise_linear_tests_on_two_point_example():
    mu, nu = [0.0, 1.0], [0.0, 2.0]
    rng = np.random.default_rng(5)
    phis = []
    for _ in range(20):
        knots = np.sort(rng.uniform(-1, 3, 4))
        slopes = rng.uniform(-1, 1, 5)
        values = np.concatenate([[0.0], np.cumsum(slopes[1:4] * np.diff(knots))])
        phis.append(lambda x, k=knots, v=values, s=slopes: float(
            np.interp(x[0], k, v) + s[0] * min(x[0] - k[0], 0) + s[4] * max(x[0] - k[-1], 0)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bound = kantorovich_lower_bound(mu, nu, phis)
    assert bound <= wasserstein1_1d(mu, nu) + 1e-12


def test_measure_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([np.nan]))
    mu = EmpiricalMeasure(np.random.default_rng(2).normal(size=(7, 2)))
    write_measure_csv(mu, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "x_1,x_2"
    assert np.array_equal(read_measure_csv(tmp_path / "m.csv").samples, mu.samples)


samples = st.integers(0, 10**6)


def _pair(seed, n=12, dim=1):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, dim)), rng.normal(loc=rng.normal(), scale=rng.uniform(0.2, 2), size=(n, dim))


@settings(max_examples=100, deadline=None)
@given(samples, st.sampled_from([1, 2]))
def test_metric_axioms(seed, dim):
    x, y = _pair(seed, dim=dim)
    z = np.random.default_rng(seed + 1).normal(size=x.shape)
    assert wasserstein1(x, x) == 0.0
    assert wasserstein1(x, y) == pytest.approx(wasserstein1(y, x), rel=1e-12, abs=1e-14)
    assert wasserstein1(x, z) <= wasserstein1(x, y) + wasserstein1(y, z) + 1e-12


@settings(max_examples=100, deadline=None)
@given(samples)
def test_duality_sandwich_and_w1_below_w2(seed):
    x, y = _pair(seed)
    w1 = wasserstein1_1d(x, y)
    tests = [lambda p: p[0], lambda p: -p[0], lambda p: abs(p[0]), lambda p: np.tanh(p[0]), lambda p: -abs(p[0] - 0.3)]
    assert kantorovich_lower_bound(x, y, tests) <= w1 + 1e-12
    assert w1 <= wasserstein2_1d(x, y) + 1e-12


@settings(max_examples=100, deadline=None)
@given(samples, st.sampled_from(["mean", "tanh", "stacked"]))
def test_lipschitz_transfer(seed, name):
    x, y = _pair(seed)
    F = make_functional(name)
    gap = np.linalg.norm(apply_functional(F, x) - apply_functional(F, y))
    assert gap <= F.lipschitz * wasserstein1(x, y) + 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(float, (10,), elements=st.floats(-5, 5)), arrays(float, (10,), elements=st.floats(-5, 5)))
def test_coupling_bound(x, y):
    assert wasserstein1_1d(x, y) <= np.mean(np.abs(x - y)) + 1e-12
