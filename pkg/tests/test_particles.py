import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from roughmkv import particles
from roughmkv.averaging import constant, gaussian_bump, mollify, zero
from roughmkv.driver import FbmSpec, SamplePath, TimeGrid, sample_fbm
from roughmkv.errors import BlowUpError
from roughmkv.particles import (
    SolverSetup,
    StepSizeWarning,
    brownian_increments,
    epsilon_sweep,
    hypothesis_gate,
    law_flow,
    load_ensemble,
    particle_rng,
    save_ensemble,
    simulate,
)
from roughmkv.transport import mean_functional, tanh_functional, wasserstein1

pytestmark = pytest.mark.filterwarnings("ignore::roughmkv.particles.StepSizeWarning")


def _bm_driver(m=128, seed=3):
    return sample_fbm(FbmSpec(0.5, 1, TimeGrid(1.0, m), seed))


def _smooth_driver(m):
    grid = TimeGrid(1.0, m)
    return SamplePath(grid, 0.5 * np.sin(3 * grid.nodes))


# -- hypothesis gate ------------------------------------------------------------


def test_gate_passing_example():
    gate = hypothesis_gate(0.2, 0.5, 0.8, 1)
    assert gate.ok and gate.tag == "inside-hypothesis"
    assert gate.slacks == (Fraction(3, 10), Fraction(1, 5), Fraction(1, 10))


def test_gate_failing_example_slack():
    gate = hypothesis_gate(0.3, 0.5, 0.8, 1)
    assert not gate.passed[0] and gate.tag == "outside-hypothesis"
    assert gate.slacks[0] == Fraction(-1, 20)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_gate_boundary_is_exact(k):
    boundary = Fraction(1) / (2 + Fraction(3 * k, 2))
    at = hypothesis_gate(boundary, 10, 10, k)
    assert at.slacks[0] == 0 and not at.passed[0]
    below = hypothesis_gate(boundary - Fraction(1, 10**6), 10, 10, k)
    assert below.passed[0]


def test_gate_decimal_boundary():
    # k=2: 5 zeta0 = 1 at zeta0 = 0.2 exactly, which binary floats would miss
    assert hypothesis_gate(0.2, 1, 1, 2).slacks[0] == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 10), st.floats(1e-6, 10), st.integers(1, 8))
def test_gate_vanishing_index_passes(g0, g1, k):
    assert hypothesis_gate(0.0, g0, g1, k).ok


def test_gate_domain():
    with pytest.raises(ValueError):
        hypothesis_gate(0.1, 0.5, 0.5, 0)
    with pytest.raises(ValueError):
        hypothesis_gate(-0.1, 0.5, 0.5, 1)
    assert hypothesis_gate(0.1, 0.5, 0.5, 1).summary()["conditions"][2]["slack_exact"] == "1/10"


# -- Brownian streams -------------------------------------------------------------


def test_increment_statistics():
    grid = TimeGrid(1.0, 256)
    inc = brownian_increments(grid, 400, 1, seed=5)
    n = inc.size
    assert abs(inc.mean()) <= 4 * math.sqrt(grid.dt / n)
    assert abs(inc.var() / grid.dt - 1) <= 4 * math.sqrt(2 / n)


def test_streams_depend_only_on_seed_and_index():
    grid = TimeGrid(1.0, 32)
    a = brownian_increments(grid, 10, 2, seed=9)
    b = brownian_increments(grid, 4, 2, seed=9, first=6)
    assert np.array_equal(a[:, 6:], b)
    assert np.array_equal(a, brownian_increments(grid, 10, 2, seed=9, threads=3))
    assert not np.array_equal(particle_rng(9, 0).random(3), particle_rng(10, 0).random(3))


# -- degenerate limits --------------------------------------------------------------


def _rk4_oracle(b_eps, driver, x0=0.0, steps=2**14):
    """The reduced ODE x' = b_eps(t, x - w(t)) with w = 0.5 sin(3t)."""
    def rhs(t, x):
        return [float(b_eps(t, x[0] - 0.5 * math.sin(3 * t)))]

    sol = solve_ivp(rhs, (0.0, driver.grid.horizon), [x0], method="RK45", rtol=1e-11, atol=1e-12)
    return sol.y[0, -1]


def test_zero_diffusion_matches_ode_oracle():
    drift = gaussian_bump(1.5, 0.7, offset=0.3)
    eps = 0.2
    errors = []
    for m in (128, 256, 512):
        driver = _smooth_driver(m)
        ens = simulate(drift, zero(role="diffusion"), mean_functional(), driver, eps, 5, seed=1)
        assert np.ptp(ens.paths, axis=1).max() == 0.0
        errors.append(abs(ens.paths[-1, 0, 0] - _rk4_oracle(mollify(drift, eps), driver)))
    assert errors[0] <= 2.0 / 128
    assert 1.6 <= errors[0] / errors[1] <= 2.4 and 1.6 <= errors[1] / errors[2] <= 2.4


def test_pure_diffusion_variance():
    sigma, n = 0.7, 2000
    ens = simulate(zero(), constant(sigma, role="diffusion"), mean_functional(), _bm_driver(64), 0.2, n, seed=4)
    xt = ens.paths[-1, :, 0]
    var = xt.var(ddof=1)
    se = var * math.sqrt(2 / (n - 1))
    assert abs(var - sigma**2) <= 3 * se
    assert np.allclose(ens.paths[:, :, 0], sigma * ens.brownian_paths()[:, :, 0], atol=1e-12)


def test_two_particles_one_step_by_hand():
    driver = _bm_driver(1, seed=2)
    drift, diff = gaussian_bump(1.0, 0.5), gaussian_bump(0.8, 0.9, role="diffusion", offset=0.1)
    eps, x0 = 0.3, 0.25
    ens = simulate(drift, diff, tanh_functional(), driver, eps, 2, seed=11, x0=x0)
    z0 = math.tanh(x0) - driver.values[0, 0]
    b, a = float(mollify(drift, eps)(0.0, z0)), float(mollify(diff, eps)(0.0, z0))
    for i in range(2):
        db = particle_rng(11, i).standard_normal((1, 1))[0, 0] * math.sqrt(driver.grid.dt)
        assert ens.paths[1, i, 0] == x0 + b * driver.grid.dt + db * a


# -- structure ----------------------------------------------------------------------------


def test_coefficients_are_law_only():
    ens = simulate(gaussian_bump(1.0, 0.5), gaussian_bump(1.0, 0.6, role="diffusion", offset=0.2),
                   tanh_functional(), _bm_driver(64), 0.2, 30, seed=6)
    a = ens.diffusion_values[:, 0, 0]
    dbeta = ens.increments[:, :, 0]
    expected = np.concatenate([np.zeros((1, 30)), np.cumsum(a[:, None] * (dbeta - dbeta[:, :1]), axis=0)])
    assert np.allclose(ens.paths[:, :, 0] - ens.paths[:, :1, 0], expected, atol=1e-12)


def test_exchangeability(monkeypatch):
    args = (gaussian_bump(1.0, 0.5), gaussian_bump(1.0, 0.6, role="diffusion", offset=0.2),
            tanh_functional(), _bm_driver(64), 0.2, 25)
    base = simulate(*args, seed=8)
    perm = np.random.default_rng(0).permutation(25)
    original = particles.brownian_increments
    monkeypatch.setattr(particles, "brownian_increments",
                        lambda *a, **k: original(*a, **k)[:, perm])
    permuted = simulate(*args, seed=8)
    assert np.allclose(permuted.paths, base.paths[:, perm], atol=1e-12)
    for t in (0, 31, 64):
        assert wasserstein1(permuted.law(t), base.law(t)) <= 1e-12


def test_deterministic_flow_is_point_masses():
    ens = simulate(gaussian_bump(1.0, 0.5), zero(role="diffusion"), mean_functional(), _bm_driver(32), 0.2, 6,
                   x0=0.4)
    flow = law_flow(ens)
    assert len(flow) == 33
    assert np.all(flow[0].samples == 0.4)
    assert all(np.ptp(mu.samples) == 0 for mu in flow)
    assert np.shares_memory(flow[5].samples, ens.paths)


def test_sampled_initial_cloud():
    cloud = np.linspace(-1, 1, 8)[:, None]
    ens = simulate(zero(), constant(0.5, role="diffusion"), mean_functional(), _bm_driver(16), 0.5, 8,
                   initial=cloud)
    assert np.array_equal(law_flow(ens)[0].samples, cloud)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 64), st.integers(0, 64))
def test_law_flow_coupling_bound(seed, s, t):
    ens = simulate(gaussian_bump(1.0, 0.5), constant(0.8, role="diffusion"), mean_functional(),
                   _bm_driver(64), 0.2, 20, seed=seed)
    bound = np.mean(np.abs(ens.paths[t, :, 0] - ens.paths[s, :, 0]))
    assert wasserstein1(ens.law(s), ens.law(t)) <= bound + 1e-12


def test_step_warning_and_validation():
    driver = _bm_driver(16)
    with pytest.warns(StepSizeWarning):
        ens = simulate(zero(), constant(1.0, role="diffusion"), mean_functional(), driver, 0.1, 4)
    assert ens.config["step_warning"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not simulate(zero(), constant(1.0, role="diffusion"), mean_functional(), driver, 1.0, 4
                            ).config["step_warning"]
    with pytest.raises(ValueError):
        simulate(zero(), zero(), mean_functional(), driver, 0.0, 4)
    with pytest.raises(ValueError):
        simulate(zero(), zero(), mean_functional(), driver, 0.5, 1)


def test_blow_up_names_the_step():
    driver = SamplePath(TimeGrid(4.0, 4), np.zeros(5))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(BlowUpError) as info:
            simulate(constant(1e308), zero(role="diffusion"), tanh_functional(), driver, 0.5, 2)
    assert info.value.step == 2


# -- determinism and persistence ----------------------------------------------------------


def _setup(n=40, seed=12):
    return SolverSetup(gaussian_bump(1.0, 0.5), gaussian_bump(0.9, 0.7, role="diffusion", offset=0.2),
                       tanh_functional(), _bm_driver(64), n, seed)


def test_seed_and_thread_determinism():
    a, b = _setup().run(0.2), _setup().run(0.2, threads=4)
    assert np.array_equal(a.paths, b.paths) and np.array_equal(a.fvalues, b.fvalues)
    assert not np.array_equal(a.paths, _setup(seed=13).run(0.2).paths)


def test_save_load_bit_exact(tmp_path):
    ens = _setup().run(0.2)
    names = save_ensemble(ens, tmp_path / "ens")
    assert {"config.json", "paths.npy", "fvalues.csv", "driver.csv"} <= set(names)
    back = load_ensemble(tmp_path / "ens")
    for attr in ("paths", "increments", "fvalues", "drift_values", "diffusion_values"):
        assert np.array_equal(getattr(back, attr), getattr(ens, attr))
    assert np.array_equal(back.driver.values, ens.driver.values) and back.config == ens.config


# -- epsilon sweep ------------------------------------------------------------------------


def test_empty_sweep():
    res = epsilon_sweep(_setup(), [])
    assert res.ensembles == [] and res.c_values == [] and not res.non_uniform


def test_sweep_requires_descending():
    with pytest.raises(ValueError):
        epsilon_sweep(_setup(), [0.1, 0.2])


def test_smooth_sweep_converges():
    setup = SolverSetup(gaussian_bump(1.0, 0.8), gaussian_bump(0.8, 0.9, role="diffusion", offset=0.3),
                        mean_functional(), _bm_driver(256, seed=5), 400, 3)
    res = epsilon_sweep(setup, [0.4, 0.2, 0.1, 0.05])
    assert all(b < a for a, b in zip(res.terminal_w1, res.terminal_w1[1:]))
    assert not res.non_uniform
    assert all(np.array_equal(e.increments, res.ensembles[0].increments) for e in res.ensembles)
