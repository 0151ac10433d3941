import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from roughmkv.averaging import (
    Coefficient,
    MollifierSpec,
    averaging_direct,
    averaging_via_local_time,
    coefficient_norms,
    constant,
    gaussian_bump,
    h_minus_one_distance,
    holder_modulation,
    mollify,
    power_kernel,
    ramp,
    squared,
    step,
    young_convolution_check,
    zero,
)
from roughmkv.driver import FbmSpec, SamplePath, TimeGrid, sample_fbm
from roughmkv.errors import EvaluationError
from roughmkv.localtime import SpatialGrid, local_time


def _bm(m=1024, seed=0):
    return sample_fbm(FbmSpec(0.5, 1, TimeGrid(1.0, m), seed))


def test_constant_integrand():
    path = _bm(64)
    assert averaging_direct(constant(2.5), path, 10, 40, 0.3) == pytest.approx(2.5 * 30 / 64, rel=1e-14)


def test_frozen_path():
    path = SamplePath(TimeGrid(1.0, 32), np.zeros(33))
    f = gaussian_bump(1.0, 0.5)
    assert averaging_direct(f, path, 0, 32, 0.4) == pytest.approx(math.exp(-0.16 / 0.5), rel=1e-14)


def test_identity_integrand_matches_trapezoid():
    path = _bm(2048, seed=5)
    f = Coefficient(lambda z: z[..., 0], 1)
    left = averaging_direct(f, path, 0, 2048, 0.7)
    expected = 0.7 - path.values[:-1, 0].sum() / 2048
    assert left == pytest.approx(expected, rel=1e-12)
    trap = averaging_direct(f, path, 0, 2048, 0.7, rule="trapezoid")
    assert abs(left - trap) <= 2 * np.max(np.abs(path.values)) / 2048 + 1e-12


def test_non_finite_integrand_raises():
    f = Coefficient(lambda z: np.full(z.shape[:-1], np.inf), 1)
    with pytest.raises(EvaluationError):
        averaging_direct(f, _bm(16), 0, 8, 0.0)


def test_local_time_representation():
    path = _bm(4096, seed=11)
    grid = SpatialGrid.covering(path, 0.005, 0.005)
    field = local_time(path, grid)
    f = gaussian_bump(1.0, 0.5)
    samples = f.sample(0.0, grid)
    for x in (0.0, 0.3, -0.8):
        direct = averaging_direct(f, path, 0, 4096, x)
        via = averaging_via_local_time(samples, field, 0, 4096, x)
        assert abs(via - direct) <= 0.02 * abs(direct)


def test_empty_window_is_zero():
    path = _bm(64)
    field = local_time(path, SpatialGrid.covering(path, 0.05, 0.05))
    assert averaging_via_local_time(np.ones(field.grid.shape), field, 7, 7, 0.0) == 0.0
    assert averaging_direct(constant(1.0), path, 7, 7, 0.0) == 0.0


def test_single_cell_indicator_reads_the_density():
    path = _bm(256, seed=2)
    grid = SpatialGrid(4.0, 81)
    field = local_time(path, grid, 0.0)
    f = np.zeros(grid.shape)
    f[grid.points // 2] = 1.0
    dens = field.increment(0, 256)
    for j in (30, 40, 45):
        got = averaging_via_local_time(f, field, 0, 256, grid.centers[j])
        assert got == pytest.approx(dens[j] * grid.dx, abs=1e-12)


def test_shape_mismatch():
    path = _bm(64)
    field = local_time(path, SpatialGrid.covering(path, 0.05, 0.05))
    with pytest.raises(ValueError):
        averaging_via_local_time(np.ones(3), field, 0, 10, 0.0)


def test_mollify_constant_and_step():
    c = mollify(constant(3.0), 0.2)
    assert np.allclose(c(0.0, np.array([-1.0, 0.0, 2.0])), 3.0, rtol=1e-10)
    s = mollify(step(), 0.1)
    assert s(0.0, 0.0) == pytest.approx(0.5, abs=1e-10)


def test_mollifier_mass_and_domain():
    spec = MollifierSpec(0.3)
    y = np.linspace(-0.3, 0.3, 20001)
    assert integrate.trapezoid(spec.kernel(y), y) == pytest.approx(1.0, rel=1e-8)
    assert spec.kernel(np.array([0.31])) == 0.0
    with pytest.raises(ValueError):
        MollifierSpec(0.0)
    with pytest.raises(ValueError):
        mollify(constant(1.0), -0.1)


def test_ramp_h_minus_one_convergence():
    grid = SpatialGrid(4.0, 2048)
    a = ramp()
    dist = [h_minus_one_distance(mollify(a, e), a, grid) for e in (0.2, 0.1, 0.05)]
    assert dist[0] > dist[1] > dist[2]


@pytest.mark.parametrize("coeff", [gaussian_bump(1.0, 0.5), power_kernel(0.3), ramp()])
def test_mollified_bounds_hold(coeff):
    z = np.linspace(-2, 2, 801)
    for eps in (0.2, 0.05):
        m = mollify(coeff, eps)
        vals = np.abs(m(0.0, z))
        assert vals.max() <= m.sup_bound * (1 + 1e-6)
        lip = np.max(np.abs(np.diff(m(0.0, z))) / np.diff(z))
        assert lip <= m.lipschitz_bound * (1 + 1e-6)


def test_norm_metadata_matches_samples():
    grid = SpatialGrid(6.0, 4096)
    g = gaussian_bump(1.3, 0.6)
    norms = coefficient_norms(g, grid)
    assert norms["L2"] == pytest.approx(g.l2_norm, rel=1e-6)
    assert norms["L4"] == pytest.approx(g.l4_norm, rel=1e-6)
    k = power_kernel(0.2)
    assert coefficient_norms(k, SpatialGrid(2.0, 40000))["L2"] == pytest.approx(k.l2_norm, rel=1e-2)
    assert power_kernel(0.3).l4_norm == math.inf


def test_power_kernel_finite_at_singularity():
    k = power_kernel(0.3, odd=True)
    assert np.all(np.isfinite(k(0.0, np.array([0.0, 1e-9, -1e-9]))))
    assert k(0.0, 0.5) == pytest.approx(0.5**-0.3) and k(0.0, -0.5) == pytest.approx(-(0.5**-0.3))
    with pytest.raises(ValueError):
        power_kernel(0.5)


def test_modulation_and_square():
    theta, meta = holder_modulation(0.5, 0.5)
    c = constant(2.0, modulation=(theta, meta))
    assert c(0.5, 0.0) == pytest.approx(2.0)
    assert c(1.0, 0.0) == pytest.approx(2.0 * (1 + 0.5 * math.sqrt(0.5)))
    assert squared(c)(1.0, 0.0) == pytest.approx(c(1.0, 0.0) ** 2)
    assert meta["gamma0"] == 0.5


def test_young_check_stable_and_zero():
    path = _bm(1024, seed=4)
    grid = SpatialGrid.covering(path, 0.02, 0.02)
    field = local_time(path, grid, 0.02)
    g = gaussian_bump(1.0, 0.3).sample(0.0, grid)
    rep = young_convolution_check(g, field, 0.0, 1.0)
    assert rep.worst_ratio < np.inf and rep.stability < 10
    assert np.all(rep.lags > 0)
    rep0 = young_convolution_check(np.zeros(grid.shape), field, 0.0, 1.0)
    assert np.all(rep0.lhs == 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.integers(0, 100))
def test_averaging_is_linear(a, b, x, seed):
    path = _bm(128, seed=seed)
    f, g = gaussian_bump(1.0, 0.4), zero()
    h = Coefficient(lambda z: a * f.spatial(z) + b * np.sin(z[..., 0]), 1)
    sin = Coefficient(lambda z: np.sin(z[..., 0]), 1)
    lhs = averaging_direct(h, path, 5, 100, x)
    rhs = a * averaging_direct(f, path, 5, 100, x) + b * averaging_direct(sin, path, 5, 100, x)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)))
    assert averaging_direct(g, path, 5, 100, x) == 0.0
