import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from roughmkv.driver import FbmSpec, SamplePath, TimeGrid, sample_fbm, sample_fbm_batch
from roughmkv.errors import CoverageError, EstimationError
from roughmkv.localtime import (
    LocalTimeField,
    SpatialGrid,
    load_local_time,
    local_time,
    local_time_holder_profile,
    occupation_measure,
    save_local_time,
    smooth,
    sobolev_norm,
    time_grid_of,
    write_holder_csv,
)

# E L_1(0) for Brownian motion, frozen from quad of int_0^1 (2 pi s)^{-1/2} ds
BM_LOCAL_TIME_AT_ZERO = 0.7978845608028654


def _fbm(hurst, m=512, seed=0, dim=1):
    return sample_fbm(FbmSpec(hurst, dim, TimeGrid(1.0, m), seed))


def test_oracle_value():
    value, _ = integrate.quad(lambda s: 1 / math.sqrt(2 * math.pi * s), 0, 1)
    assert value == pytest.approx(BM_LOCAL_TIME_AT_ZERO, rel=1e-10)
    assert value == pytest.approx(math.sqrt(2 / math.pi), rel=1e-10)


def test_constant_path_is_a_dirac():
    grid = SpatialGrid(1.0, 21)
    path = SamplePath(TimeGrid(1.0, 10), np.zeros(11))
    dens = occupation_measure(path, 10, grid)
    assert dens[10] == pytest.approx(1 / grid.dx)
    assert np.count_nonzero(dens) == 1


def test_linear_path_occupies_uniformly():
    m = 1000
    grid = SpatialGrid(2.0, 40)
    path = SamplePath(TimeGrid(1.0, m), np.linspace(0, 1, m + 1))
    dens = occupation_measure(path, m, grid)
    inside = (grid.centers > 0) & (grid.centers < 1)
    assert np.allclose(dens[inside], 1.0, atol=0.02)
    assert np.all(dens[(grid.centers < 0) | (grid.centers > 1.05)] == 0)


@pytest.mark.parametrize("bandwidth", [0.0, 0.02, 0.1])
def test_mass_identity(bandwidth):
    path = _fbm(0.3, seed=4)
    grid = SpatialGrid.covering(path, 0.02, bandwidth)
    field = local_time(path, grid, bandwidth)
    for t in (0, 100, 257, 512):
        assert abs(field.mass(t) - t * path.grid.dt) <= 1e-6


def test_zero_bandwidth_equals_histogram():
    path = _fbm(0.5, seed=1)
    grid = SpatialGrid.covering(path, 0.03)
    field = local_time(path, grid, 0.0)
    for t in (1, 200, 512):
        assert np.array_equal(field.density(t), occupation_measure(path, t, grid))


def test_coverage_error_names_node():
    path = SamplePath(TimeGrid(1.0, 4), np.array([0.0, 0.5, 3.0, 0.2, 0.0]))
    with pytest.raises(CoverageError) as info:
        occupation_measure(path, 4, SpatialGrid(1.0, 10))
    assert info.value.node == 2


def test_bm_local_time_at_zero():
    spec = FbmSpec(0.5, 1, TimeGrid(1.0, 2048), seed=77)
    grid = SpatialGrid(6.0, 241)  # odd point count puts a cell centre at 0
    paths = sample_fbm_batch(spec, 1000)
    centre = grid.points // 2
    values = []
    for p in paths:
        values.append(occupation_measure(SamplePath(spec.grid, p), spec.grid.steps, grid)[centre])
    assert abs(np.mean(values) / BM_LOCAL_TIME_AT_ZERO - 1) < 0.05


def test_sobolev_l2_is_parseval():
    grid = SpatialGrid(5.0, 128)
    g = np.exp(-grid.centers**2)
    assert sobolev_norm(g, 0, grid) == pytest.approx(math.sqrt(np.sum(g**2) * grid.dx), rel=1e-12)


def test_gaussian_h1_norm():
    # |g|_{H^1}^2 = int (1 + xi^2) |g_hat|^2 dxi / (2 pi) with g_hat = sqrt(2 pi) exp(-xi^2/2)
    exact2, _ = integrate.quad(lambda xi: (1 + xi**2) * math.exp(-(xi**2)), -np.inf, np.inf)
    grid = SpatialGrid(10.0, 1024)
    g = np.exp(-grid.centers**2 / 2)
    assert sobolev_norm(g, 1, grid) == pytest.approx(math.sqrt(exact2), rel=1e-4)
    assert math.sqrt(exact2) == pytest.approx(1.63054615891678, rel=1e-12)


def test_linear_path_holder_exponent_is_half():
    m = 2048
    path = SamplePath(TimeGrid(1.0, m), np.linspace(0, 1, m + 1))
    grid = SpatialGrid.covering(path, 2e-4, 2e-4)
    est = local_time_holder_profile(local_time(path, grid, 2e-4), 0.0)
    assert est.gamma_hat == pytest.approx(0.5, abs=0.05)
    assert est.pair_count >= 20


def test_holder_profile_bm_band_and_ceiling():
    path = _fbm(0.5, m=2048, seed=3)
    grid = SpatialGrid.covering(path, 0.01, 0.01)
    est = local_time_holder_profile(local_time(path, grid, 0.01), 0.0, zeta=0.5)
    assert est.ceiling == pytest.approx(0.75)
    assert 0.5 <= est.gamma_hat <= est.ceiling + 0.1


def test_holder_profile_too_few_pairs():
    path = _fbm(0.5, m=16)
    field = local_time(path, SpatialGrid.covering(path, 0.1, 0.1), 0.1)
    with pytest.raises(EstimationError):
        local_time_holder_profile(field, 0.0)


def test_tensor_and_holder_serialisation(tmp_path):
    path = _fbm(0.4, m=64, seed=2)
    grid = SpatialGrid.covering(path, 0.05, 0.05)
    field = local_time(path, grid, 0.05)
    save_local_time(field, tmp_path / "lt.bin", [0, 32, 64])
    header, times, tensor = load_local_time(tmp_path / "lt.bin")
    assert header["M"] == 64 and header["h"] == 0.05 and list(times) == [0, 32, 64]
    assert np.array_equal(tensor, field.tensor([0, 32, 64]))
    assert time_grid_of(header) == path.grid
    est = local_time_holder_profile(local_time(_fbm(0.5, m=256), SpatialGrid(6.0, 200)), 0.0, zeta=0.5)
    write_holder_csv([(0.5, est, 1)], tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("H,lambda,k,gamma_hat") and len(lines) == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 511), st.integers(1, 512))
def test_box_mass_is_monotone_in_time(seed, a, b):
    path = _fbm(0.35, seed=seed)
    grid = SpatialGrid.covering(path, 0.02, 0.02)
    field = local_time(path, grid, 0.02)
    s, t = sorted((a, b))
    box = slice(grid.points // 4, grid.points // 2)
    assert field.density(s)[box].sum() <= field.density(t)[box].sum() + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.1), st.floats(0.0, 0.1), st.sampled_from([0.0, 0.5, 1.0]))
def test_smoothing_contracts_sobolev_norms(seed, h1, h2, lam):
    path = _fbm(0.5, m=256, seed=seed)
    grid = SpatialGrid.covering(path, 0.02, 0.1)
    raw = occupation_measure(path, 256, grid)
    lo, hi = sorted((h1, h2))
    assert sobolev_norm(smooth(raw, grid, hi), lam, grid) <= sobolev_norm(smooth(raw, grid, lo), lam, grid) * (1 + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=64, max_size=64))
def test_negative_order_norm_bounded_by_l2(values):
    grid = SpatialGrid(3.0, 64)
    g = np.array(values)
    assert sobolev_norm(g, -1, grid) <= sobolev_norm(g, 0, grid) * (1 + 1e-12) + 1e-12


def test_field_rejects_bad_window():
    field = LocalTimeField(TimeGrid(1.0, 4), SpatialGrid(1.0, 4), 0.0, np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        field.increment(3, 2)
