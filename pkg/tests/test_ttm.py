# /tests/test_ttm.py

from pathlib import Path

import numpy as np
import pytest
from scipy.constants import hbar
from scipy.linalg import expm

from src.core import lambdicke, lindblad, model, ttm
from src.core.errors import ConvergenceError, InvalidParameterError
from src.core.model import CoolingScheme

A_PLUS, A_MINUS = 0.2, 1.2


@pytest.fixture(scope="module")
def wide_maps() -> ttm.DynamicalMapSeries:
    matrix = lambdicke.rate_matrix(A_PLUS, A_MINUS, n_max=150)
    return ttm.extract_maps(ttm.rate_equation_propagator(matrix), matrix.dimension, 1e-3, steps=50)


@pytest.fixture(scope="module")
def small_maps() -> ttm.DynamicalMapSeries:
    matrix = lambdicke.rate_matrix(A_PLUS, A_MINUS, n_max=20)
    return ttm.extract_maps(ttm.rate_equation_propagator(matrix), matrix.dimension, 0.05, steps=10)


@pytest.mark.parametrize("nbar0", [0.5, 1.0, 5.0])
def test_semigroup_rate_is_lamb_dicke_rate(wide_maps: ttm.DynamicalMapSeries, nbar0: float):
    response = ttm.generalized_rate(wide_maps, nbar0)
    assert not response.undefined
    np.testing.assert_allclose(response.rate, A_MINUS - A_PLUS, rtol=1e-6)


def test_ground_state_limit_uses_first_excitation(wide_maps: ttm.DynamicalMapSeries):
    response = ttm.generalized_rate(wide_maps, 0.0)
    np.testing.assert_allclose(response.capacitance, np.exp(-(A_MINUS - A_PLUS) * wide_maps.times), rtol=1e-9)
    np.testing.assert_allclose(response.rate, A_MINUS - A_PLUS, rtol=1e-6)


def test_variances_at_time_zero(wide_maps: ttm.DynamicalMapSeries):
    response = ttm.generalized_rate(wide_maps, 1.0)
    assert response.var_dH[0] == 0.0
    assert response.var_h[0] == pytest.approx(3.0, rel=1e-9)
    nu = 2.0 * np.pi * 1e6
    scaled = ttm.generalized_rate(wide_maps, 1.0, nu=nu)
    assert scaled.var_h[0] == pytest.approx(3.0 * (hbar * nu) ** 2, rel=1e-9)


def test_semigroup_has_no_memory(small_maps: ttm.DynamicalMapSeries):
    tensors = ttm.transfer_tensors(small_maps)
    np.testing.assert_allclose(tensors.tensors[0], small_maps.map_at(1))
    assert np.all(tensors.norms()[1:] < 1e-10)
    assert ttm.reconstruction_error(tensors, small_maps) < 1e-12


def test_extrapolation_matches_direct_propagation(small_maps: ttm.DynamicalMapSeries):
    tensors = ttm.transfer_tensors(small_maps)
    long = ttm.extrapolate(tensors, small_maps, 30)
    matrix = lambdicke.rate_matrix(A_PLUS, A_MINUS, n_max=20)
    direct = ttm.extract_maps(ttm.rate_equation_propagator(matrix), matrix.dimension, 0.05, steps=30)
    assert long.steps == 30
    np.testing.assert_allclose(long.maps, direct.maps, atol=1e-10)


def test_map_series_checkpoint(tmp_path: Path, small_maps: ttm.DynamicalMapSeries):
    path = tmp_path / "maps.bin"
    small_maps.save(path)
    loaded = ttm.DynamicalMapSeries.load(path)
    assert loaded.dt == small_maps.dt
    np.testing.assert_array_equal(loaded.maps, small_maps.maps)


def test_leaky_maps_are_rejected():
    matrix = lambdicke.rate_matrix(0.5, 1.0, n_max=3, boundary="absorbing")
    with pytest.raises(ConvergenceError):
        ttm.extract_maps(ttm.rate_equation_propagator(matrix), matrix.dimension, 1.0, steps=3)


def test_basis_must_cover_every_fock_state(small_maps: ttm.DynamicalMapSeries):
    matrix = lambdicke.rate_matrix(A_PLUS, A_MINUS, n_max=20)
    with pytest.raises(InvalidParameterError):
        ttm.extract_maps(ttm.rate_equation_propagator(matrix), matrix.dimension, 0.05, steps=3, basis=[0, 1, 2])


def test_parallel_extraction_is_identical(small_maps: ttm.DynamicalMapSeries):
    matrix = lambdicke.rate_matrix(A_PLUS, A_MINUS, n_max=20)
    parallel = ttm.extract_maps(ttm.rate_equation_propagator(matrix), matrix.dimension, 0.05, steps=10, workers=3)
    np.testing.assert_array_equal(parallel.maps, small_maps.maps)


def test_transfer_tensors_need_two_maps():
    with pytest.raises(InvalidParameterError):
        ttm.transfer_tensors(ttm.DynamicalMapSeries(0.1, np.eye(3)[None]))


@pytest.mark.slow
def test_master_equation_maps_are_trace_preserving(lambda_scheme: CoolingScheme):
    propagator = ttm.master_equation_propagator(lambda_scheme, 5)
    maps = ttm.extract_maps(propagator, 5, 0.5, steps=8)
    assert maps.column_error() < 1e-8
    response = ttm.generalized_rate(maps, 0.5)
    levels = np.arange(5.0)
    p = model.thermal_distribution(0.5, 5)
    expected = float(levels @ ((levels - levels @ p) * p)) / 0.5
    assert response.capacitance[0] == pytest.approx(expected, rel=1e-9)


def test_capacitance_matches_variance_identity(small_maps: ttm.DynamicalMapSeries):
    nbar0 = 1.0
    response = ttm.generalized_rate(small_maps, nbar0)
    levels = np.arange(small_maps.dimension, dtype=float)
    p = model.thermal_distribution(nbar0, small_maps.dimension)
    mean = small_maps.evolve(p) @ levels
    expected = 0.5 * (response.var_h[0] + response.var_h - 2.0 * mean[0] * mean - response.var_dH)
    np.testing.assert_allclose(response.capacitance * nbar0, expected, rtol=1e-9, atol=1e-12)


def _mixed_propagator(first: np.ndarray, second: np.ndarray) -> ttm.Propagator:
    """Equal mixture of two rate-equation semigroups; not itself a semigroup."""

    def propagate(p0: np.ndarray, steps: int, dt: float) -> np.ndarray:
        p0 = np.asarray(p0, dtype=float)
        return np.array([0.5 * (expm(first * k * dt) + expm(second * k * dt)) @ p0 for k in range(steps + 1)])

    return propagate


def test_conductance_stencil_converges_under_refinement():
    first = lambdicke.rate_matrix(A_PLUS, A_MINUS, n_max=30).entries
    second = lambdicke.rate_matrix(0.1, 0.4, n_max=30).entries
    propagator = _mixed_propagator(first, second)
    coarse = ttm.generalized_rate(ttm.extract_maps(propagator, 31, 0.1, steps=40), 1.0)
    fine = ttm.generalized_rate(ttm.extract_maps(propagator, 31, 0.05, steps=80), 1.0)
    assert not coarse.undefined and not fine.undefined
    assert coarse.rate[-1] < coarse.rate[0]
    np.testing.assert_allclose(fine.rate[::2], coarse.rate, rtol=0.01)


@pytest.mark.slow
def test_master_equation_maps_follow_rate_equation_at_small_eta(balanced_lambda):
    scheme = balanced_lambda(0.05)
    rates = lambdicke.rate_model(scheme)
    matrix = lambdicke.rate_matrix(rates.a_plus, rates.a_minus, n_max=5)
    dt = 0.25 / rates.cooling_rate
    dark = lindblad.steady_state_electronic(scheme)
    quantum = ttm.extract_maps(ttm.master_equation_propagator(scheme, 6, electronic=dark), 6, dt, steps=6)
    classical = ttm.extract_maps(ttm.rate_equation_propagator(matrix), 6, dt, steps=6)
    np.testing.assert_allclose(quantum.maps, classical.maps, rtol=0.05, atol=0.01)


@pytest.mark.slow
def test_generalized_rate_depends_on_start_temperature_beyond_lamb_dicke(balanced_lambda):
    scheme = balanced_lambda(0.4)
    dark = lindblad.steady_state_electronic(scheme)
    maps = ttm.extract_maps(ttm.master_equation_propagator(scheme, 16, electronic=dark), 16, 0.5, steps=30)
    hot = ttm.generalized_rate(maps, 3.0)
    cold = ttm.generalized_rate(maps, 0.5)
    assert np.all(np.isfinite(hot.rate[4:21])) and np.all(np.isfinite(cold.rate[4:21]))
    assert hot.rate[4] < cold.rate[4]
    assert hot.rate[20] > hot.rate[4]
