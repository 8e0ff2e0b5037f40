# /tests/test_lambdicke.py

import numpy as np
import pytest

from src.core import lambdicke, model
from src.core.errors import InvalidParameterError, PhysicsError, PoleError
from src.core.lambdicke import RateModel
from src.core.model import CoolingScheme, FockDistribution, TrapMode

OMEGAS = (-0.37, -0.1, 0.13, 0.5)


def _lambda_analytic(omega: float, scheme: CoolingScheme) -> float:
    return lambdicke.single_eit_spectrum(
        omega,
        scheme.p_plus_detuning,
        scheme.rabi("pi397"),
        scheme.rabi("sigma397"),
        scheme.gamma,
        scheme.eta("pi397"),
        scheme.eta("sigma397"),
    )


@pytest.mark.parametrize("omega", OMEGAS)
def test_single_eit_matches_regression_theorem(lambda_scheme: CoolingScheme, omega: float):
    numeric = lambdicke.numeric_spectrum(lambda_scheme, omega).real
    assert numeric == pytest.approx(_lambda_analytic(omega, lambda_scheme), rel=1e-6)


def test_single_eit_matches_on_random_parameters(rng: np.random.Generator):
    for _ in range(10):
        delta, rabi_pi, rabi_sigma = rng.uniform(0.5, 4.0), rng.uniform(0.05, 1.0), rng.uniform(0.2, 2.0)
        scheme = CoolingScheme.single_eit(
            TrapMode("axial", 0.1),
            delta,
            rabi_pi,
            rabi_sigma,
            eta_pi=(rng.uniform(0.01, 0.2), 0.0),
            gamma_total=1.0,
            branch_s=1.0,
            branch_d=0.0,
            spurious_pi=False,
        )
        omega = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 1.0))
        assert lambdicke.numeric_spectrum(scheme, omega).real == pytest.approx(_lambda_analytic(omega, scheme), rel=1e-6)


@pytest.mark.parametrize("omega", OMEGAS)
def test_deit_forms_agree(deit_scheme: CoolingScheme, omega: float):
    closed = lambdicke.deit_spectrum(omega, deit_scheme).real
    assert lambdicke.resolvent_spectrum(omega, deit_scheme).real == pytest.approx(closed, rel=1e-9)
    assert lambdicke.numeric_spectrum(deit_scheme, omega).real == pytest.approx(closed, rel=1e-6)


@pytest.mark.parametrize("omega", OMEGAS)
def test_radial_and_axial_specializations(deit_scheme: CoolingScheme, omega: float):
    assert lambdicke.axial_spectrum(omega, deit_scheme) == pytest.approx(lambdicke.deit_spectrum(omega, deit_scheme).real, rel=1e-9)
    radial = deit_scheme.with_mode(TrapMode("radial1", 0.25))
    assert lambdicke.radial_spectrum(omega, radial) == pytest.approx(lambdicke.deit_spectrum(omega, radial).real, rel=1e-9)


def test_b_reduces_to_single_eit_denominator():
    omega, delta, gamma, rabi_pi, rabi_sigma = -0.2, 2.0, 0.5, 0.3, 0.6
    _, b = lambdicke.deit_ab(omega, delta, 0.0, gamma, rabi_pi, rabi_sigma, 0.0)
    assert b == pytest.approx(omega - delta + 1j * gamma - (rabi_pi**2 + rabi_sigma**2) / (4.0 * omega))
    eta = 0.1
    expected = -(eta**2 / 4.0) * (rabi_pi * rabi_sigma) ** 2 / (rabi_pi**2 + rabi_sigma**2) * np.imag(1.0 / b)
    assert lambdicke.single_eit_spectrum(omega, delta, rabi_pi, rabi_sigma, gamma, eta, 0.0) == pytest.approx(expected)


def test_spectrum_poles_are_rejected(deit_scheme: CoolingScheme):
    with pytest.raises(PoleError):
        lambdicke.deit_spectrum(0.0, deit_scheme)
    with pytest.raises(PoleError):
        lambdicke.deit_spectrum(0.6 * deit_scheme.delta_s, deit_scheme)


def test_single_eit_spectrum_continuous_at_zero():
    assert lambdicke.single_eit_spectrum(0.0, 2.0, 0.3, 0.6, 0.5, 0.1, 0.0) == 0.0
    values = lambdicke.single_eit_spectrum(np.array([0.0, -0.1]), 2.0, 0.3, 0.6, 0.5, 0.1, 0.0)
    assert values.shape == (2,)


def test_analytic_and_numeric_rate_models_agree(lambda_scheme: CoolingScheme):
    numeric = lambdicke.rate_model(lambda_scheme, method="numeric")
    analytic = lambdicke.rate_model(lambda_scheme, method="analytic")
    assert numeric.a_minus == pytest.approx(analytic.a_minus, rel=1e-6)
    assert numeric.a_plus == pytest.approx(analytic.a_plus, rel=1e-6)
    assert numeric.cools


def test_negative_rate_is_a_physics_error():
    with pytest.raises(PhysicsError):
        lambdicke.heating_cooling_rates(lambda w: -1.0 if w < 0 else 1.0, 0.0, 0.1)
    with pytest.raises(InvalidParameterError):
        lambdicke.heating_cooling_rates(lambda w: 1.0, 0.0, 0.0)


@pytest.mark.parametrize("ratio", [0.1, 0.5, 0.9])
def test_rate_matrix_null_vector_is_thermal(ratio: float):
    matrix = lambdicke.rate_matrix(ratio, 1.0, n_max=60)
    np.testing.assert_allclose(matrix.entries.sum(axis=0), 0.0, atol=1e-12)
    expected = RateModel(ratio, 1.0).thermal_populations(60)
    np.testing.assert_allclose(matrix.steady_state(), expected / expected.sum(), atol=1e-10)


def test_absorbing_boundary_leaks():
    matrix = lambdicke.rate_matrix(0.5, 1.0, n_max=10, boundary="absorbing")
    assert matrix.entries.sum(axis=0)[-1] < 0
    with pytest.raises(InvalidParameterError):
        lambdicke.rate_matrix(0.5, 1.0, n_max=10, boundary="periodic")


def test_rate_equation_follows_exponential():
    rates = RateModel(0.2, 1.2)
    matrix = lambdicke.rate_matrix(rates.a_plus, rates.a_minus, n_max=60)
    p0 = FockDistribution.thermal(2.0, matrix.dimension)
    times = np.linspace(0.0, 4.0, 9)
    np.testing.assert_allclose(lambdicke.evolve_nbar(p0, matrix, times), rates.nbar(2.0, times), rtol=1e-6)


def test_evolve_requires_normalized_distribution():
    matrix = lambdicke.rate_matrix(0.2, 1.0, n_max=5)
    with pytest.raises(InvalidParameterError):
        lambdicke.evolve_rate_eq(FockDistribution(np.ones(6)), matrix, 1.0)


def test_rate_model_steady_state_quantities():
    rates = RateModel(1.0, 3.0, nu=2.0 * np.pi * 1e6)
    assert rates.cooling_rate == 2.0
    assert rates.n_ss == pytest.approx(0.5)
    assert rates.p0_ss == pytest.approx(2.0 / 3.0)
    assert rates.t_ss_temperature > 0
    heating = RateModel(2.0, 1.0)
    assert not heating.cools
    assert heating.n_ss == float("inf")
    assert rates.with_heating(0.5).cooling_rate == pytest.approx(rates.cooling_rate)
    assert rates.with_heating(0.5).n_ss > rates.n_ss


def test_single_eit_optimal_rates(lambda_scheme: CoolingScheme):
    best = lambdicke.optimal_rates(lambda_scheme)
    o_pi, o_sigma = lambda_scheme.rabi("pi397"), lambda_scheme.rabi("sigma397")
    lorentz = 0.25 / (16.0 + 0.25)
    assert best.kind == "single"
    assert best.n_pi == pytest.approx(2.0 * lorentz * o_pi**2 / (o_pi**2 + o_sigma**2))
    assert best.n_ss == pytest.approx(lorentz + best.n_pi)


def test_deit_optimal_rates_report_both_modes(deit_scheme: CoolingScheme):
    best = lambdicke.optimal_rates(deit_scheme)
    assert best.kind == "deit"
    assert best.alpha == pytest.approx(1.5)
    assert best.rate_radial > 0 and best.rate_axial > 0


def test_stark_calibration_round_trip():
    delta = 2.0 * np.pi * 60e6
    rabi = 2.0 * np.pi * 20e6
    assert lambdicke.rabi_from_stark(delta, lambdicke.stark_from_rabi(delta, rabi)) == pytest.approx(rabi)
    assert lambdicke.bright_state_tuning(delta, lambdicke.stark_from_rabi(delta, rabi)) == pytest.approx(rabi)


def test_exact_tuning_places_single_eit_resonance():
    delta, nu = 2.0, 0.1
    rabi = lambdicke.exact_bright_tuning(delta, nu)
    _, b = lambdicke.deit_ab(-nu, delta, 0.0, 0.5, 0.0, rabi, 0.0)
    assert b.real == pytest.approx(0.0, abs=1e-12)


def test_lamb_dicke_checks(lambda_scheme: CoolingScheme):
    assert lambdicke.lamb_dicke_ratio(lambda_scheme) == pytest.approx(0.1 * 0.3 / 0.05)
    assert lambdicke.lamb_dicke_rate_bound(0.1, 0.5) == pytest.approx(0.01)
    assert lambdicke.detuning_scaling_rate(2.0, 0.5, 0.1, 0.1) == pytest.approx(8.0 * 0.01 * 0.1)


def test_diffusion_from_emission_recoil(lambda_scheme: CoolingScheme):
    assert lambdicke.scheme_diffusion(lambda_scheme) == 0.0
    value = lambdicke.diffusion_coefficient({"P+": 0.1}, {("P+", "S+"): 0.2}, {("P+", "S+"): 1.0})
    assert value == pytest.approx(0.1 * 0.04)
    with pytest.raises(InvalidParameterError):
        lambdicke.diffusion_coefficient({"P+": 1.5}, {}, {})


def test_thermal_populations_match_model():
    rates = RateModel(0.25, 1.0)
    p = rates.thermal_populations(200)
    assert p.sum() == pytest.approx(1.0)
    assert float(np.arange(201) @ p) == pytest.approx(rates.n_ss)
    np.testing.assert_allclose(p[:40] / p.sum(), model.thermal_distribution(rates.n_ss, 40), rtol=1e-9)


@pytest.mark.parametrize("scheme_name", ["lambda_scheme", "deit_scheme"])
def test_numeric_spectrum_vanishes_at_the_dark_point(request: pytest.FixtureRequest, scheme_name: str):
    scheme = request.getfixturevalue(scheme_name)
    peak = max(lambdicke.numeric_spectrum(scheme, w).real for w in np.linspace(-0.5, -0.02, 25))
    assert abs(lambdicke.numeric_spectrum(scheme, 0.0).real) <= 1e-10 * peak
    assert abs(lambdicke.numeric_spectrum(scheme, 1e-7).real) <= 1e-10 * peak


def test_rate_equation_nbar_decreases_monotonically():
    matrix = lambdicke.rate_matrix(0.2, 1.2, n_max=80)
    nbar = lambdicke.evolve_nbar(FockDistribution.thermal(5.0, matrix.dimension), matrix, np.linspace(0.0, 8.0, 41))
    assert np.all(np.diff(nbar) < 0)
    assert nbar[-1] > RateModel(0.2, 1.2).n_ss


def test_repumper_geometry_sets_alpha(deit_scheme: CoolingScheme):
    scheme = CoolingScheme.double_eit(
        deit_scheme.mode,
        delta=2.0,
        rabi_pi=0.4,
        rabi_sigma=1.2,
        rabi_d=0.8,
        delta_s=0.3,
        eta_pi=(0.1, 0.0),
        eta_sigma=(0.0, 0.08),
        eta_d=(0.246, 0.0),
        gamma_total=1.0,
    )
    assert lambdicke.optimal_rates(scheme).alpha == pytest.approx(1.46)
    for omega in OMEGAS:
        assert lambdicke.axial_spectrum(omega, scheme) == pytest.approx(lambdicke.deit_spectrum(omega, scheme).real, rel=1e-9)


def _away_from_poles(rng: np.random.Generator, delta_s: float) -> float:
    poles = np.array([0.0, 0.6, 0.8, 1.4]) * delta_s
    while True:
        omega = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.6))
        if np.min(np.abs(omega - poles)) > 0.02:
            return omega


@pytest.mark.parametrize("seed", range(50))
def test_deit_forms_agree_on_random_parameters(seed: int):
    rng = np.random.default_rng(seed)
    delta_s = rng.uniform(0.1, 0.5)
    scheme = CoolingScheme.double_eit(
        TrapMode("axial", 0.1),
        delta=rng.uniform(1.5, 4.0),
        rabi_pi=rng.uniform(0.1, 0.8),
        rabi_sigma=rng.uniform(0.5, 2.0),
        rabi_d=rng.uniform(0.3, 1.5),
        delta_s=delta_s,
        eta_pi=(0.1, 0.0),
        eta_sigma=(0.0, 0.08),
        eta_d=(0.25, 0.0),
        gamma_total=1.0,
    )
    omega = _away_from_poles(rng, delta_s)
    closed = lambdicke.deit_spectrum(omega, scheme).real
    assert lambdicke.numeric_spectrum(scheme, omega).real == pytest.approx(closed, rel=1e-6, abs=1e-12)
