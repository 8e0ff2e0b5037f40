# /tests/test_lindblad.py

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from src.core import lambdicke, lindblad, model, thermometry
from src.core.errors import InvalidParameterError, TruncationError
from src.core.lindblad import QuantumState, Trajectory
from src.core.model import CoolingScheme, TrapMode


@pytest.fixture(scope="module")
def motionless_deit() -> CoolingScheme:
    return CoolingScheme.double_eit(TrapMode("axial", 0.1), 2.0, 0.4, 1.2, 0.8, 0.3, gamma_total=1.0)


def test_excited_state_decays_at_gamma(lasers_off: CoolingScheme):
    trajectory = lindblad.cooling_trajectory(lasers_off, 0.0, 3.0, fock_dim=2, samples=30, electronic=model.ket("P+"))
    times = np.asarray(trajectory.times)
    np.testing.assert_allclose(trajectory.p_excited, np.exp(-lasers_off.gamma_total * times), atol=1e-7)


def test_trace_is_preserved(deit_scheme: CoolingScheme):
    trajectory = lindblad.cooling_trajectory(deit_scheme, 0.5, 20.0, fock_dim=4, samples=10)
    assert abs(trajectory.final_state.trace() - 1.0) < 1e-9
    assert trajectory.final_state.hermiticity_error() < 1e-9


def test_resonant_dark_state_is_stationary(motionless_deit: CoolingScheme):
    dark = model.dark_state_deit(0.4, 1.2, 0.8)
    trajectory = lindblad.cooling_trajectory(motionless_deit, 0.0, 50.0, fock_dim=2, samples=10, electronic=dark)
    start = model.full_state(dark, np.array([1.0, 0.0]))
    assert np.max(np.abs(trajectory.final_state.rho - start)) < 1e-10
    assert max(trajectory.p_excited) < 1e-10


def test_lambda_steady_state_is_dark(lambda_scheme: CoolingScheme):
    rho = lindblad.steady_state_electronic(lambda_scheme)
    dark = model.dark_state_single(lambda_scheme.rabi("pi397"), lambda_scheme.rabi("sigma397"))
    np.testing.assert_allclose(rho, np.outer(dark, dark.conj()), atol=1e-8)
    assert lindblad.scattering_rate(rho, lambda_scheme.gamma_total) < 1e-8


def test_active_levels():
    lam = CoolingScheme.single_eit(TrapMode("axial", 0.1), 2.0, 0.3, 0.6, gamma_total=1.0, branch_s=1.0, branch_d=0.0, spurious_pi=False)
    assert [model.LEVELS[i] for i in lindblad.active_levels(lam)] == ["S-", "S+", "P+"]


def test_matrix_free_rhs_matches_superoperator(deit_scheme: CoolingScheme, rng: np.random.Generator):
    ops = model.build_operators(deit_scheme, 3)
    x = rng.normal(size=(ops.dim, ops.dim)) + 1j * rng.normal(size=(ops.dim, ops.dim))
    rho = x @ x.conj().T
    rho /= np.trace(rho)
    sup = lindblad.liouvillian(ops.hamiltonian, ops.collapse_ops)
    np.testing.assert_allclose(lindblad.lindblad_rhs(ops)(0.0, rho.reshape(-1)), sup @ rho.reshape(-1), atol=1e-12)


def test_dense_and_adaptive_propagation_agree(lambda_scheme: CoolingScheme):
    rk = lindblad.cooling_trajectory(lambda_scheme, 0.5, 5.0, fock_dim=4, samples=5)
    dense = lindblad.cooling_trajectory(lambda_scheme, 0.5, 5.0, fock_dim=4, samples=5, method="dense")
    np.testing.assert_allclose(rk.nbar, dense.nbar, atol=1e-7)


def test_zero_duration_segment_is_skipped(lambda_scheme: CoolingScheme):
    single = lindblad.run_segments([(lambda_scheme, 2.0)], 0.5, fock_dim=3, samples=4)
    padded = lindblad.run_segments([(lambda_scheme, 2.0), (lambda_scheme, 0.0)], 0.5, fock_dim=3, samples=4)
    assert padded.times == single.times
    np.testing.assert_allclose(padded.nbar, single.nbar)


def test_propagate_rejects_bad_duration(lambda_scheme: CoolingScheme):
    ops = model.build_operators(lambda_scheme, 2)
    state = lindblad.initial_state(lambda_scheme, 0.0, 2)
    with pytest.raises(InvalidParameterError):
        lindblad.propagate(state, ops, 0.0)


def test_checkpoint_round_trip(tmp_path: Path, deit_scheme: CoolingScheme):
    state = lindblad.initial_state(deit_scheme, 1.0, 5)
    path = tmp_path / "state.rho"
    state.save(path)
    loaded = QuantumState.load(path)
    assert loaded.fock_dim == 5
    np.testing.assert_array_equal(loaded.rho, state.rho)


def test_trajectory_times_must_increase(deit_scheme: CoolingScheme):
    trajectory = Trajectory()
    state = lindblad.initial_state(deit_scheme, 0.0, 2)
    trajectory.append(state)
    with pytest.raises(InvalidParameterError):
        trajectory.append(state)


def test_scan_finds_the_dark_point(lambda_scheme: CoolingScheme):
    probes = [1.5, 1.9, 2.0, 2.1, 2.5]
    points = lindblad.spectrum_scan(lambda_scheme, probes)
    rates = np.array([p.rate for p in points])
    assert all(p.converged for p in points)
    assert rates[2] < 1e-8 * rates.max()
    parallel = lindblad.spectrum_scan(lambda_scheme, probes, workers=2)
    np.testing.assert_array_equal([p.rate for p in parallel], rates)


@pytest.mark.slow
def test_master_equation_agrees_with_lamb_dicke_rate():
    nu, delta = 1.0, 4.0
    scheme = CoolingScheme.single_eit(
        TrapMode("axial", nu),
        delta,
        0.5,
        lambdicke.exact_bright_tuning(delta, nu),
        eta_pi=(0.1, 0.0),
        gamma_total=1.0,
        branch_s=1.0,
        branch_d=0.0,
        spurious_pi=False,
    )
    assert lambdicke.lamb_dicke_ratio(scheme) <= 0.05
    predicted = lambdicke.rate_model(scheme)
    trajectory = lindblad.cooling_trajectory(scheme, 1.0, 6.0 / predicted.cooling_rate, fock_dim=10, samples=60)
    fit = thermometry.fit_cooling_curve(trajectory.times, trajectory.nbar)
    assert fit.rate == pytest.approx(predicted.cooling_rate, rel=0.10)


def test_truncation_convergence(lasers_off: CoolingScheme):
    finals = lindblad.truncation_convergence(lasers_off, 0.01, 1.0, [6, 4], samples=5)
    assert [n for n, _ in finals] == [4, 6]
    assert finals[0][1] == pytest.approx(finals[1][1], rel=1e-3)
    with pytest.raises(TruncationError) as info:
        lindblad.truncation_convergence(lasers_off, 2.0, 1.0, [4, 8], samples=5)
    assert info.value.context["fock_dims"] == [4, 8]
    with pytest.raises(InvalidParameterError):
        lindblad.truncation_convergence(lasers_off, 2.0, 1.0, [4])


def test_trace_drift_is_reported(lambda_scheme: CoolingScheme):
    ops = model.build_operators(lambda_scheme, 3)
    leaky = replace(ops, hamiltonian=ops.hamiltonian - 0.05j * ops.excited_projector)
    state = lindblad.initial_state(lambda_scheme, 0.5, 3)
    trajectory = lindblad.propagate(state, leaky, 10.0, samples=5)
    assert any("trace drifted" in w for w in trajectory.warnings)
    clean = lindblad.propagate(state, ops, 10.0, samples=5)
    assert not any("trace drifted" in w for w in clean.warnings)


@pytest.mark.slow
def test_master_equation_steady_state_matches_rate_model(balanced_lambda):
    scheme = balanced_lambda(0.05)
    predicted = lambdicke.rate_model(scheme)
    trajectory = lindblad.cooling_trajectory(scheme, 0.3, 10.0 / predicted.cooling_rate, fock_dim=6, samples=50)
    assert np.mean(trajectory.nbar[-5:]) == pytest.approx(predicted.n_ss, rel=0.15)


@pytest.mark.slow
def test_rate_at_nbar_one_falls_below_lamb_dicke_rate(balanced_lambda):
    scheme = balanced_lambda(0.4)
    predicted = lambdicke.rate_model(scheme)
    assert predicted.cooling_rate > 0.3 * lambdicke.lamb_dicke_rate_bound(1.0, scheme.gamma)
    trajectory = lindblad.cooling_trajectory(scheme, 3.0, 12.0 / predicted.cooling_rate, fock_dim=20, samples=240)
    rate = thermometry.rate_at_nbar_one(trajectory.times, trajectory.nbar)
    assert 0.0 < rate < predicted.cooling_rate
