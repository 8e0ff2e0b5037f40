# /src/core/lindblad.py
"""
Master-equation engine for the electronic (x) vibrational density operator.

    d rho/dt = -i [H, rho] + sum_j (L_j rho L_j^+ - {L_j^+ L_j, rho} / 2)

with L_j = sqrt(Gamma_j) |g><e| (x) 1 from model.build_collapse_ops. The
right-hand side is applied matrix-free on the density matrix; a dense
superoperator is only built for small spaces (electronic steady states,
spectra, the "dense" propagation method).
"""

import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm, null_space

from src.core import model
from src.core.errors import ConvergenceError, InvalidParameterError, PositivityError, SingularSolveError, TruncationError
from src.core.model import CoolingScheme, FockDistribution, OperatorSet
from src.utils.config.settings import settings
from src.utils.resources.logger import logger


@dataclass
class QuantumState:
    rho: np.ndarray
    time: float = 0.0
    fock_dim: int = 1

    def __post_init__(self) -> None:
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.ndim != 2 or self.rho.shape[0] != self.rho.shape[1]:
            raise InvalidParameterError("Density matrix must be square", {"shape": self.rho.shape})
        if self.rho.shape[0] % self.fock_dim:
            raise InvalidParameterError("Dimension is not a multiple of fock_dim", {"dim": self.rho.shape[0], "fock_dim": self.fock_dim})

    @property
    def electronic_dim(self) -> int:
        return self.rho.shape[0] // self.fock_dim

    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))))

    def fock_populations(self) -> FockDistribution:
        d = self.electronic_dim
        diag = np.real(np.diag(self.rho)).reshape(d, self.fock_dim)
        return FockDistribution(diag.sum(axis=0))

    def electronic_populations(self) -> np.ndarray:
        diag = np.real(np.diag(self.rho)).reshape(self.electronic_dim, self.fock_dim)
        return diag.sum(axis=1)

    def excited_population(self) -> float:
        pops = self.electronic_populations()
        return float(sum(pops[model.LEVEL_INDEX[l]] for l in model.EXCITED_LEVELS))

    # Flat binary checkpoint: one JSON header line, then complex128 row-major data.
    def save(self, path: Path) -> None:
        header = {
            "format": "eitcool-rho",
            "dim": int(self.rho.shape[0]),
            "fock_dim": self.fock_dim,
            "basis": list(model.LEVELS),
            "ordering": "electronic (x) fock",
            "time": self.time,
            "dtype": "complex128",
        }
        path = Path(path)
        with open(path, "wb") as f:
            f.write((json.dumps(header) + "\n").encode("utf-8"))
            f.write(np.ascontiguousarray(self.rho, dtype=np.complex128).tobytes())

    @classmethod
    def load(cls, path: Path) -> "QuantumState":
        with open(Path(path), "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            if header.get("format") != "eitcool-rho":
                raise InvalidParameterError("Not a density-matrix checkpoint", {"path": str(path)})
            dim = int(header["dim"])
            data = np.frombuffer(f.read(), dtype=np.complex128)
        if data.size != dim * dim:
            raise InvalidParameterError("Checkpoint size mismatch", {"expected": dim * dim, "found": data.size})
        return cls(rho=data.reshape(dim, dim).copy(), time=float(header["time"]), fock_dim=int(header["fock_dim"]))


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    nbar: List[float] = field(default_factory=list)
    p_excited: List[float] = field(default_factory=list)
    fock_populations: List[FockDistribution] = field(default_factory=list)
    final_state: Optional[QuantumState] = None
    warnings: List[str] = field(default_factory=list)

    def append(self, state: QuantumState) -> None:
        fock = state.fock_populations()
        if self.times and state.time <= self.times[-1]:
            raise InvalidParameterError("Trajectory times must increase", {"last": self.times[-1], "new": state.time})
        self.times.append(state.time)
        self.nbar.append(fock.nbar)
        self.p_excited.append(state.excited_population())
        self.fock_populations.append(fock)

    def extend(self, other: "Trajectory", offset: float = 0.0) -> None:
        start = 1 if self.times and other.times and abs(other.times[0] + offset - self.times[-1]) < 1e-15 else 0
        self.times += [t + offset for t in other.times[start:]]
        self.nbar += other.nbar[start:]
        self.p_excited += other.p_excited[start:]
        self.fock_populations += other.fock_populations[start:]
        self.final_state = other.final_state
        self.warnings += other.warnings

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.times), np.asarray(self.nbar)


# --- Liouvillian ------------------------------------------------------------------


def lindblad_rhs(ops: OperatorSet) -> Callable[[float, np.ndarray], np.ndarray]:
    """Matrix-free right-hand side on the flattened density matrix."""
    d = ops.dim
    h = ops.hamiltonian
    c_ops = [c for c in ops.collapse_ops]
    c_dag = [c.conj().T for c in c_ops]
    # -i H_eff rho + h.c. part, H_eff = H - (i/2) sum L^+ L
    h_eff = h - 0.5j * sum((cd @ c for c, cd in zip(c_ops, c_dag)), np.zeros_like(h))
    m = -1j * h_eff

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        rho = y.reshape(d, d)
        out = m @ rho
        out = out + out.conj().T
        for c, cd in zip(c_ops, c_dag):
            out += c @ rho @ cd
        return out.reshape(-1)

    return rhs


def liouvillian(hamiltonian: np.ndarray, collapse_ops: Sequence[np.ndarray]) -> np.ndarray:
    """Dense superoperator for row-major vec(rho): vec(A rho B) = (A kron B^T) vec(rho)."""
    d = hamiltonian.shape[0]
    eye = np.eye(d)
    sup = -1j * (np.kron(hamiltonian, eye) - np.kron(eye, hamiltonian.T))
    for c in collapse_ops:
        cdc = c.conj().T @ c
        sup += np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return sup


def active_levels(scheme: CoolingScheme, initial: str = "S+") -> List[int]:
    """Electronic levels reachable from `initial` through laser couplings or decay."""
    h = model.electronic_hamiltonian(scheme)
    adjacency = np.abs(h - np.diag(np.diag(h))) > 0
    for c in model.electronic_collapse_ops(scheme):
        adjacency |= np.abs(c) > 0
    adjacency = adjacency | adjacency.T
    seen = {model.LEVEL_INDEX[initial]}
    queue = deque(seen)
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adjacency[i]):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return sorted(seen)


@dataclass(frozen=True)
class ElectronicSystem:
    levels: Tuple[int, ...]
    hamiltonian: np.ndarray
    collapse_ops: Tuple[np.ndarray, ...]
    superoperator: np.ndarray

    def embed(self, rho: np.ndarray) -> np.ndarray:
        full = np.zeros((model.N_LEVELS, model.N_LEVELS), dtype=complex)
        idx = np.ix_(self.levels, self.levels)
        full[idx] = rho
        return full

    def restrict(self, op: np.ndarray) -> np.ndarray:
        return op[np.ix_(self.levels, self.levels)]


def electronic_system(scheme: CoolingScheme, initial: str = "S+") -> ElectronicSystem:
    levels = active_levels(scheme, initial)
    idx = np.ix_(levels, levels)
    h = model.electronic_hamiltonian(scheme)[idx]
    c_ops = tuple(c[idx] for c in model.electronic_collapse_ops(scheme) if np.any(np.abs(c[idx]) > 0))
    return ElectronicSystem(tuple(levels), h, c_ops, liouvillian(h, c_ops))


def steady_state_electronic(scheme: CoolingScheme, initial: str = "S+", residual_tol: float = 1e-10) -> np.ndarray:
    """Zeroth-order (eta = 0) electronic steady state, 8 x 8, by null-space extraction."""
    system = electronic_system(scheme, initial)
    d = len(system.levels)
    kernel = null_space(system.superoperator, rcond=1e-11)
    if kernel.shape[1] == 0:
        # fall back to the smallest singular vector
        _, _, vh = np.linalg.svd(system.superoperator)
        kernel = vh[-1].conj().reshape(-1, 1)
    if kernel.shape[1] > 1:
        raise ConvergenceError(
            "Degenerate electronic steady state",
            {"null_dim": kernel.shape[1], "levels": [model.LEVELS[i] for i in system.levels]},
        )
    rho = kernel[:, 0].reshape(d, d)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    residual = float(np.linalg.norm(system.superoperator @ rho.reshape(-1)))
    if residual > residual_tol * max(1.0, np.linalg.norm(system.superoperator)):
        raise ConvergenceError("Steady-state residual too large", {"residual": residual})
    return system.embed(rho)


def excited_populations(rho_el: np.ndarray) -> dict:
    return {l: float(np.real(rho_el[model.LEVEL_INDEX[l], model.LEVEL_INDEX[l]])) for l in model.EXCITED_LEVELS}


# --- propagation ----------------------------------------------------------------------


def initial_state(
    scheme: CoolingScheme, nbar0: float, fock_dim: int, electronic: Optional[np.ndarray] = None
) -> QuantumState:
    """Thermal vibrational state (x) optically pumped |S+> (or the given electronic state)."""
    el = model.ket("S+") if electronic is None else electronic
    fock = model.thermal_distribution(nbar0, fock_dim)
    return QuantumState(model.full_state(el, fock), 0.0, fock_dim)


def _check_state(state: QuantumState, tolerance: float, reference_trace: float) -> float:
    """Raises on lost positivity; returns the trace drift relative to `reference_trace`."""
    min_eig = state.min_eigenvalue()
    if min_eig < -tolerance:
        raise PositivityError(
            "Density matrix lost positivity",
            {"time": state.time, "min_eigenvalue": min_eig, "trace": state.trace()},
        )
    return abs(state.trace() - reference_trace)


def propagate(
    state: QuantumState,
    ops: OperatorSet,
    duration: float,
    samples: int = 50,
    rtol: Optional[float] = None,
    atol: Optional[float] = None,
    method: Literal["rk", "dense"] = "rk",
    positivity_tol: Optional[float] = None,
    trace_tol: Optional[float] = None,
) -> Trajectory:
    """
    Integrate the master equation for `duration`, recording `samples` + 1
    equally spaced snapshots (including the initial state).
    """
    if duration <= 0:
        raise InvalidParameterError("duration must be positive", {"duration": duration})
    if state.rho.shape != ops.hamiltonian.shape:
        raise InvalidParameterError("State and operators have different dimensions")
    engines = settings.get_engine_config()
    rtol = rtol if rtol is not None else float(engines.get("me_rtol", 1e-8))
    atol = atol if atol is not None else float(engines.get("me_atol", 1e-10))
    positivity_tol = positivity_tol if positivity_tol is not None else float(engines.get("positivity_tolerance", 1e-6))
    trace_tol = trace_tol if trace_tol is not None else float(engines.get("trace_tolerance", 1e-9))
    times = state.time + np.linspace(0.0, duration, samples + 1)
    d = ops.dim
    logger.info("propagating master equation", dim=d, duration=duration, method=method, rtol=rtol)

    if method == "dense":
        step = expm(liouvillian(ops.hamiltonian, ops.collapse_ops) * (duration / samples))
        ys = [state.rho.reshape(-1)]
        for _ in range(samples):
            ys.append(step @ ys[-1])
        y_all = np.array(ys).T
    else:
        sol = solve_ivp(
            lindblad_rhs(ops),
            (times[0], times[-1]),
            state.rho.reshape(-1),
            method=str(engines.get("me_method", "DOP853")),
            t_eval=times,
            rtol=rtol,
            atol=atol,
        )
        if not sol.success:
            logger.error("integration failed", message=sol.message)
            raise ConvergenceError("Master-equation integration failed", {"message": sol.message})
        y_all = sol.y

    trajectory = Trajectory()
    threshold = float(engines.get("truncation_threshold", 1e-3))
    warned = False
    drift = 0.0
    reference = state.trace()
    for k, t in enumerate(times):
        snapshot = QuantumState(y_all[:, k].reshape(d, d), float(t), ops.fock_dim)
        drift = max(drift, _check_state(snapshot, positivity_tol, reference))
        trajectory.append(snapshot)
        top = trajectory.fock_populations[-1].top_population
        if top > threshold and not warned:
            warned = True
            msg = f"top Fock population {top:.2e} exceeds {threshold:.0e} at t={t:.3e}s; increase fock_dim"
            trajectory.warnings.append(msg)
            logger.warning("truncation_warning", top_population=top, time=float(t), fock_dim=ops.fock_dim)
    trajectory.final_state = QuantumState(y_all[:, -1].reshape(d, d), float(times[-1]), ops.fock_dim)
    if drift > trace_tol:
        trajectory.warnings.append(f"trace drifted by {drift:.2e} (tolerance {trace_tol:.0e}); tighten the integrator tolerance")
        logger.warning("trace_drift", drift=drift, tolerance=trace_tol)
    logger.info("propagation finished", trace_drift=drift, final_nbar=trajectory.nbar[-1])
    return trajectory


def cooling_trajectory(
    scheme: CoolingScheme,
    nbar0: float,
    duration: float,
    fock_dim: Optional[int] = None,
    samples: int = 50,
    include_heating: bool = False,
    method: Literal["rk", "dense"] = "rk",
    electronic: Optional[np.ndarray] = None,
    **kwargs: float,
) -> Trajectory:
    fock_dim = fock_dim or int(settings.get("engines.fock_dim", 17))
    ops = model.build_operators(scheme, fock_dim, include_heating=include_heating)
    state = initial_state(scheme, nbar0, fock_dim, electronic)
    return propagate(state, ops, duration, samples=samples, method=method, **kwargs)


def run_segments(
    segments: Sequence[Tuple[CoolingScheme, float]],
    nbar0: float,
    fock_dim: Optional[int] = None,
    samples: int = 50,
    include_heating: bool = False,
    method: Literal["rk", "dense"] = "rk",
) -> Trajectory:
    """Piecewise-constant schemes applied back to back, continuing the same state."""
    fock_dim = fock_dim or int(settings.get("engines.fock_dim", 17))
    state: Optional[QuantumState] = None
    result = Trajectory()
    for scheme, duration in segments:
        if duration <= 0:
            continue
        ops = model.build_operators(scheme, fock_dim, include_heating=include_heating)
        if state is None:
            state = initial_state(scheme, nbar0, fock_dim)
        part = propagate(state, ops, duration, samples=samples, method=method)
        result.extend(part)
        state = part.final_state
    if state is None:
        state = initial_state(segments[0][0], nbar0, fock_dim)
        result.append(state)
        result.final_state = state
    return result


def truncation_convergence(
    scheme: CoolingScheme,
    nbar0: float,
    duration: float,
    fock_dims: Iterable[int],
    tolerance: Optional[float] = None,
    **kwargs: Any,
) -> List[Tuple[int, float]]:
    """
    Final nbar for each fock_dim. Raises TruncationError when the two largest
    cutoffs disagree by more than `tolerance` (relative to max(nbar, 1)).
    """
    tolerance = tolerance if tolerance is not None else float(settings.get("engines.truncation_tolerance", 0.02))
    dims = sorted(set(int(n) for n in fock_dims))
    if len(dims) < 2:
        raise InvalidParameterError("At least two Fock cutoffs are needed", {"fock_dims": dims})
    finals = [(n, cooling_trajectory(scheme, nbar0, duration, fock_dim=n, **kwargs).nbar[-1]) for n in dims]
    (n_low, low), (n_high, high) = finals[-2], finals[-1]
    change = abs(high - low) / max(abs(high), 1.0)
    logger.info("truncation check", fock_dims=dims, final_nbar=[v for _, v in finals], change=change)
    if change > tolerance:
        logger.error("truncation check failed", fock_dim=n_low, larger=n_high, change=change, tolerance=tolerance)
        raise TruncationError(
            f"Final nbar moved by {change:.2%} between fock_dim {n_low} and {n_high}; raise the cutoff",
            {"fock_dims": dims, "final_nbar": [v for _, v in finals], "tolerance": tolerance},
        )
    return finals


# --- scattering -----------------------------------------------------------------------


def scattering_rate(state_or_rho: "QuantumState | np.ndarray", gamma_total: float) -> float:
    """Photon scattering rate Gamma * (total P population)."""
    if isinstance(state_or_rho, QuantumState):
        p = state_or_rho.excited_population()
    else:
        rho = np.asarray(state_or_rho)
        p = float(sum(np.real(rho[model.LEVEL_INDEX[l], model.LEVEL_INDEX[l]]) for l in model.EXCITED_LEVELS))
    return gamma_total * p


@dataclass
class ScanPoint:
    probe_detuning: float
    rate: float
    converged: bool = True


def _scan_point(scheme: CoolingScheme, probe_detuning: float) -> ScanPoint:
    probed = scheme.with_laser("pi397", detuning=probe_detuning)
    try:
        rho = steady_state_electronic(probed)
    except (ConvergenceError, SingularSolveError) as e:
        logger.warning("scan point did not converge", probe_detuning=probe_detuning, error=str(e))
        return ScanPoint(probe_detuning, float("nan"), converged=False)
    return ScanPoint(probe_detuning, scattering_rate(rho, scheme.gamma_total))


def spectrum_scan(scheme: CoolingScheme, probe_detunings: Sequence[float], workers: int = 1) -> List[ScanPoint]:
    """
    Steady-state scattering rate while the pi397 probe detuning is scanned and
    all other beams stay fixed. Two-photon resonance (dark point) sits at the
    probe detuning equal to scheme.delta.
    """
    logger.info("spectrum scan", points=len(probe_detunings), workers=workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda d: _scan_point(scheme, d), probe_detunings))
    return [_scan_point(scheme, d) for d in probe_detunings]
