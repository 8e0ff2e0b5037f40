# /src/core/ttm.py
"""
Transfer-tensor analysis of the vibrational population dynamics.

Dynamical maps E_k (acting on Fock populations) are sampled on a uniform grid
t_k = k dt from short simulations, decomposed into transfer tensors

    T_1 = E_1,    T_k = E_k - sum_{m=1}^{k-1} T_m E_{k-m}

and contracted to long times. From the maps and a thermal initial state the
generalized capacitance C(t) = d<H>(t)/dT, conductance kappa(t) = dJ(t)/dT and
their quotient R(t, n0) are evaluated.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.constants import hbar
from scipy.linalg import expm

from src.core import lindblad, model
from src.core.errors import ConvergenceError, InvalidParameterError
from src.core.lambdicke import RateMatrix
from src.core.model import CoolingScheme
from src.utils.config.settings import settings
from src.utils.resources.logger import logger

# (initial populations, K, dt) -> array (K + 1, N) of populations at t = k dt
Propagator = Callable[[np.ndarray, int, float], np.ndarray]


@dataclass
class DynamicalMapSeries:
    dt: float
    maps: np.ndarray  # (K, N, N); maps[k-1] = E_k

    def __post_init__(self) -> None:
        self.maps = np.asarray(self.maps, dtype=float)
        if self.maps.ndim != 3 or self.maps.shape[1] != self.maps.shape[2]:
            raise InvalidParameterError("maps must have shape (K, N, N)", {"shape": self.maps.shape})
        if self.dt <= 0:
            raise InvalidParameterError("dt must be positive", {"dt": self.dt})

    @property
    def steps(self) -> int:
        return self.maps.shape[0]

    @property
    def dimension(self) -> int:
        return self.maps.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def map_at(self, k: int) -> np.ndarray:
        return np.eye(self.dimension) if k == 0 else self.maps[k - 1]

    def evolve(self, p0: np.ndarray) -> np.ndarray:
        """Populations at every grid time, including t = 0."""
        p0 = np.asarray(p0, dtype=float)
        return np.vstack([p0, np.einsum("kij,j->ki", self.maps, p0)])

    def nbar(self, p0: np.ndarray) -> np.ndarray:
        return self.evolve(p0) @ np.arange(self.dimension)

    def column_error(self) -> float:
        return float(np.max(np.abs(self.maps.sum(axis=1) - 1.0)))

    def save(self, path: Path) -> None:
        header = {"format": "eitcool-maps", "steps": self.steps, "dim": self.dimension, "dt": self.dt, "dtype": "float64"}
        with open(Path(path), "wb") as f:
            f.write((json.dumps(header) + "\n").encode("utf-8"))
            f.write(np.ascontiguousarray(self.maps, dtype=np.float64).tobytes())

    @classmethod
    def load(cls, path: Path) -> "DynamicalMapSeries":
        with open(Path(path), "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            if header.get("format") != "eitcool-maps":
                raise InvalidParameterError("Not a map-series checkpoint", {"path": str(path)})
            data = np.frombuffer(f.read(), dtype=np.float64)
        k, n = int(header["steps"]), int(header["dim"])
        if data.size != k * n * n:
            raise InvalidParameterError("Checkpoint size mismatch", {"expected": k * n * n, "found": data.size})
        return cls(float(header["dt"]), data.reshape(k, n, n).copy())


@dataclass
class TransferTensors:
    tensors: np.ndarray  # (K, N, N); tensors[k-1] = T_k

    @property
    def memory(self) -> int:
        return self.tensors.shape[0]

    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(t, 2) for t in self.tensors])


@dataclass
class ThermoResponse:
    t: np.ndarray
    nbar0: float
    var_dH: np.ndarray
    var_h: np.ndarray
    capacitance: np.ndarray
    conductance: np.ndarray
    rate: np.ndarray
    undefined: List[int] = field(default_factory=list)


# --- propagators --------------------------------------------------------------------


def rate_equation_propagator(matrix: RateMatrix) -> Propagator:
    def propagate(p0: np.ndarray, steps: int, dt: float) -> np.ndarray:
        step = expm(matrix.entries * dt)
        out = [np.asarray(p0, dtype=float)]
        for _ in range(steps):
            out.append(step @ out[-1])
        return np.array(out)

    return propagate


def master_equation_propagator(
    scheme: CoolingScheme, fock_dim: int, electronic: Optional[np.ndarray] = None, method: str = "rk"
) -> Propagator:
    """Each column starts from the electronic state (default |S+>) times the Fock populations."""
    ops = model.build_operators(scheme, fock_dim)
    el = model.ket("S+") if electronic is None else electronic

    def propagate(p0: np.ndarray, steps: int, dt: float) -> np.ndarray:
        state = lindblad.QuantumState(model.full_state(el, np.asarray(p0, dtype=float)), 0.0, fock_dim)
        trajectory = lindblad.propagate(state, ops, steps * dt, samples=steps, method=method)  # type: ignore[arg-type]
        return np.array([f.populations for f in trajectory.fock_populations])

    return propagate


# --- maps and tensors -----------------------------------------------------------------


def extract_maps(
    propagator: Propagator,
    dimension: int,
    dt: float,
    steps: Optional[int] = None,
    basis: Optional[Sequence[int]] = None,
    workers: int = 1,
    normalization_tol: float = 1e-8,
) -> DynamicalMapSeries:
    """Column n of E_k is the population vector at k dt when starting from Fock state |n>."""
    cfg = settings.get("engines.ttm", {})
    steps = steps if steps is not None else int(cfg.get("steps", 200))
    basis = list(range(dimension)) if basis is None else list(basis)
    if sorted(basis) != list(range(dimension)):
        raise InvalidParameterError("basis must cover every Fock state 0..N-1", {"basis": basis})
    logger.info("extracting dynamical maps", dimension=dimension, steps=steps, dt=dt, workers=workers)

    def column(n: int) -> np.ndarray:
        p0 = np.zeros(dimension)
        p0[n] = 1.0
        return propagator(p0, steps, dt)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            columns = list(pool.map(column, basis))
    else:
        columns = [column(n) for n in basis]

    maps = np.zeros((steps, dimension, dimension))
    for n, series in zip(basis, columns):
        maps[:, :, n] = series[1:]
    result = DynamicalMapSeries(dt, maps)
    error = result.column_error()
    if error > normalization_tol:
        logger.error("dynamical maps are not trace preserving", column_error=error)
        raise ConvergenceError("Map columns are not normalized", {"column_error": error, "tolerance": normalization_tol})
    return result


def transfer_tensors(maps: DynamicalMapSeries) -> TransferTensors:
    if maps.steps < 2:
        raise InvalidParameterError("At least two maps are needed", {"steps": maps.steps})
    tensors = np.zeros_like(maps.maps)
    for k in range(1, maps.steps + 1):
        acc = maps.map_at(k).copy()
        for m in range(1, k):
            acc -= tensors[m - 1] @ maps.map_at(k - m)
        tensors[k - 1] = acc
    return TransferTensors(tensors)


def reconstruction_error(tensors: TransferTensors, maps: DynamicalMapSeries) -> float:
    worst = 0.0
    for k in range(1, maps.steps + 1):
        rebuilt = sum(tensors.tensors[m - 1] @ maps.map_at(k - m) for m in range(1, k + 1))
        worst = max(worst, float(np.max(np.abs(maps.map_at(k) - rebuilt))))
    return worst


def extrapolate(tensors: TransferTensors, maps: DynamicalMapSeries, horizon: int, growth_tol: float = 1e-3) -> DynamicalMapSeries:
    """Extend the series to `horizon` steps with E_k = sum_{m=1}^{K} T_m E_{k-m}."""
    memory = tensors.memory
    if horizon <= maps.steps:
        return DynamicalMapSeries(maps.dt, maps.maps[:horizon].copy())
    series = [maps.map_at(k) for k in range(maps.steps + 1)]
    for k in range(maps.steps + 1, horizon + 1):
        nxt = np.zeros_like(series[0])
        for m in range(1, min(memory, k) + 1):
            nxt += tensors.tensors[m - 1] @ series[k - m]
        norm = float(np.max(np.abs(nxt).sum(axis=0)))
        if norm > 1.0 + growth_tol:
            logger.error("transfer-tensor extrapolation unstable", step=k, norm=norm)
            raise ConvergenceError("Map norm grew during extrapolation; use a longer memory K", {"step": k, "norm": norm})
        series.append(nxt)
    return DynamicalMapSeries(maps.dt, np.array(series[1:]))


# --- generalized rate -------------------------------------------------------------------


def _thermal_weights(nbar0: float, dimension: int) -> tuple:
    """p_m(T) and the direction of d p_m / dT (up to the positive factor k_B beta^2 hbar nu)."""
    m = np.arange(dimension, dtype=float)
    if nbar0 <= 0:
        p = (m == 0).astype(float)
        # limit of (m - nbar) p_m / nbar as nbar -> 0
        direction = (m == 1).astype(float) - (m == 0).astype(float)
        return p, direction
    p = model.thermal_distribution(nbar0, dimension)
    mean = float(m @ p)
    return p, (m - mean) * p / nbar0


def generalized_rate(maps: DynamicalMapSeries, nbar0: float, nu: Optional[float] = None) -> ThermoResponse:
    """
    Variances (in units of (hbar nu)^2, or J^2 when nu is given):

        <(dH)^2>(t) = sum_m sum_n (n - m)^2 E_{n,m}(t) p_m
        <H^2>(t)    = sum_m sum_n n^2 E_{n,m}(t) p_m

    C(t) is the temperature derivative of <H>(t); for thermal p_m it equals
    (k_B beta^2 / 2)[<H^2>(0) + <H^2>(t) - 2<H>(0)<H>(t) - <(dH)^2>(t)].
    The beta-dependent prefactor is dropped since only kappa / C is reported,
    and kappa(t) = -dC/dt is taken by centered differences on the grid.
    """
    n = maps.dimension
    levels = np.arange(n, dtype=float)
    p, direction = _thermal_weights(nbar0, n)
    all_maps = np.concatenate([np.eye(n)[None], maps.maps])
    jump_sq = (levels[:, None] - levels[None, :]) ** 2
    var_dh = np.einsum("kij,ij,j->k", all_maps, jump_sq, p)
    var_h = np.einsum("kij,i,j->k", all_maps, levels**2, p)
    capacitance = np.einsum("kij,i,j->k", all_maps, levels, direction)
    conductance = -np.gradient(capacitance, maps.dt, edge_order=2)
    scale = max(float(np.max(np.abs(capacitance))), 1e-300)
    undefined = [int(k) for k in np.flatnonzero(np.abs(capacitance) <= 1e-12 * scale)]
    sign_flips = np.flatnonzero(np.sign(capacitance[:-1]) * np.sign(capacitance[1:]) < 0)
    undefined = sorted(set(undefined) | {int(k) for k in sign_flips} | {int(k) + 1 for k in sign_flips})
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = conductance / capacitance
    rate[undefined] = np.nan
    if undefined:
        logger.warning("capacitance crosses zero; rate undefined", points=len(undefined), nbar0=nbar0)
    if nu is not None:
        # variances in J^2
        quantum = (hbar * nu) ** 2
        var_dh, var_h = var_dh * quantum, var_h * quantum
    return ThermoResponse(maps.times, nbar0, var_dh, var_h, capacitance, conductance, rate, undefined)
