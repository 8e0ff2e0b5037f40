# /src/core/model.py
"""
Physical configuration of the cooling schemes and the operators of the
electronic (8 levels) x vibrational (N_fock) master equation.

Basis ordering is part of the public contract:

    electronic: S-, S+, P-, P+, D-3, D-, D+, D+3   (indices 0..7)
    full space: electronic (x) Fock 0..N-1, flat index = level * N + n

All frequencies are angular frequencies (rad/s, or any consistent unit).
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from src.core.errors import InvalidParameterError, PoleError
from src.utils.config.settings import settings
from src.utils.resources.logger import logger

LEVELS: Tuple[str, ...] = ("S-", "S+", "P-", "P+", "D-3", "D-", "D+", "D+3")
LEVEL_INDEX: Dict[str, int] = {name: i for i, name in enumerate(LEVELS)}
N_LEVELS = len(LEVELS)
EXCITED_LEVELS: Tuple[str, ...] = ("P-", "P+")
GROUND_LEVELS: Tuple[str, ...] = tuple(l for l in LEVELS if l not in EXCITED_LEVELS)
S_LEVELS: Tuple[str, ...] = ("S-", "S+")
D_LEVELS: Tuple[str, ...] = ("D-3", "D-", "D+", "D+3")

# gamma = GAMMA_HWHM_FACTOR * Gamma: amplitude decay of the P coherences.
GAMMA_HWHM_FACTOR = 0.5

# mu_B / hbar in rad s^-1 T^-1
BOHR_MAGNETON_OVER_HBAR = 2.0 * np.pi * 13.996245e9

LaserLabel = Literal["pi397", "sigma397", "d866"]
Polarization = Literal["pi", "sigma+", "sigma-", "sigma+-"]
ModeLabel = Literal["axial", "radial1", "radial2"]

# (ground, excited, Clebsch-Gordan weight) for each beam.
LASER_COUPLINGS: Dict[str, Tuple[Tuple[str, str, float], ...]] = {
    "pi397": (("S-", "P-", 1.0), ("S+", "P+", 1.0)),
    "sigma397": (("S-", "P+", 1.0),),
    "d866": (
        ("D-3", "P-", np.sqrt(3.0)),
        ("D-", "P+", 1.0),
        ("D+", "P-", 1.0),
        ("D+3", "P+", np.sqrt(3.0)),
    ),
}

# Squared Clebsch-Gordan coefficients of the decay channels, per manifold.
DECAY_WEIGHTS_S: Dict[str, Dict[str, float]] = {
    "P+": {"S+": 1.0 / 3.0, "S-": 2.0 / 3.0},
    "P-": {"S-": 1.0 / 3.0, "S+": 2.0 / 3.0},
}
DECAY_WEIGHTS_D: Dict[str, Dict[str, float]] = {
    "P+": {"D+3": 1.0 / 2.0, "D+": 1.0 / 3.0, "D-": 1.0 / 6.0},
    "P-": {"D-3": 1.0 / 2.0, "D-": 1.0 / 3.0, "D+": 1.0 / 6.0},
}

DEFAULT_POLARIZATION: Dict[str, str] = {"pi397": "pi", "sigma397": "sigma+", "d866": "sigma+-"}


@dataclass(frozen=True)
class LaserDrive:
    label: LaserLabel
    rabi_frequency: float
    detuning: float = 0.0
    lamb_dicke_axial: float = 0.0
    lamb_dicke_radial: float = 0.0
    polarization: Optional[Polarization] = None

    def __post_init__(self) -> None:
        if self.label not in LASER_COUPLINGS:
            raise InvalidParameterError(f"Unknown laser label '{self.label}'", {"known": sorted(LASER_COUPLINGS)})
        if self.rabi_frequency < 0:
            raise InvalidParameterError("Rabi frequency must be non-negative", {"label": self.label})
        if self.lamb_dicke_axial < 0 or self.lamb_dicke_radial < 0:
            raise InvalidParameterError("Lamb-Dicke parameters must be non-negative", {"label": self.label})
        if not (np.isfinite(self.rabi_frequency) and np.isfinite(self.detuning)):
            raise InvalidParameterError("Laser frequencies must be finite", {"label": self.label})
        if self.polarization is None:
            object.__setattr__(self, "polarization", DEFAULT_POLARIZATION[self.label])

    def eta(self, mode: "TrapMode") -> float:
        return self.lamb_dicke_axial if mode.is_axial else self.lamb_dicke_radial


@dataclass(frozen=True)
class ZeemanField:
    field_strength: float = 0.0
    bohr_magneton_over_hbar: float = BOHR_MAGNETON_OVER_HBAR

    @property
    def zeeman_unit(self) -> float:
        return self.bohr_magneton_over_hbar * abs(self.field_strength)

    @property
    def delta_s(self) -> float:
        # ground-state Zeeman splitting |S+> - |S->
        return 2.0 * self.zeeman_unit

    @classmethod
    def from_delta_s(cls, delta_s: float) -> "ZeemanField":
        if delta_s < 0:
            raise InvalidParameterError("delta_s must be non-negative", {"delta_s": delta_s})
        return cls(field_strength=delta_s / (2.0 * BOHR_MAGNETON_OVER_HBAR))


@dataclass(frozen=True)
class TrapMode:
    label: ModeLabel
    frequency: float
    background_heating: float = 0.0

    def __post_init__(self) -> None:
        if self.frequency <= 0:
            raise InvalidParameterError("Trap frequency must be positive", {"label": self.label})
        if self.background_heating < 0:
            raise InvalidParameterError("Background heating must be non-negative", {"label": self.label})

    @property
    def is_axial(self) -> bool:
        return self.label == "axial"

    @classmethod
    def preset(cls, label: ModeLabel, with_heating: bool = False) -> "TrapMode":
        cfg = settings.get(f"physics.modes.{label}")
        if cfg is None:
            raise InvalidParameterError(f"No preset for mode '{label}'")
        heating = float(cfg.get("background_heating", 0.0)) if with_heating else 0.0
        return cls(label=label, frequency=2.0 * np.pi * float(cfg["frequency_hz"]), background_heating=heating)


def raman_detunings(delta: float, delta_s: float) -> Dict[str, float]:
    """
    Laser detunings that put S-, S+ and D+ on two-photon resonance.

    Relative to the common ground energy the levels then sit at
    P+: -delta - delta_s/3, P-: -delta + delta_s/3, D+3: -3 delta_s/5,
    D-: -7 delta_s/5, D-3: -4 delta_s/5 (with delta_s = 2 mu_B B).
    """
    return {"pi397": delta, "sigma397": delta + delta_s, "d866": delta - 0.7 * delta_s}


@dataclass(frozen=True)
class CoolingScheme:
    lasers: Tuple[LaserDrive, ...]
    mode: TrapMode
    zeeman: ZeemanField = field(default_factory=ZeemanField)
    gamma_total: float = 2.0 * np.pi * 20.7e6
    branch_s: float = 0.935
    branch_d: float = 0.065
    delta: float = 0.0
    spurious_pi: bool = True
    emission_eta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lasers", tuple(self.lasers))
        if self.gamma_total <= 0:
            raise InvalidParameterError("Gamma must be positive")
        if not (0.0 < self.branch_s <= 1.0) or not (0.0 <= self.branch_d < 1.0):
            raise InvalidParameterError("Branching fractions out of range", {"branch_s": self.branch_s, "branch_d": self.branch_d})
        if abs(self.branch_s + self.branch_d - 1.0) > 1e-12:
            raise InvalidParameterError("branch_s + branch_d must equal 1", {"branch_s": self.branch_s, "branch_d": self.branch_d})
        labels = [l.label for l in self.lasers]
        if len(set(labels)) != len(labels):
            raise InvalidParameterError("Each laser label may appear once", {"labels": labels})

    @property
    def gamma(self) -> float:
        return GAMMA_HWHM_FACTOR * self.gamma_total

    @property
    def delta_s(self) -> float:
        return self.zeeman.delta_s

    @property
    def p_plus_detuning(self) -> float:
        """Detuning of the virtual level below |P+> in the dark-state frame."""
        return self.delta + self.delta_s / 3.0

    def laser(self, label: str) -> Optional[LaserDrive]:
        for laser in self.lasers:
            if laser.label == label:
                return laser
        return None

    def rabi(self, label: str) -> float:
        laser = self.laser(label)
        return laser.rabi_frequency if laser else 0.0

    def eta(self, label: str) -> float:
        laser = self.laser(label)
        return laser.eta(self.mode) if laser else 0.0

    def with_mode(self, mode: TrapMode) -> "CoolingScheme":
        return replace(self, mode=mode)

    def with_laser(self, label: str, **changes: float) -> "CoolingScheme":
        current = self.laser(label)
        if current is None:
            new = LaserDrive(label=label, **changes)  # type: ignore[arg-type]
            return replace(self, lasers=self.lasers + (new,))
        lasers = tuple(replace(l, **changes) if l.label == label else l for l in self.lasers)
        return replace(self, lasers=lasers)

    @classmethod
    def single_eit(
        cls,
        mode: TrapMode,
        delta: float,
        rabi_pi: float,
        rabi_sigma: float,
        eta_pi: Tuple[float, float] = (0.0, 0.0),
        eta_sigma: Tuple[float, float] = (0.0, 0.0),
        delta_s: float = 0.0,
        repump_rabi: float = 0.0,
        repump_detuning: float = 0.0,
        **kwargs: float,
    ) -> "CoolingScheme":
        """pi/sigma Raman pair on |S->,|S+> -> |P+>; eta tuples are (axial, radial)."""
        det = raman_detunings(delta, delta_s)
        lasers = [
            LaserDrive("pi397", rabi_pi, det["pi397"], *eta_pi),
            LaserDrive("sigma397", rabi_sigma, det["sigma397"], *eta_sigma),
        ]
        if repump_rabi > 0:
            lasers.append(LaserDrive("d866", repump_rabi, repump_detuning))
        return cls(lasers=tuple(lasers), mode=mode, zeeman=ZeemanField.from_delta_s(delta_s), delta=delta, **kwargs)  # type: ignore[arg-type]

    @classmethod
    def double_eit(
        cls,
        mode: TrapMode,
        delta: float,
        rabi_pi: float,
        rabi_sigma: float,
        rabi_d: float,
        delta_s: float,
        eta_pi: Tuple[float, float] = (0.0, 0.0),
        eta_sigma: Tuple[float, float] = (0.0, 0.0),
        eta_d: Tuple[float, float] = (0.0, 0.0),
        **kwargs: float,
    ) -> "CoolingScheme":
        det = raman_detunings(delta, delta_s)
        lasers = (
            LaserDrive("pi397", rabi_pi, det["pi397"], *eta_pi),
            LaserDrive("sigma397", rabi_sigma, det["sigma397"], *eta_sigma),
            LaserDrive("d866", rabi_d, det["d866"], *eta_d),
        )
        return cls(lasers=lasers, mode=mode, zeeman=ZeemanField.from_delta_s(delta_s), delta=delta, **kwargs)  # type: ignore[arg-type]


@dataclass(frozen=True)
class OperatorSet:
    hamiltonian: np.ndarray
    collapse_ops: Tuple[np.ndarray, ...]
    fock_dim: int
    number_op: np.ndarray
    excited_projector: np.ndarray

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @staticmethod
    def displacement(eta: float, fock_dim: int) -> np.ndarray:
        return displacement(eta, fock_dim)


# --- elementary operators -----------------------------------------------------


def annihilation(fock_dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, fock_dim, dtype=float)), k=1).astype(complex)


def displacement(eta: float, fock_dim: int) -> np.ndarray:
    """exp(i eta (b + b^dagger)) by exact exponential of the truncated generator."""
    if fock_dim < 1:
        raise InvalidParameterError("fock_dim must be positive", {"fock_dim": fock_dim})
    b = annihilation(fock_dim)
    return expm(1j * eta * (b + b.conj().T))


def transition(ground: str, excited: str) -> np.ndarray:
    """Electronic |ground><excited|."""
    op = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    op[LEVEL_INDEX[ground], LEVEL_INDEX[excited]] = 1.0
    return op


def ket(level: str) -> np.ndarray:
    v = np.zeros(N_LEVELS, dtype=complex)
    v[LEVEL_INDEX[level]] = 1.0
    return v


def level_energies(scheme: CoolingScheme) -> np.ndarray:
    """Diagonal of the laser-frame Hamiltonian (detuning and Zeeman terms)."""
    d_pi = scheme.laser("pi397").detuning if scheme.laser("pi397") else 0.0
    d_sigma = scheme.laser("sigma397").detuning if scheme.laser("sigma397") else 0.0
    d_d = scheme.laser("d866").detuning if scheme.laser("d866") else 0.0
    z = scheme.zeeman.zeeman_unit
    e = {
        "S-": d_sigma - z,
        "S+": d_pi + z,
        "P-": -d_pi + d_sigma - z / 3.0,
        "P+": z / 3.0,
        "D-3": -d_pi + d_sigma + d_d - 6.0 * z / 5.0,
        "D-": d_d - 2.0 * z / 5.0,
        "D+": -d_pi + d_sigma + d_d + 2.0 * z / 5.0,
        "D+3": d_d + 6.0 * z / 5.0,
    }
    return np.array([e[l] for l in LEVELS], dtype=float)


def _couplings(scheme: CoolingScheme) -> List[Tuple[str, str, float, float]]:
    """(ground, excited, Omega * weight / 2, eta) for every active dipole coupling."""
    out = []
    for laser in scheme.lasers:
        if laser.rabi_frequency == 0.0:
            continue
        for ground, excited, weight in LASER_COUPLINGS[laser.label]:
            if laser.label == "pi397" and ground == "S-" and not scheme.spurious_pi:
                continue
            out.append((ground, excited, 0.5 * laser.rabi_frequency * weight, laser.eta(scheme.mode)))
    return out


def electronic_hamiltonian(scheme: CoolingScheme) -> np.ndarray:
    """Zeroth Lamb-Dicke order (eta = 0) electronic Hamiltonian, 8 x 8."""
    h = np.diag(level_energies(scheme)).astype(complex)
    for ground, excited, amp, _ in _couplings(scheme):
        op = transition(ground, excited)
        h += amp * (op + op.conj().T)
    return h


def cooling_operator(scheme: CoolingScheme) -> np.ndarray:
    """Electronic part of the first-order Lamb-Dicke term of H for the scheme's mode."""
    sigma = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
    for ground, excited, amp, eta in _couplings(scheme):
        op = transition(ground, excited)
        sigma += amp * eta * (1j * op - 1j * op.conj().T)
    return sigma


def build_hamiltonian(scheme: CoolingScheme, fock_dim: int) -> np.ndarray:
    if fock_dim < 2:
        raise InvalidParameterError("fock_dim must be at least 2", {"fock_dim": fock_dim})
    b = annihilation(fock_dim)
    eye_f = np.eye(fock_dim)
    h = np.kron(np.eye(N_LEVELS), scheme.mode.frequency * (b.conj().T @ b))
    h = h + np.kron(np.diag(level_energies(scheme)), eye_f)
    cache: Dict[float, np.ndarray] = {}
    for ground, excited, amp, eta in _couplings(scheme):
        if eta not in cache:
            cache[eta] = displacement(eta, fock_dim)
        term = amp * np.kron(transition(ground, excited), cache[eta])
        h = h + term + term.conj().T
    return h


def decay_rates(scheme: CoolingScheme) -> List[Tuple[str, str, float]]:
    """(excited, ground, Gamma_j); for each excited level the rates sum to Gamma."""
    rates = []
    for excited in EXCITED_LEVELS:
        for ground, w in DECAY_WEIGHTS_S[excited].items():
            rates.append((excited, ground, scheme.gamma_total * scheme.branch_s * w))
        for ground, w in DECAY_WEIGHTS_D[excited].items():
            rates.append((excited, ground, scheme.gamma_total * scheme.branch_d * w))
    return [r for r in rates if r[2] > 0.0]


def electronic_collapse_ops(scheme: CoolingScheme) -> List[np.ndarray]:
    return [np.sqrt(rate) * transition(ground, excited) for excited, ground, rate in decay_rates(scheme)]


def build_collapse_ops(scheme: CoolingScheme, fock_dim: int, include_heating: bool = False) -> List[np.ndarray]:
    """
    Collapse operators sqrt(Gamma_j) |g><e| (x) 1, in the standard Lindblad form
    Gamma_j (L rho L^+ - {L^+ L, rho}/2). Emission recoil is not applied.
    With include_heating, the pair sqrt(h) b, sqrt(h) b^+ adds a constant
    d nbar / dt = h (h = mode.background_heating).
    """
    eye_f = np.eye(fock_dim)
    ops = [np.kron(op, eye_f) for op in electronic_collapse_ops(scheme)]
    h = scheme.mode.background_heating
    if include_heating and h > 0:
        b = annihilation(fock_dim)
        ops.append(np.sqrt(h) * np.kron(np.eye(N_LEVELS), b))
        ops.append(np.sqrt(h) * np.kron(np.eye(N_LEVELS), b.conj().T))
    return ops


def build_operators(scheme: CoolingScheme, fock_dim: Optional[int] = None, include_heating: bool = False) -> OperatorSet:
    fock_dim = fock_dim or int(settings.get("engines.fock_dim", 17))
    logger.debug("building operators", fock_dim=fock_dim, mode=scheme.mode.label, lasers=[l.label for l in scheme.lasers])
    b = annihilation(fock_dim)
    p_proj = np.zeros(N_LEVELS)
    for level in EXCITED_LEVELS:
        p_proj[LEVEL_INDEX[level]] = 1.0
    ops = OperatorSet(
        hamiltonian=build_hamiltonian(scheme, fock_dim),
        collapse_ops=tuple(build_collapse_ops(scheme, fock_dim, include_heating)),
        fock_dim=fock_dim,
        number_op=np.kron(np.eye(N_LEVELS), b.conj().T @ b),
        excited_projector=np.kron(np.diag(p_proj), np.eye(fock_dim)).astype(complex),
    )
    for arr in (ops.hamiltonian, *ops.collapse_ops):
        arr.setflags(write=False)
    return ops


# --- dark states ----------------------------------------------------------------


def dark_state_single(rabi_pi: float, rabi_sigma: float) -> np.ndarray:
    """|-> = (Omega_pi |S-> - Omega_sigma |S+>) / Omega."""
    omega = np.hypot(rabi_pi, rabi_sigma)
    if omega == 0.0:
        raise InvalidParameterError("Dark state undefined when both Rabi frequencies vanish")
    return (rabi_pi * ket("S-") - rabi_sigma * ket("S+")) / omega


def omega_minus_sq(rabi_pi: float, rabi_sigma: float, rabi_d: float) -> float:
    """Omega_-^2 = sqrt(Omega_D^2 Omega_sigma^2 + Omega_D^2 Omega_pi^2 + Omega_pi^4)."""
    return float(np.sqrt(rabi_d**2 * rabi_sigma**2 + rabi_d**2 * rabi_pi**2 + rabi_pi**4))


def dark_state_deit(rabi_pi: float, rabi_sigma: float, rabi_d: float) -> np.ndarray:
    norm = omega_minus_sq(rabi_pi, rabi_sigma, rabi_d)
    if norm == 0.0:
        raise InvalidParameterError("D-EIT dark state undefined for vanishing couplings")
    return (rabi_d * rabi_sigma * ket("S+") - rabi_d * rabi_pi * ket("S-") + rabi_pi**2 * ket("D+")) / norm


def lamb_dicke_coupling_state(scheme: CoolingScheme) -> np.ndarray:
    """|E> with sigma_eta |~> = -i |E> (unnormalized)."""
    o_pi, o_sigma, o_d = scheme.rabi("pi397"), scheme.rabi("sigma397"), scheme.rabi("d866")
    norm = omega_minus_sq(o_pi, o_sigma, o_d)
    if norm == 0.0:
        raise InvalidParameterError("D-EIT configuration required for |E>")
    e_pi, e_sigma, e_d = scheme.eta("pi397"), scheme.eta("sigma397"), scheme.eta("d866")
    pref = o_pi * o_d / (2.0 * norm)
    return pref * (o_sigma * (e_pi - e_sigma) * ket("P+") + o_pi * (e_d - e_pi) * ket("P-"))


# --- effective blocks -----------------------------------------------------------


@dataclass(frozen=True)
class EffectiveBlocks:
    excited: Tuple[str, ...]
    ground: Tuple[str, ...]
    h_ee: np.ndarray
    h_eg: np.ndarray
    h_gg: np.ndarray

    def resolvent_matrix(self, omega: float) -> np.ndarray:
        """omega + H_EE - H_EG (omega + H_GG)^-1 H_GE on the excited block."""
        denominators = omega + np.real(np.diag(self.h_gg))
        coupled = np.any(np.abs(self.h_eg) > 0, axis=0)
        gamma = -float(np.imag(self.h_ee[0, 0]))
        tol = float(settings.get("engines.pole_tolerance", 1e-6)) * max(gamma, 1e-300)
        close = coupled & (np.abs(denominators) <= tol)
        if np.any(close):
            levels = [self.ground[i] for i in np.flatnonzero(close)]
            raise PoleError("Resolvent evaluated at a ground-level pole", {"omega": omega, "levels": levels})
        inverse = np.zeros_like(denominators)
        inverse[coupled] = 1.0 / denominators[coupled]
        return omega * np.eye(len(self.excited)) + self.h_ee - self.h_eg @ np.diag(inverse) @ self.h_eg.conj().T


def effective_blocks(scheme: CoolingScheme, reference: str = "S+") -> EffectiveBlocks:
    """
    Blocks of H_eff = H - i gamma (|P+><P+| + |P-><P-|) at eta = 0, with energies
    measured from the `reference` level (the dark-state energy at Raman resonance).
    """
    h = electronic_hamiltonian(scheme) - level_energies(scheme)[LEVEL_INDEX[reference]] * np.eye(N_LEVELS)
    exc = [LEVEL_INDEX[l] for l in EXCITED_LEVELS]
    gnd = [LEVEL_INDEX[l] for l in GROUND_LEVELS]
    h_ee = h[np.ix_(exc, exc)] - 1j * scheme.gamma * np.eye(len(exc))
    return EffectiveBlocks(
        excited=EXCITED_LEVELS,
        ground=GROUND_LEVELS,
        h_ee=h_ee,
        h_eg=h[np.ix_(exc, gnd)],
        h_gg=h[np.ix_(gnd, gnd)],
    )


def full_state(electronic: np.ndarray, fock: np.ndarray) -> np.ndarray:
    """Tensor product of an electronic and a vibrational density matrix (or kets)."""
    if electronic.ndim == 1:
        electronic = np.outer(electronic, electronic.conj())
    if fock.ndim == 1:
        fock = np.diag(fock)
    return np.kron(electronic, fock).astype(complex)


def thermal_distribution(nbar: float, fock_dim: int) -> np.ndarray:
    """Thermal Fock populations truncated and renormalized to fock_dim states."""
    if nbar < 0:
        raise InvalidParameterError("nbar must be non-negative", {"nbar": nbar})
    n = np.arange(fock_dim)
    if nbar == 0:
        p = (n == 0).astype(float)
    else:
        q = nbar / (nbar + 1.0)
        p = (1.0 - q) * q**n
    return p / p.sum()


@dataclass(frozen=True)
class FockDistribution:
    """Vibrational populations p_0 .. p_{N-1}."""

    populations: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.populations, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InvalidParameterError("Fock populations must be a non-empty vector")
        object.__setattr__(self, "populations", p)

    @property
    def nbar(self) -> float:
        return float(np.arange(self.populations.size) @ self.populations)

    @property
    def total(self) -> float:
        return float(self.populations.sum())

    @property
    def top_population(self) -> float:
        return float(self.populations[-1])

    @classmethod
    def thermal(cls, nbar: float, fock_dim: int) -> "FockDistribution":
        return cls(thermal_distribution(nbar, fock_dim))
