# /src/core/lambdicke.py
"""
Lamb-Dicke cooling theory: absorption spectra S(omega) of the dark-state
schemes, heating/cooling rates A+ / A-, the birth-death rate equation for the
Fock populations and the closed-form optimal rates.

Sign conventions: S(omega) = -i <E|(omega + H_eff)^-1|E>, so the bright
resonance that removes a phonon sits at omega = -nu and

    A+ = 2 Re S(+nu) + 2 D      (heating, n -> n+1)
    A- = 2 Re S(-nu) + 2 D      (cooling, n -> n-1)
"""

from dataclasses import dataclass
from typing import Callable, Dict, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.constants import Boltzmann, hbar
from scipy.linalg import expm, lstsq, null_space, solve

from src.core import lindblad, model
from src.core.errors import InvalidParameterError, PhysicsError, PoleError, SingularSolveError
from src.core.model import CoolingScheme, FockDistribution
from src.utils.config.settings import settings
from src.utils.resources.logger import logger

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class SpectralResponse:
    omega: float
    s_value: complex
    a_value: complex
    b_value: complex
    det_value: complex

    @property
    def real(self) -> float:
        return float(self.s_value.real)


@dataclass(frozen=True)
class RateModel:
    a_plus: float
    a_minus: float
    diffusion: float = 0.0
    nu: Optional[float] = None

    def __post_init__(self) -> None:
        if self.a_plus < 0 or self.a_minus < 0:
            raise InvalidParameterError("A+ and A- must be non-negative", {"a_plus": self.a_plus, "a_minus": self.a_minus})

    @property
    def cooling_rate(self) -> float:
        return self.a_minus - self.a_plus

    @property
    def cools(self) -> bool:
        return self.a_minus > self.a_plus

    @property
    def n_ss(self) -> float:
        if not self.cools:
            return float("inf")
        return self.a_plus / (self.a_minus - self.a_plus)

    @property
    def p0_ss(self) -> float:
        if not self.cools:
            return 0.0
        return (self.a_minus - self.a_plus) / self.a_minus

    @property
    def t_ss_temperature(self) -> float:
        """Steady-state temperature in kelvin (hbar nu / k_B ln(A-/A+))."""
        if self.nu is None:
            raise InvalidParameterError("Mode frequency required for the temperature")
        if not self.cools:
            return float("inf")
        if self.a_plus == 0:
            return 0.0
        return hbar * self.nu / (Boltzmann * np.log(self.a_minus / self.a_plus))

    def thermal_populations(self, n_max: int) -> np.ndarray:
        """Geometric p_n = p0 (A+/A-)^n, n = 0..n_max (not renormalized)."""
        if not self.cools:
            raise InvalidParameterError("No steady state when A- <= A+")
        return self.p0_ss * (self.a_plus / self.a_minus) ** np.arange(n_max + 1)

    def nbar(self, n0: float, t: ArrayLike) -> ArrayLike:
        """(n0 - n_ss) exp(-R t) + n_ss."""
        return (n0 - self.n_ss) * np.exp(-self.cooling_rate * np.asarray(t)) + self.n_ss

    def with_heating(self, rate: float) -> "RateModel":
        # the b, b^+ pair adds h to both transition rates; dn/dt gains +h
        return RateModel(self.a_plus + rate, self.a_minus + rate, self.diffusion, self.nu)


@dataclass(frozen=True)
class RateMatrix:
    entries: np.ndarray
    a_plus: float
    a_minus: float
    boundary: str = "reflecting"

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    @property
    def n_max(self) -> int:
        return self.dimension - 1

    def steady_state(self) -> np.ndarray:
        kernel = null_space(self.entries)
        if kernel.shape[1] != 1:
            raise PhysicsError("Rate matrix has no unique steady state", {"null_dim": kernel.shape[1]})
        p = np.real(kernel[:, 0])
        return p / p.sum()


# --- diffusion ----------------------------------------------------------------------


def diffusion_coefficient(
    excited_populations: Mapping[str, float],
    effective_lds: Mapping[Tuple[str, str], float],
    scatter_rates: Mapping[Tuple[str, str], float],
) -> float:
    """D = sum_e p_e sum_g eta_eg^2 gamma_eg over the channels present in both maps."""
    for level, p in excited_populations.items():
        if p < 0 or p > 1:
            raise InvalidParameterError("Excited population out of [0, 1]", {"level": level, "p": p})
    if any(r < 0 for r in scatter_rates.values()) or any(e < 0 for e in effective_lds.values()):
        raise InvalidParameterError("Scattering rates and Lamb-Dicke parameters must be non-negative")
    total = 0.0
    for (excited, ground), rate in scatter_rates.items():
        total += excited_populations.get(excited, 0.0) * effective_lds.get((excited, ground), 0.0) ** 2 * rate
    return total


def scheme_diffusion(scheme: CoolingScheme, rho_el: Optional[np.ndarray] = None) -> float:
    """Diffusion of the scheme with every emission channel given scheme.emission_eta."""
    if scheme.emission_eta == 0.0:
        return 0.0
    rho_el = lindblad.steady_state_electronic(scheme) if rho_el is None else rho_el
    rates = {(e, g): r for e, g, r in model.decay_rates(scheme)}
    etas = {key: scheme.emission_eta for key in rates}
    return diffusion_coefficient(lindblad.excited_populations(rho_el), etas, rates)


# --- spectra ------------------------------------------------------------------------


def single_eit_spectrum(
    omega: ArrayLike, delta: float, rabi_pi: float, rabi_sigma: float, gamma: float, eta_pi: float, eta_sigma: float
) -> ArrayLike:
    """Re S(omega) of the Lambda scheme; continuous limit 0 at omega = 0."""
    w = np.asarray(omega, dtype=float)
    rabi_sq = rabi_pi**2 + rabi_sigma**2
    if rabi_sq == 0.0:
        return np.zeros_like(w) if w.ndim else 0.0
    weight = 0.25 * (eta_pi - eta_sigma) ** 2 * (rabi_pi * rabi_sigma) ** 2 / rabi_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        x = w - delta - rabi_sq / (4.0 * w)
        value = weight * gamma / (x**2 + gamma**2)
    value = np.where(w == 0.0, 0.0, value)
    return value if w.ndim else float(value)


def _check_poles(omega: float, poles: Dict[str, float], gamma: float) -> None:
    tol = float(settings.get("engines.pole_tolerance", 1e-6)) * gamma
    for name, pole in poles.items():
        if abs(omega - pole) <= tol:
            raise PoleError(f"Spectrum evaluated at the pole {name}", {"omega": omega, "pole": pole})


def deit_ab(
    omega: float, delta: float, delta_s: float, gamma: float, rabi_pi: float, rabi_sigma: float, rabi_d: float
) -> Tuple[complex, complex]:
    """a(omega) on |P->, b(omega) on |P+>."""
    poles = {}
    if rabi_pi or rabi_sigma or rabi_d:
        poles["omega=0"] = 0.0
    if rabi_d:
        poles["omega=4*delta_s/5"] = 0.8 * delta_s
        poles["omega=3*delta_s/5"] = 0.6 * delta_s
        poles["omega=7*delta_s/5"] = 1.4 * delta_s
    _check_poles(omega, poles, gamma)
    d_sq = rabi_d**2
    a = omega - delta + delta_s / 3.0 + 1j * gamma - (rabi_pi**2 + d_sq) / (4.0 * omega)
    b = omega - delta - delta_s / 3.0 + 1j * gamma - (rabi_pi**2 + rabi_sigma**2) / (4.0 * omega)
    if rabi_d:
        a -= 3.0 * d_sq / (4.0 * omega - 3.2 * delta_s)
        b -= 0.25 * d_sq * (3.0 / (omega - 0.6 * delta_s) + 1.0 / (omega - 1.4 * delta_s))
    return complex(a), complex(b)


def _scheme_ab(omega: float, scheme: CoolingScheme) -> Tuple[complex, complex]:
    return deit_ab(
        omega,
        scheme.delta,
        scheme.delta_s,
        scheme.gamma,
        scheme.rabi("pi397"),
        scheme.rabi("sigma397"),
        scheme.rabi("d866"),
    )


def deit_response(omega: float, scheme: CoolingScheme) -> SpectralResponse:
    """General D-EIT spectrum with the |E> weights of the scheme's mode."""
    o_pi, o_sigma, o_d = scheme.rabi("pi397"), scheme.rabi("sigma397"), scheme.rabi("d866")
    om_sq = model.omega_minus_sq(o_pi, o_sigma, o_d)
    if o_d == 0.0 or om_sq == 0.0:
        raise InvalidParameterError("D-EIT spectrum needs all three beams", {"rabi_d": o_d})
    a, b = _scheme_ab(omega, scheme)
    c_sq = (o_pi * o_sigma) ** 2 / (16.0 * omega**2)
    det = a * b - c_sq
    k = o_pi * o_d / (2.0 * om_sq)
    e_pi = o_pi * (scheme.eta("d866") - scheme.eta("pi397"))
    e_sigma = o_sigma * (scheme.eta("pi397") - scheme.eta("sigma397"))
    w = k**2 * (e_pi**2 * b + e_sigma**2 * a + (o_pi * o_sigma / (2.0 * omega)) * e_pi * e_sigma) / det
    # a, b carry +i gamma (conjugated resolvent): S = -i conj(w)
    s = -1j * np.conj(w)
    return SpectralResponse(omega, complex(s), a, b, complex(det))


def deit_spectrum(omega: float, scheme: CoolingScheme) -> complex:
    return deit_response(omega, scheme).s_value


def radial_spectrum(omega: float, scheme: CoolingScheme) -> float:
    """Re S for a mode seen by the sigma beam only (eta_pi = eta_D = 0)."""
    o_pi, o_sigma, o_d = scheme.rabi("pi397"), scheme.rabi("sigma397"), scheme.rabi("d866")
    om_sq = model.omega_minus_sq(o_pi, o_sigma, o_d)
    a, b = _scheme_ab(omega, scheme)
    c_sq = (o_pi * o_sigma) ** 2 / (16.0 * omega**2)
    pref = 0.25 * scheme.eta("sigma397") ** 2 * (o_pi * o_d * o_sigma) ** 2 / om_sq**2
    return float(-pref * np.imag(1.0 / (b - c_sq / a)))


def axial_spectrum(omega: float, scheme: CoolingScheme) -> float:
    """Re S for eta_sigma = 0 with alpha = (eta_D - eta_pi) / eta_pi."""
    eta_pi = scheme.eta("pi397")
    if eta_pi == 0.0:
        raise InvalidParameterError("Axial form needs eta_pi > 0 (alpha undefined)")
    alpha = (scheme.eta("d866") - eta_pi) / eta_pi
    o_pi, o_sigma, o_d = scheme.rabi("pi397"), scheme.rabi("sigma397"), scheme.rabi("d866")
    om_sq = model.omega_minus_sq(o_pi, o_sigma, o_d)
    a, b = _scheme_ab(omega, scheme)
    det = a * b - (o_pi * o_sigma) ** 2 / (16.0 * omega**2)
    pref = 0.25 * eta_pi**2 * (o_pi * o_d) ** 2 / om_sq**2
    bracket = o_pi**2 * alpha * (alpha * b + o_sigma**2 / (2.0 * omega)) + o_sigma**2 * a
    return float(-pref * np.imag(bracket / det))


def resolvent_spectrum(omega: float, scheme: CoolingScheme) -> complex:
    """-i <E|M(omega)^-1|E> with M assembled from the H_EE, H_EG, H_GG blocks."""
    blocks = model.effective_blocks(scheme)
    m = blocks.resolvent_matrix(omega)
    e_full = model.lamb_dicke_coupling_state(scheme)
    e = np.array([e_full[model.LEVEL_INDEX[l]] for l in blocks.excited])
    return complex(-1j * (e @ solve(m, e)))


def numeric_spectrum(scheme: CoolingScheme, omega: float, rho_ss: Optional[np.ndarray] = None) -> complex:
    """
    Tr[sigma (i omega - L)^-1 (sigma rho_ss)] on the eta = 0 Liouvillian, where
    sigma is the first-order Lamb-Dicke operator of the scheme's mode.
    """
    system = lindblad.electronic_system(scheme)
    rho = lindblad.steady_state_electronic(scheme) if rho_ss is None else rho_ss
    sigma = system.restrict(model.cooling_operator(scheme))
    rho = system.restrict(rho)
    source = (sigma @ rho).reshape(-1)
    op = 1j * omega * np.eye(system.superoperator.shape[0]) - system.superoperator
    cond = float(np.linalg.cond(op))
    if cond < 1e12:
        x = solve(op, source)
    else:
        # at omega = 0 the source is orthogonal to the steady state; any solution gives the same trace
        x, *_ = lstsq(op, source)
        residual = float(np.linalg.norm(op @ x - source))
        if residual > 1e-8 * max(1.0, float(np.linalg.norm(source))):
            logger.error("singular spectrum solve", omega=omega, condition=cond, residual=residual)
            raise SingularSolveError("Resolvent solve is singular", {"omega": omega, "condition": cond})
    d = rho.shape[0]
    return complex(np.trace(sigma @ x.reshape(d, d)))


# --- rates --------------------------------------------------------------------------


def heating_cooling_rates(
    spectrum: Callable[[float], complex], diffusion: float, nu: float
) -> Tuple[float, float]:
    if nu <= 0:
        raise InvalidParameterError("Mode frequency must be positive", {"nu": nu})
    a_plus = 2.0 * float(np.real(spectrum(nu))) + 2.0 * diffusion
    a_minus = 2.0 * float(np.real(spectrum(-nu))) + 2.0 * diffusion
    scale = max(abs(a_plus), abs(a_minus), 1e-300)
    for name, value in (("a_plus", a_plus), ("a_minus", a_minus)):
        if value < -1e-9 * scale:
            raise PhysicsError("Negative transition rate", {name: value, "nu": nu})
    return max(a_plus, 0.0), max(a_minus, 0.0)


def is_deit(scheme: CoolingScheme) -> bool:
    d866 = scheme.laser("d866")
    if d866 is None or d866.rabi_frequency == 0.0:
        return False
    target = model.raman_detunings(scheme.delta, scheme.delta_s)["d866"]
    return abs(d866.detuning - target) <= 1e-9 * max(1.0, abs(target), scheme.gamma)


def rate_model(scheme: CoolingScheme, method: Literal["numeric", "analytic"] = "numeric") -> RateModel:
    """A+ / A- for the scheme's mode, from the regression-theorem solve or the closed forms."""
    nu = scheme.mode.frequency
    if method == "numeric":
        rho = lindblad.steady_state_electronic(scheme)
        diffusion = scheme_diffusion(scheme, rho)

        def spectrum(w: float) -> complex:
            return numeric_spectrum(scheme, w, rho)

    elif is_deit(scheme):
        diffusion = scheme_diffusion(scheme)

        def spectrum(w: float) -> complex:
            return deit_spectrum(w, scheme)

    else:
        diffusion = scheme_diffusion(scheme)

        def spectrum(w: float) -> complex:
            return single_eit_spectrum(
                w,
                scheme.p_plus_detuning,
                scheme.rabi("pi397"),
                scheme.rabi("sigma397"),
                scheme.gamma,
                scheme.eta("pi397"),
                scheme.eta("sigma397"),
            )

    a_plus, a_minus = heating_cooling_rates(spectrum, diffusion, nu)
    result = RateModel(a_plus, a_minus, diffusion, nu)
    logger.info("rate model", mode=scheme.mode.label, method=method, cooling_rate=result.cooling_rate, n_ss=result.n_ss)
    return result


def rate_matrix(a_plus: float, a_minus: float, n_max: Optional[int] = None, boundary: str = "reflecting") -> RateMatrix:
    """
    Tridiagonal generator of dp_j/dt = sum_k A_jk p_k.

    "reflecting" drops the n_max -> n_max+1 loss so every column sums to zero;
    "absorbing" keeps it on the diagonal (probability leaks at the boundary).
    """
    n_max = n_max if n_max is not None else int(settings.get("engines.rate_n_max", 60))
    if n_max < 1:
        raise InvalidParameterError("n_max must be at least 1", {"n_max": n_max})
    if a_plus < 0 or a_minus < 0:
        raise InvalidParameterError("Rates must be non-negative")
    if boundary not in ("reflecting", "absorbing"):
        raise InvalidParameterError("Unknown boundary", {"boundary": boundary})
    n = np.arange(n_max + 1, dtype=float)
    diag = -((n + 1.0) * a_plus + n * a_minus)
    if boundary == "reflecting":
        diag[-1] += (n_max + 1.0) * a_plus
    entries = np.diag(diag) + np.diag(n[1:] * a_minus, k=1) + np.diag(n[1:] * a_plus, k=-1)
    return RateMatrix(entries, a_plus, a_minus, boundary)


def evolve_rate_eq(
    p0: FockDistribution, matrix: RateMatrix, t: float, truncation_threshold: float = 1e-8
) -> FockDistribution:
    p = p0.populations
    if p.size != matrix.dimension:
        raise InvalidParameterError("Distribution and matrix dimensions differ", {"p": p.size, "matrix": matrix.dimension})
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidParameterError("Initial distribution must be normalized", {"total": float(p.sum())})
    result = FockDistribution(expm(matrix.entries * t) @ p)
    top = max(p[-1], result.top_population)
    if top > truncation_threshold:
        logger.warning("truncation_warning", top_population=top, n_max=matrix.n_max, time=t)
    return result


def evolve_nbar(p0: FockDistribution, matrix: RateMatrix, times: Sequence[float]) -> np.ndarray:
    return np.array([evolve_rate_eq(p0, matrix, t).nbar for t in times])


# --- closed forms -------------------------------------------------------------------


@dataclass(frozen=True)
class OptimalRates:
    kind: str
    n_ss: float
    rate: Optional[float] = None
    n_pi: Optional[float] = None
    rate_radial: Optional[float] = None
    rate_axial: Optional[float] = None
    alpha: Optional[float] = None


def optimal_rates(scheme: CoolingScheme) -> OptimalRates:
    gamma = scheme.gamma
    delta = scheme.delta
    lorentz = gamma**2 / (4.0 * delta**2 + gamma**2)
    o_pi, o_sigma = scheme.rabi("pi397"), scheme.rabi("sigma397")
    if not is_deit(scheme):
        rabi_sq = o_pi**2 + o_sigma**2
        if rabi_sq == 0.0:
            raise InvalidParameterError("Both 397 beams are off")
        eta = scheme.eta("pi397") - scheme.eta("sigma397")
        rate = eta**2 / (2.0 * gamma) * (o_pi * o_sigma) ** 2 / rabi_sq
        n_pi = 2.0 * lorentz * o_pi**2 / rabi_sq
        return OptimalRates("single", lorentz + n_pi, rate=rate, n_pi=n_pi)

    o_d = scheme.rabi("d866")
    om4 = model.omega_minus_sq(o_pi, o_sigma, o_d) ** 2
    sigma_laser = scheme.laser("sigma397")
    pi_laser, d_laser = scheme.laser("pi397"), scheme.laser("d866")
    eta_sigma_r = sigma_laser.lamb_dicke_radial if sigma_laser else 0.0
    eta_pi_a = pi_laser.lamb_dicke_axial if pi_laser else 0.0
    eta_d_a = d_laser.lamb_dicke_axial if d_laser else 0.0
    rate_r = eta_sigma_r**2 / (2.0 * gamma) * (o_pi * o_d * o_sigma) ** 2 / om4
    alpha = (eta_d_a - eta_pi_a) / eta_pi_a if eta_pi_a else None
    rate_a = None
    if alpha is not None:
        rate_a = eta_pi_a**2 / (2.0 * gamma) * (o_pi * o_d) ** 2 / om4 * max(o_pi**2 * alpha**2, o_sigma**2)
    return OptimalRates("deit", lorentz, rate_radial=rate_r, rate_axial=rate_a, alpha=alpha)


def bright_state_tuning(delta: float, nu_target: float) -> float:
    """Omega with Omega^2 / 4 Delta = nu_target."""
    if delta <= 0 or nu_target <= 0:
        raise InvalidParameterError("delta and nu_target must be positive", {"delta": delta, "nu": nu_target})
    return float(np.sqrt(4.0 * delta * nu_target))


def exact_bright_tuning(delta: float, nu_target: float) -> float:
    """Omega placing the narrow dressed resonance exactly at -nu_target."""
    if delta <= 0 or nu_target <= 0:
        raise InvalidParameterError("delta and nu_target must be positive", {"delta": delta, "nu": nu_target})
    return float(np.sqrt(4.0 * nu_target * (nu_target + delta)))


def bright_width(delta: float, rabi: float, nu: float, gamma: float) -> float:
    return nu * gamma / (4.0 * float(np.hypot(delta, rabi)))


def stark_from_rabi(delta: float, rabi: float) -> float:
    return rabi**2 / (4.0 * abs(delta))


def rabi_from_stark(delta: float, stark: float) -> float:
    if stark < 0:
        raise InvalidParameterError("Stark shift must be non-negative", {"stark": stark})
    return float(np.sqrt(4.0 * abs(delta) * stark))


def lamb_dicke_rate_bound(nu: float, gamma: float) -> float:
    return nu**2 / (2.0 * gamma)


def lamb_dicke_ratio(scheme: CoolingScheme) -> float:
    """max_i eta_i Omega_i / nu over the scheme's beams."""
    return max((l.eta(scheme.mode) * l.rabi_frequency for l in scheme.lasers), default=0.0) / scheme.mode.frequency


def detuning_scaling_rate(delta: float, gamma: float, eta: float, nu: float) -> float:
    return 2.0 * delta / gamma * eta**2 * nu
