# /src/services/tuning.py

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, root
from scipy.signal import find_peaks

from src.core import lambdicke, lindblad
from src.core.errors import InvalidParameterError, PhysicsError
from src.core.model import CoolingScheme, FockDistribution, TrapMode, raman_detunings
from src.utils.config.settings import settings
from src.utils.resources.logger import logger

# branch absorption index steered by each pump
_BRANCH = {"sigma397": 0, "d866": 1}


def _axial_branch(rabi_d: float, rabi_pi: float, delta: float, delta_s: float, nu: float) -> float:
    """Re a(-nu): zero when the decoupled P- resonance sits at the axial sideband."""
    return (
        -nu
        - delta
        + delta_s / 3.0
        + (rabi_pi**2 + rabi_d**2) / (4.0 * nu)
        + 3.0 * rabi_d**2 / (4.0 * nu + 3.2 * delta_s)
    )


def _radial_rabi(rabi_pi: float, rabi_d: float, delta: float, delta_s: float, nu: float) -> float:
    """Omega_sigma with Re b(-nu) = 0 (b is linear in Omega_sigma^2)."""
    d_term = 0.25 * rabi_d**2 * (3.0 / (nu + 0.6 * delta_s) + 1.0 / (nu + 1.4 * delta_s))
    sigma_sq = 4.0 * nu * (nu + delta + delta_s / 3.0 - d_term) - rabi_pi**2
    if sigma_sq <= 0:
        raise PhysicsError(
            "No sigma Rabi frequency places the P+ bright state at the radial target",
            {"nu": nu, "rabi_d": rabi_d, "required_sq": sigma_sq},
        )
    return float(np.sqrt(sigma_sq))


def _axial_rabi(rabi_pi: float, delta: float, delta_s: float, nu: float) -> float:
    """Omega_D with Re a(-nu) = 0."""
    f0 = _axial_branch(0.0, rabi_pi, delta, delta_s, nu)
    if f0 > 0:
        raise PhysicsError("Probe alone already shifts the P- bright state past the axial target", {"re_a": f0})
    hi = max(rabi_pi, np.sqrt(delta * nu), 1.0)
    scan = []
    while _axial_branch(hi, rabi_pi, delta, delta_s, nu) <= 0:
        scan.append((hi, _axial_branch(hi, rabi_pi, delta, delta_s, nu)))
        hi *= 2.0
        if len(scan) > 200:
            raise PhysicsError("No root of Re a in bracket", {"scan": scan[-5:]})
    return float(brentq(_axial_branch, 0.0, hi, args=(rabi_pi, delta, delta_s, nu), xtol=1e-12 * hi))


def _branches(
    omega: float,
    delta: float,
    delta_s: float,
    gamma: float,
    rabi_pi: float,
    rabi_sigma: float,
    rabi_d: float,
    spurious: bool = True,
) -> Tuple[float, float]:
    """P+ and P- branch absorption, -Im(a / det) and -Im(b / det)."""
    a, b = lambdicke.deit_ab(omega, delta, delta_s, gamma, rabi_pi, rabi_sigma, rabi_d)
    c_sq = (rabi_pi * rabi_sigma) ** 2 / (16.0 * omega**2)
    if not spurious:
        # no S- -> P- probe leg: P- loses the probe shift and the branches decouple
        a, c_sq = a + rabi_pi**2 / (4.0 * omega), 0.0
    det = a * b - c_sq
    return float(-np.imag(a / det)), float(-np.imag(b / det))


def _log_slope(profile: Callable[[float], float], nu: float) -> Tuple[float, float]:
    """nu P'/P and nu^2 P''/P at omega = -nu; a bright maximum gives (0, negative)."""
    h = 1e-4 * nu
    up, mid, down = profile(-nu + h), profile(-nu), profile(-nu - h)
    return nu * (up - down) / (2.0 * h * mid), nu**2 * (up - 2.0 * mid + down) / (h**2 * mid)


def _place_maxima(
    delta: float,
    delta_s: float,
    gamma: float,
    rabi_pi: float,
    targets: Dict[str, float],
    guess: Dict[str, float],
    spurious: bool = True,
    steps: int = 8,
) -> Dict[str, float]:
    """
    Pump Rabi frequencies that put each branch maximum on its target.

    The probe is ramped up from zero, where the branches decouple and `guess`
    (the zeros of Re a, Re b) is already the answer; each ramp step restarts
    the root search from the previous solution.
    """
    labels = list(guess)

    def slopes(logs: np.ndarray, probe: float) -> List[Tuple[float, float]]:
        rabi = dict(zip(labels, np.exp(logs)))
        out = []
        for label in labels:
            index = _BRANCH[label]

            def profile(w: float) -> float:
                pair = _branches(w, delta, delta_s, gamma, probe, rabi["sigma397"], rabi.get("d866", 0.0), spurious)
                return pair[index]

            out.append(_log_slope(profile, targets[label]))
        return out

    x = np.log([guess[label] for label in labels])
    for probe in np.linspace(0.0, rabi_pi, steps + 1):
        solution = root(lambda logs: [s for s, _ in slopes(logs, probe)], x, method="hybr")
        residual = float(np.max(np.abs(solution.fun)))
        if not solution.success or residual > 1e-6:
            logger.error("bright-state placement failed", probe=probe, residual=residual, reason=solution.message)
            raise PhysicsError(
                "No pump Rabi frequencies put the bright maxima on their targets",
                {"targets": targets, "probe_rabi": probe, "residual": residual},
            )
        x = solution.x
    curvature = [c for _, c in slopes(x, rabi_pi)]
    if any(c >= 0 for c in curvature):
        raise PhysicsError(
            "Tuned stationary point is not a bright maximum", {"targets": targets, "curvature": curvature}
        )
    return {label: float(v) for label, v in zip(labels, np.exp(x))}


def tune_scheme(
    base: CoolingScheme,
    delta: float,
    radial_target: Optional[float] = None,
    axial_target: Optional[float] = None,
    exact: bool = True,
    double: Optional[bool] = None,
) -> CoolingScheme:
    """
    Retune the pumps so the bright states sit at the motional sidebands.

    sigma397 sets the P+ bright state (radial target), d866 the P- bright state
    (axial target); the pi397 probe keeps its Rabi frequency. With `exact` the
    maxima of the branch absorption -Im(a / det) and -Im(b / det) are placed on
    the targets and checked with `bright_positions`; otherwise Re a(-nu_a) = 0
    and Omega_sigma^2 / 4 Delta = nu. `double` defaults to "d866 present and
    both targets given".
    """
    if delta <= 0:
        raise InvalidParameterError("Tuning requires a positive detuning", {"delta": delta})
    delta_s = base.delta_s
    rabi_pi = base.rabi("pi397")
    if double is None:
        double = base.laser("d866") is not None and axial_target is not None and radial_target is not None
    has_d = bool(double)
    if has_d and (axial_target is None or radial_target is None):
        raise InvalidParameterError("Double tuning needs both radial and axial targets")
    sigma_target = radial_target if radial_target is not None else axial_target
    if sigma_target is None:
        raise InvalidParameterError("At least one target frequency is required")

    rabi_d = _axial_rabi(rabi_pi, delta, delta_s, axial_target) if has_d else 0.0
    if exact:
        # decoupled answer with the full probe: raises when no pump reaches the targets
        _radial_rabi(rabi_pi, rabi_d, delta, delta_s, sigma_target)
        targets = {"sigma397": sigma_target}
        guess_d = _axial_rabi(0.0, delta, delta_s, axial_target) if has_d else 0.0
        guess = {"sigma397": _radial_rabi(0.0, guess_d, delta, delta_s, sigma_target)}
        if has_d:
            targets["d866"] = axial_target
            guess["d866"] = guess_d
        placed = _place_maxima(delta, delta_s, base.gamma, rabi_pi, targets, guess, base.spurious_pi)
        rabi_sigma, rabi_d = placed["sigma397"], placed.get("d866", 0.0)
    else:
        rabi_sigma = lambdicke.bright_state_tuning(delta, sigma_target)

    raman = raman_detunings(delta, delta_s)
    scheme = base.with_laser("pi397", detuning=raman["pi397"])
    scheme = scheme.with_laser("sigma397", rabi_frequency=rabi_sigma, detuning=raman["sigma397"])
    if has_d:
        scheme = scheme.with_laser("d866", rabi_frequency=rabi_d, detuning=raman["d866"])
    scheme = replace(scheme, delta=delta)
    if exact:
        _check_positions(scheme, [sigma_target, axial_target] if has_d else [sigma_target])
    logger.info("tuned scheme", rabi_sigma=rabi_sigma, rabi_d=rabi_d, delta=delta)
    return scheme


def _check_positions(scheme: CoolingScheme, nus: List[float]) -> None:
    tolerance = float(settings.get("engines.tuning_tolerance", 0.05))
    found = bright_positions(scheme, nus)
    if all(abs(pos - nu) <= tolerance * nu for pos, nu in zip(found, nus)):
        return
    logger.error("tuned bright states miss their targets", targets=nus, found=found)
    raise PhysicsError(
        "Tuned bright states miss their targets", {"targets": nus, "found": found, "tolerance": tolerance}
    )


def bright_positions(scheme: CoolingScheme, nus: Sequence[float], points: int = 4001) -> List[float]:
    """
    Frequencies -omega of the bright-state maxima nearest each requested nu.

    The maxima come from the P+ and P- branch absorption of the scheme's beams;
    d866 counts only when it is Raman resonant with the probe.
    """
    rabi_d = scheme.rabi("d866") if lambdicke.is_deit(scheme) else 0.0
    grid = -np.linspace(0.05 * min(nus), 1.6 * max(nus), points)
    values = np.zeros((points, 2))
    for i, w in enumerate(grid):
        try:
            values[i] = _branches(
                w,
                scheme.delta,
                scheme.delta_s,
                scheme.gamma,
                scheme.rabi("pi397"),
                scheme.rabi("sigma397"),
                rabi_d,
                scheme.spurious_pi,
            )
        except PhysicsError:
            values[i] = 0.0
    found = np.concatenate([-grid[find_peaks(values[:, k])[0]] for k in range(2)])
    return [float(found[np.argmin(np.abs(found - nu))]) if found.size else float("nan") for nu in nus]



@dataclass
class ModeHistory:
    mode: str
    times: List[float] = field(default_factory=list)
    nbar: List[float] = field(default_factory=list)
    segment_n_ss: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def final_nbar(self) -> float:
        return self.nbar[-1]


def _rate_segments(
    segments: Sequence[Tuple[CoolingScheme, float]], mode: TrapMode, nbar0: float, samples: int
) -> ModeHistory:
    n_max = int(settings.get("engines.rate_n_max", 60))
    history = ModeHistory(mode.label)
    p = FockDistribution.thermal(nbar0, n_max + 1)
    t0 = 0.0
    history.times.append(0.0)
    history.nbar.append(p.nbar)
    for scheme, duration in segments:
        if duration <= 0:
            continue
        rates = lambdicke.rate_model(scheme.with_mode(mode))
        history.segment_n_ss.append(rates.n_ss)
        matrix = lambdicke.rate_matrix(rates.a_plus, rates.a_minus, n_max)
        step = duration / samples
        for k in range(1, samples + 1):
            history.times.append(t0 + k * step)
            history.nbar.append(lambdicke.evolve_rate_eq(p, matrix, k * step).nbar)
        p = lambdicke.evolve_rate_eq(p, matrix, duration)
        t0 += duration
    return history


def run_sequence(
    segments: Sequence[Tuple[CoolingScheme, float]],
    initial_nbar: Dict[str, float],
    engine: Literal["rate", "master"] = "rate",
    samples: int = 40,
    fock_dim: Optional[int] = None,
) -> Dict[str, ModeHistory]:
    """
    Each mode evolves independently through the pulses with its own Lamb-Dicke
    projections; spectator cross-talk between modes is not simulated.
    """
    if not segments:
        raise InvalidParameterError("A pulse sequence needs at least one segment")
    results: Dict[str, ModeHistory] = {}
    for label, nbar0 in initial_nbar.items():
        mode = TrapMode.preset(label)  # type: ignore[arg-type]
        logger.info("running pulse sequence", mode=label, segments=len(segments), engine=engine)
        if engine == "rate":
            results[label] = _rate_segments(segments, mode, nbar0, samples)
            continue
        trajectory = lindblad.run_segments(
            [(s.with_mode(mode), d) for s, d in segments], nbar0, fock_dim=fock_dim, samples=samples
        )
        history = ModeHistory(label, list(trajectory.times), list(trajectory.nbar), warnings=list(trajectory.warnings))
        history.segment_n_ss = [lambdicke.rate_model(s.with_mode(mode)).n_ss for s, d in segments if d > 0]
        results[label] = history
    return results
