# /src/core/thermometry.py
"""
Sideband thermometry on simulated data: Rabi flops on the logic transition,
n-bar from the red/blue sideband ratio, exponential fits with the t_cut rule
and the rate quoted at n-bar = 1.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import curve_fit

from src.core.errors import FitError, InvalidParameterError, UndefinedRateError
from src.core.model import FockDistribution
from src.utils.config.settings import settings
from src.utils.resources.logger import logger


@dataclass
class SidebandSeries:
    times: np.ndarray
    rsb: np.ndarray
    bsb: np.ndarray
    rabi_time: float
    sideband_eta: float

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.rsb = np.asarray(self.rsb, dtype=float)
        self.bsb = np.asarray(self.bsb, dtype=float)
        if not (self.times.shape == self.rsb.shape == self.bsb.shape):
            raise InvalidParameterError("times, rsb and bsb must have the same length")
        if np.any(self.times < 0):
            raise InvalidParameterError("Cooling durations must be non-negative")
        for name, values in (("rsb", self.rsb), ("bsb", self.bsb)):
            if np.any(values < 0) or np.any(values > 1):
                raise InvalidParameterError(f"{name} probabilities must lie in [0, 1]")

    def nbar(self) -> np.ndarray:
        return np.array([nbar_from_sidebands(r, b) for r, b in zip(self.rsb, self.bsb)])


@dataclass
class FitResult:
    amplitude: float
    rate: float
    n_infinity: float
    t_cut: float
    n_ss: Optional[float] = None
    residual: float = 0.0
    flags: List[str] = field(default_factory=list)

    def model(self, t: np.ndarray) -> np.ndarray:
        return _exponential(np.asarray(t, dtype=float), self.amplitude, self.rate, self.n_infinity)


def _exponential(t: np.ndarray, amplitude: float, rate: float, offset: float) -> np.ndarray:
    return amplitude * np.exp(-rate * t) + offset


def default_rabi_time(sideband_eta: float, rabi_sb: float, nbar0: float) -> float:
    """pi time of the blue sideband at the Doppler temperature."""
    return float(np.pi / (sideband_eta * rabi_sb * np.sqrt(nbar0 + 1.0)))


def sideband_excitation(dist: FockDistribution, sideband_eta: float, rabi_sb: float, rabi_time: float, order: int) -> float:
    """
    Ideal sideband flop: sum_n p_n sin^2(Omega_n t / 2) with Omega_n = eta sqrt(n) Omega
    (red, order -1) or eta sqrt(n + 1) Omega (blue, order +1).
    """
    if order not in (-1, 1):
        raise InvalidParameterError("Sideband order must be +1 or -1", {"order": order})
    p = dist.populations
    if abs(p.sum() - 1.0) > 1e-6:
        raise InvalidParameterError("Distribution must be normalized", {"total": float(p.sum())})
    n = np.arange(p.size, dtype=float)
    coupling = np.sqrt(n) if order == -1 else np.sqrt(n + 1.0)
    return float(p @ np.sin(0.5 * sideband_eta * coupling * rabi_sb * rabi_time) ** 2)


def nbar_from_sidebands(rsb: float, bsb: float) -> float:
    if rsb < 0 or bsb <= rsb:
        raise UndefinedRateError("n-bar undefined unless bsb > rsb >= 0", {"rsb": rsb, "bsb": bsb})
    return float(rsb / (bsb - rsb))


def simulate_sidebands(
    times: Sequence[float],
    distributions: Sequence[FockDistribution],
    sideband_eta: Optional[float] = None,
    rabi_sb: Optional[float] = None,
    rabi_time: Optional[float] = None,
    repetitions: Optional[int] = None,
    seed: Optional[int] = None,
) -> SidebandSeries:
    """
    Sideband probabilities for each snapshot. With `repetitions`, each
    probability is replaced by a binomial estimate from that many shots.
    """
    cfg = settings.get("thermometry", {})
    sideband_eta = sideband_eta if sideband_eta is not None else float(cfg.get("eta_sb", 0.05))
    rabi_sb = rabi_sb if rabi_sb is not None else 2.0 * np.pi * float(cfg.get("rabi_hz", 50e3))
    if rabi_time is None:
        rabi_time = default_rabi_time(sideband_eta, rabi_sb, distributions[0].nbar)
    rsb = np.array([sideband_excitation(d, sideband_eta, rabi_sb, rabi_time, -1) for d in distributions])
    bsb = np.array([sideband_excitation(d, sideband_eta, rabi_sb, rabi_time, +1) for d in distributions])
    if repetitions:
        rng = np.random.default_rng(seed)
        rsb = rng.binomial(repetitions, np.clip(rsb, 0.0, 1.0)) / repetitions
        bsb = rng.binomial(repetitions, np.clip(bsb, 0.0, 1.0)) / repetitions
    return SidebandSeries(np.asarray(times, dtype=float), rsb, bsb, rabi_time, sideband_eta)


def nonthermality(dist: FockDistribution) -> float:
    """Total-variation distance to the thermal distribution with the same n-bar."""
    p = dist.populations / dist.total
    nbar = float(np.arange(p.size) @ p)
    q = FockDistribution.thermal(nbar, p.size).populations
    return float(0.5 * np.abs(p - q).sum())


def _fit_exponential(times: np.ndarray, values: np.ndarray) -> tuple:
    scale = float(times.max()) if times.max() > 0 else 1.0
    tau = times / scale
    amp0 = values[0] - values[-1]
    target = values[-1] + amp0 / np.e
    crossed = np.flatnonzero((values - target) * np.sign(amp0) <= 0)
    rate0 = 1.0 / tau[crossed[0]] if crossed.size and tau[crossed[0]] > 0 else 1.0
    try:
        popt, _ = curve_fit(
            _exponential, tau, values, p0=(amp0, rate0, values[-1]), maxfev=20000, ftol=1e-14, xtol=1e-14, gtol=1e-14
        )
    except (RuntimeError, ValueError) as e:
        logger.error("exponential fit failed", points=len(times), error=str(e), exc_info=True)
        raise FitError("Exponential fit did not converge", {"points": len(times)}) from e
    amplitude, rate_tau, offset = (float(x) for x in popt)
    residual = float(np.sqrt(np.mean((_exponential(tau, *popt) - values) ** 2)))
    if not np.all(np.isfinite(popt)):
        raise FitError("Exponential fit returned non-finite parameters", {"residual": residual})
    return amplitude, rate_tau / scale, offset, residual


def fit_cooling_curve(times: Sequence[float], nbar: Sequence[float], tolerance: Optional[float] = None) -> FitResult:
    """
    Fit n(t) = A exp(-R t) + n_inf. t_cut is where A exp(-R t) has fallen to
    `tolerance`; n_ss averages the data beyond t_cut.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(nbar, dtype=float)
    if t.size < 5:
        raise FitError("At least 5 points are needed", {"points": int(t.size)})
    tolerance = tolerance if tolerance is not None else float(settings.get("thermometry.nbar_tolerance", 0.005))
    amplitude, rate, offset, residual = _fit_exponential(t, y)
    flags: List[str] = []
    if rate <= 0:
        flags.append("non_cooling_fit")
        logger.warning("fitted rate is not positive", rate=rate)
        t_cut = float("inf")
    elif abs(amplitude) <= tolerance:
        t_cut = 0.0
    else:
        t_cut = float(np.log(abs(amplitude) / tolerance) / rate)
    late = y[t > t_cut]
    n_ss = float(late.mean()) if late.size else None
    if n_ss is None:
        flags.append("no_points_after_t_cut")
        logger.warning("no data beyond t_cut", t_cut=t_cut, t_max=float(t.max()))
    return FitResult(amplitude, rate, offset, t_cut, n_ss, residual, flags)


def fit_sideband_pipeline(series: SidebandSeries, tolerance: Optional[float] = None) -> FitResult:
    """Fit RSB(t) and BSB(t) separately, form n-bar from the fitted curves, then fit n-bar(t)."""
    a_r, r_r, c_r, _ = _fit_exponential(series.times, series.rsb)
    a_b, r_b, c_b, _ = _fit_exponential(series.times, series.bsb)
    rsb = _exponential(series.times, a_r, r_r, c_r)
    bsb = _exponential(series.times, a_b, r_b, c_b)
    nbar = np.array([nbar_from_sidebands(max(r, 0.0), b) for r, b in zip(rsb, bsb)])
    return fit_cooling_curve(series.times, nbar, tolerance)


def rate_at_nbar_one(
    times: Sequence[float],
    nbar: Sequence[float],
    n_ss: Optional[float] = None,
    log_step: Optional[float] = None,
) -> float:
    """
    R = -(dn/dt) / (n - n_ss) at the first n = 1 crossing, with a centered
    5-point derivative on a log-spaced resample of a cubic spline.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(nbar, dtype=float)
    below = np.flatnonzero((y[:-1] - 1.0) * (y[1:] - 1.0) <= 0)
    if below.size == 0 or y[0] < 1.0:
        raise UndefinedRateError("Trajectory does not cross n-bar = 1", {"n_start": float(y[0]), "n_end": float(y[-1])})
    i = int(below[0])
    if y[i + 1] == y[i]:
        t1 = t[i]
    else:
        t1 = t[i] + (1.0 - y[i]) * (t[i + 1] - t[i]) / (y[i + 1] - y[i])
    if t1 <= 0:
        raise UndefinedRateError("Crossing at t = 0 has no log-spaced neighbourhood")
    if n_ss is None:
        fit = fit_cooling_curve(t, y)
        n_ss = fit.n_ss if fit.n_ss is not None else fit.n_infinity
    if n_ss >= 1.0:
        raise UndefinedRateError("Steady state is not below n-bar = 1", {"n_ss": n_ss})

    positive = t > 0
    spline = CubicSpline(np.log(t[positive]), y[positive])
    if log_step is None:
        j = min(max(i, 1), t.size - 2)
        log_step = 0.5 * float(np.log(t[j + 1] / t[j])) if t[j] > 0 else 1e-3
    u = np.log(t1)
    h = log_step
    samples = spline(u + h * np.arange(-2, 3))
    dy_du = (samples[0] - 8.0 * samples[1] + 8.0 * samples[3] - samples[4]) / (12.0 * h)
    rate = -(dy_du / t1) / (1.0 - n_ss)
    logger.info("rate at nbar = 1", t_cross=t1, rate=rate, n_ss=n_ss)
    return float(rate)
