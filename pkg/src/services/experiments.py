# /src/services/experiments.py

import re
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from src.cli.models import PhysicsSettings, Scenario, SchemeSettings
from src.core import lambdicke, lindblad, thermometry, ttm
from src.core.errors import ConfigError, PhysicsError, PoleError, UndefinedRateError
from src.core.experiment_manager import Experiment, ExperimentConfig, ExperimentManager
from src.core.model import CoolingScheme, FockDistribution, TrapMode
from src.core.run_manager import RunManager
from src.services.tuning import run_sequence, tune_scheme
from src.utils.config.settings import settings
from src.utils.resources.csv_writer import read_csv, write_csv, write_gnuplot_stub
from src.utils.resources.logger import logger

SEQUENCE_CAVEAT = (
    "modes are simulated independently; spectator-mode cross-talk between pulses is not captured"
)
FIT_COLUMNS = ["amplitude", "rate_per_s", "n_infinity", "t_cut_s", "n_ss", "residual"]
FOCK_COLUMN = re.compile(r"p(\d+)")


def doppler_nbar(label: str) -> float:
    return float(settings.get(f"physics.modes.{label}.doppler_nbar", 1.0))


def shift_detuning(scheme: CoolingScheme, delta: float, fixed: Sequence[str] = ()) -> CoolingScheme:
    """Move every beam by delta - scheme.delta; Raman resonances are preserved."""
    shift = delta - scheme.delta
    for laser in scheme.lasers:
        if laser.label not in fixed:
            scheme = scheme.with_laser(laser.label, detuning=laser.detuning + shift)
    return replace(scheme, delta=delta)


def build_scheme(
    scheme_settings: SchemeSettings, physics: PhysicsSettings, delta: Optional[float] = None, retune: bool = True
) -> CoolingScheme:
    scheme = scheme_settings.to_scheme(physics)
    if delta is not None and delta != scheme.delta:
        fixed = ("d866",) if scheme_settings.kind == "single_eit" else ()
        scheme = shift_detuning(scheme, delta, fixed)
    tune = scheme_settings.tune
    if tune is not None and retune:
        scheme = tune_scheme(
            scheme,
            scheme.delta,
            radial_target=tune.radial_target,
            axial_target=tune.axial_target,
            exact=tune.exact,
            double=scheme_settings.kind == "double_eit",
        )
    return scheme


def _optional(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def _repetitions(sideband: Any) -> Optional[int]:
    if sideband.repetitions is not None:
        return sideband.repetitions
    return int(settings.get("thermometry.repetitions", 250)) if sideband.shot_noise else None


def check_truncation(
    scheme: CoolingScheme, nbar0: float, duration: float, fock_dim: Optional[int], **kwargs: Any
) -> List[List[float]]:
    """Final n-bar at the run's cutoff and at a larger one; TruncationError when they disagree."""
    fock_dim = fock_dim or int(settings.get("engines.fock_dim", 17))
    dims = [fock_dim, fock_dim + int(settings.get("engines.truncation_step", 4))]
    finals = lindblad.truncation_convergence(scheme, nbar0, duration, dims, samples=5, **kwargs)
    return [[float(n), value] for n, value in finals]


class ScenarioExperiment(Experiment):
    """Shared output plumbing: every file goes through the run manager."""

    def write(
        self,
        run_manager: RunManager,
        run_id: str,
        prefix: str,
        observable: str,
        columns: Sequence[str],
        rows: Sequence[Sequence[Any]],
    ) -> str:
        path = write_csv(run_manager.output_path(prefix, observable), columns, rows)
        run_manager.add_file_to_run(run_id, path)
        if self.config.config.get("gnuplot_stub"):
            stub = write_gnuplot_stub(path, columns[0], columns[1:])
            run_manager.add_file_to_run(run_id, stub)
        return str(path)

    def write_fit(self, run_manager: RunManager, run_id: str, prefix: str, fit: thermometry.FitResult) -> str:
        """One-row fit report; undefined entries (no t_cut, no n_ss) are written as nan."""
        row = [fit.amplitude, fit.rate, fit.n_infinity, fit.t_cut, fit.n_ss, fit.residual]
        return self.write(run_manager, run_id, prefix, "fit", FIT_COLUMNS, [[float("nan") if v is None else v for v in row]])


class SpectrumScanExperiment(ScenarioExperiment):
    def run(self, scenario: Scenario, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        cfg = scenario.experiment
        scheme = build_scheme(scenario.scheme, scenario.physics)
        probes = np.linspace(cfg.start, cfg.stop, cfg.points)
        points = lindblad.spectrum_scan(scheme, probes, workers=self.config.workers)
        self.write(
            run_manager,
            run_id,
            scenario.prefix,
            "scan",
            ["delta_rad_s", "scatter_rate_per_s", "converged"],
            [(p.probe_detuning, p.rate, p.converged) for p in points],
        )
        rates = np.array([p.rate for p in points])
        filled = np.nan_to_num(rates, nan=0.0)
        peak = float(filled.max()) if filled.size else 0.0
        bright, _ = find_peaks(filled)
        dark, _ = find_peaks(-filled)
        summary: Dict[str, Any] = {
            "prefix": scenario.prefix,
            "peak_scatter_rate_per_s": peak,
            "dark_points_rad_s": [float(probes[i]) for i in dark],
            "dark_depth": [float(filled[i] / peak) if peak else 0.0 for i in dark],
            "bright_offsets_rad_s": [float(probes[i] - scheme.delta) for i in bright],
            "non_converged": int(sum(not p.converged for p in points)),
        }
        if lambdicke.is_deit(scheme):
            rows = []
            for w in probes - scheme.delta:
                try:
                    response = lambdicke.deit_response(float(w), scheme)
                except PoleError:
                    continue
                rows.append((float(w), response.s_value.real, response.s_value.imag, response.a_value.real, response.b_value.real))
            self.write(run_manager, run_id, scenario.prefix, "absorption", ["omega_rad_s", "re_s", "im_s", "re_a", "re_b"], rows)
        logger.info("spectrum scan done", dark=len(dark), bright=len(bright))
        return summary


class CoolingTrajectoryExperiment(ScenarioExperiment):
    def run(self, scenario: Scenario, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        cfg = scenario.experiment
        scheme = build_scheme(scenario.scheme, scenario.physics)
        nbar0 = cfg.nbar0 if cfg.nbar0 is not None else doppler_nbar(scheme.mode.label)
        trajectory = lindblad.cooling_trajectory(
            scheme,
            nbar0,
            cfg.duration,
            fock_dim=cfg.fock_dim,
            samples=cfg.samples,
            include_heating=cfg.include_heating,
            method=cfg.method,
        )
        truncation = (
            check_truncation(scheme, nbar0, cfg.duration, cfg.fock_dim, include_heating=cfg.include_heating, method=cfg.method)
            if cfg.check_truncation
            else None
        )
        self.write(
            run_manager,
            run_id,
            scenario.prefix,
            "nbar",
            ["t_s", "nbar", "p_excited"],
            list(zip(trajectory.times, trajectory.nbar, trajectory.p_excited)),
        )
        fock_dim = len(trajectory.fock_populations[0].populations)
        self.write(
            run_manager,
            run_id,
            scenario.prefix,
            "fock",
            ["t_s"] + [f"p{n}" for n in range(fock_dim)],
            [[t] + list(f.populations) for t, f in zip(trajectory.times, trajectory.fock_populations)],
        )
        checkpoint = run_manager.output_path(scenario.prefix, "final_state", ".rho")
        trajectory.final_state.save(checkpoint)
        run_manager.add_file_to_run(run_id, checkpoint)

        fit = thermometry.fit_cooling_curve(trajectory.times, trajectory.nbar)
        self.write_fit(run_manager, run_id, scenario.prefix, fit)
        try:
            rate_one = thermometry.rate_at_nbar_one(trajectory.times, trajectory.nbar)
        except UndefinedRateError as e:
            logger.warning("rate at n-bar = 1 undefined", reason=str(e))
            rate_one = None
        try:
            predicted = lambdicke.rate_model(scheme)
            if cfg.include_heating:
                predicted = predicted.with_heating(scheme.mode.background_heating)
            rate_ld, n_ss_ld = predicted.cooling_rate, _optional(predicted.n_ss)
        except PhysicsError as e:
            logger.warning("Lamb-Dicke prediction unavailable", error=str(e))
            rate_ld, n_ss_ld = None, None
        return {
            "prefix": scenario.prefix,
            "nbar0": nbar0,
            "final_nbar": trajectory.nbar[-1],
            "n_ss": _optional(fit.n_ss),
            "n_infinity": fit.n_infinity,
            "rate_fit_per_s": fit.rate,
            "t_cut_s": _optional(fit.t_cut),
            "rate_at_nbar_one_per_s": rate_one,
            "rate_lamb_dicke_per_s": rate_ld,
            "n_ss_lamb_dicke": n_ss_ld,
            "lamb_dicke_ratio": lambdicke.lamb_dicke_ratio(scheme),
            "fit_flags": fit.flags,
            "warnings": trajectory.warnings,
            "truncation_check": truncation,
        }


class RabiMapExperiment(ScenarioExperiment):
    """Red-sideband excitation after a fixed cooling pulse on a (pump, probe) grid."""

    def _final_distribution(self, scheme: CoolingScheme, nbar0: float, duration: float, engine: str) -> FockDistribution:
        if engine == "master":
            return lindblad.cooling_trajectory(scheme, nbar0, duration, samples=5).fock_populations[-1]
        rates = lambdicke.rate_model(scheme)
        matrix = lambdicke.rate_matrix(rates.a_plus, rates.a_minus)
        return lambdicke.evolve_rate_eq(FockDistribution.thermal(nbar0, matrix.dimension), matrix, duration)

    def run(self, scenario: Scenario, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        cfg = scenario.experiment
        base = scenario.to_scheme()
        nu = base.mode.frequency
        nbar0 = cfg.nbar0 if cfg.nbar0 is not None else doppler_nbar(base.mode.label)
        sb = cfg.sideband
        rabi_time = sb.rabi_time or thermometry.default_rabi_time(sb.eta_sb, sb.rabi_sb, nbar0)
        rows = []
        best = None
        for pump in cfg.pump:
            for probe in cfg.probe:
                scheme = base.with_laser("sigma397", rabi_frequency=pump).with_laser("pi397", rabi_frequency=probe)
                try:
                    dist = self._final_distribution(scheme, nbar0, cfg.duration, cfg.engine)
                    rsb = thermometry.sideband_excitation(dist, sb.eta_sb, sb.rabi_sb, rabi_time, -1)
                    nbar = dist.nbar
                except PhysicsError as e:
                    logger.warning("rabi map point failed", pump=pump, probe=probe, error=str(e))
                    rsb, nbar = float("nan"), float("nan")
                stark = lambdicke.stark_from_rabi(scheme.delta, pump)
                rows.append((pump, probe, rsb, nbar, stark, stark / nu))
                if np.isfinite(rsb) and (best is None or rsb < best[2]):
                    best = (pump, probe, rsb)
        self.write(
            run_manager,
            run_id,
            scenario.prefix,
            "rabi_map",
            ["pump_rad_s", "probe_rad_s", "rsb", "nbar", "stark_rad_s", "stark_over_nu"],
            rows,
        )
        return {
            "prefix": scenario.prefix,
            "rabi_time_s": rabi_time,
            "stark_contour_pump_rad_s": lambdicke.bright_state_tuning(base.delta, nu),
            "min_rsb": None if best is None else best[2],
            "min_rsb_pump_rad_s": None if best is None else best[0],
            "min_rsb_probe_rad_s": None if best is None else best[1],
        }


class DetuningSweepExperiment(ScenarioExperiment):
    def _modes(self, scenario: Scenario, scheme: CoolingScheme) -> Dict[str, TrapMode]:
        modes: Dict[str, TrapMode] = {}
        tune = scenario.scheme.tune
        if tune is not None and tune.axial_target is not None:
            modes["axial"] = TrapMode("axial", tune.axial_target)
        if tune is not None and tune.radial_target is not None:
            modes["radial1"] = TrapMode("radial1", tune.radial_target)
        modes[scheme.mode.label] = scheme.mode
        return modes

    def run(self, scenario: Scenario, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        cfg = scenario.experiment
        gamma_total = scenario.physics.gamma
        rows: Dict[str, List[tuple]] = {}
        for delta in cfg.deltas:
            scheme = build_scheme(scenario.scheme, scenario.physics, delta=delta, retune=cfg.retune)
            for label, mode in self._modes(scenario, scheme).items():
                try:
                    rates = lambdicke.rate_model(scheme.with_mode(mode))
                    rate, n_ss = rates.cooling_rate, rates.n_ss
                except PhysicsError as e:
                    logger.warning("sweep point failed", delta=delta, mode=label, error=str(e))
                    rate, n_ss = float("nan"), float("nan")
                rows.setdefault(label, []).append(
                    (delta, delta / gamma_total, rate, n_ss, scheme.rabi("sigma397"), scheme.rabi("d866"))
                )
        summary: Dict[str, Any] = {"prefix": scenario.prefix, "modes": sorted(rows)}
        for label, mode_rows in rows.items():
            self.write(
                run_manager,
                run_id,
                scenario.prefix,
                f"sweep_{label}",
                ["delta_rad_s", "delta_gamma", "rate_per_s", "n_ss", "rabi_sigma_rad_s", "rabi_d_rad_s"],
                mode_rows,
            )
            finite = [r for r in mode_rows if np.isfinite(r[3])]
            if finite:
                best = min(finite, key=lambda r: r[3])
                summary[f"{label}_min_n_ss"] = best[3]
                summary[f"{label}_min_n_ss_delta_rad_s"] = best[0]
        return summary


class TtmRateExperiment(ScenarioExperiment):
    def run(self, scenario: Scenario, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        cfg = scenario.experiment
        scheme = build_scheme(scenario.scheme, scenario.physics)
        ttm_cfg = settings.get("engines.ttm", {})
        dt = cfg.dt if cfg.dt is not None else float(ttm_cfg.get("dt_gamma", 0.05)) / scheme.gamma_total
        steps = cfg.steps if cfg.steps is not None else int(ttm_cfg.get("steps", 200))
        rates = lambdicke.rate_model(scheme)
        if cfg.engine == "master":
            dimension = cfg.fock_dim or int(settings.get("engines.fock_dim", 17))
            propagator = ttm.master_equation_propagator(scheme, dimension)
        else:
            matrix = lambdicke.rate_matrix(rates.a_plus, rates.a_minus)
            dimension = matrix.dimension
            propagator = ttm.rate_equation_propagator(matrix)
        maps = ttm.extract_maps(propagator, dimension, dt, steps=steps, workers=self.config.workers)
        tensors = ttm.transfer_tensors(maps)
        error = ttm.reconstruction_error(tensors, maps)
        if cfg.horizon is not None and cfg.horizon > maps.steps:
            maps = ttm.extrapolate(tensors, maps, cfg.horizon)
        checkpoint = run_manager.output_path(scenario.prefix, "maps", ".bin")
        maps.save(checkpoint)
        run_manager.add_file_to_run(run_id, checkpoint)

        summary: Dict[str, Any] = {
            "prefix": scenario.prefix,
            "engine": cfg.engine,
            "dt_s": dt,
            "steps": maps.steps,
            "reconstruction_error": error,
            "rate_lamb_dicke_per_s": rates.cooling_rate,
        }
        for nbar0 in cfg.nbar0:
            response = ttm.generalized_rate(maps, nbar0)
            self.write(
                run_manager,
                run_id,
                scenario.prefix,
                f"ttm_nbar{nbar0:g}",
                ["t_s", "capacitance", "conductance", "rate_per_s", "var_dh", "var_h"],
                list(
                    zip(
                        response.t,
                        response.capacitance,
                        response.conductance,
                        response.rate,
                        response.var_dH,
                        response.var_h,
                    )
                ),
            )
            defined = response.rate[np.isfinite(response.rate)]
            summary[f"rate_nbar{nbar0:g}_start_per_s"] = float(defined[0]) if defined.size else None
            summary[f"rate_nbar{nbar0:g}_end_per_s"] = float(defined[-1]) if defined.size else None
            summary[f"rate_nbar{nbar0:g}_undefined_points"] = len(response.undefined)
        return summary


class ThermometryReplayExperiment(ScenarioExperiment):
    """Cooling run read out the way the lab does it: sideband flops, then fits."""

    def _snapshots(self, scheme: CoolingScheme, cfg: Any, nbar0: float) -> tuple:
        if cfg.engine == "master":
            trajectory = lindblad.cooling_trajectory(scheme, nbar0, cfg.duration, fock_dim=cfg.fock_dim, samples=cfg.samples)
            return list(trajectory.times), trajectory.fock_populations
        rates = lambdicke.rate_model(scheme)
        matrix = lambdicke.rate_matrix(rates.a_plus, rates.a_minus)
        p0 = FockDistribution.thermal(nbar0, matrix.dimension)
        times = list(np.linspace(0.0, cfg.duration, cfg.samples + 1))
        return times, [lambdicke.evolve_rate_eq(p0, matrix, t) for t in times]

    def _replayed(self, path: Path) -> tuple:
        """Snapshots from a trajectory CSV: Fock columns p0..pN when present, else thermal at the nbar column."""
        if not path.is_file():
            raise ConfigError("Trajectory CSV not found", {"path": str(path)})
        try:
            data = read_csv(path)
        except ValueError as e:
            raise ConfigError("Trajectory CSV is not numeric", {"path": str(path), "reason": str(e)}) from e
        if "t_s" not in data:
            raise ConfigError("Trajectory CSV needs a t_s column", {"path": str(path), "columns": sorted(data)})
        fock = sorted((int(m.group(1)), name) for name in data if (m := FOCK_COLUMN.fullmatch(name)))
        if fock:
            table = np.array([data[name] for _, name in fock]).T
            dists = [FockDistribution(row / row.sum()) for row in table]
        elif "nbar" in data:
            dimension = int(settings.get("engines.rate_n_max", 60)) + 1
            dists = [FockDistribution.thermal(n, dimension) for n in data["nbar"]]
        else:
            raise ConfigError("Trajectory CSV needs nbar or p0..pN columns", {"path": str(path), "columns": sorted(data)})
        logger.info(f"Replaying {len(dists)} snapshots from {path}", fock_columns=len(fock))
        return list(data["t_s"]), dists

    def run(self, scenario: Scenario, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        cfg = scenario.experiment
        truncation = None
        if cfg.trajectory_csv is not None:
            times, dists = self._replayed(Path(cfg.trajectory_csv))
        else:
            scheme = build_scheme(scenario.scheme, scenario.physics)
            nbar0 = cfg.nbar0 if cfg.nbar0 is not None else doppler_nbar(scheme.mode.label)
            times, dists = self._snapshots(scheme, cfg, nbar0)
            if cfg.check_truncation and cfg.engine == "master":
                truncation = check_truncation(scheme, nbar0, cfg.duration, cfg.fock_dim)
        sb = cfg.sideband
        series = thermometry.simulate_sidebands(
            times,
            dists,
            sideband_eta=sb.eta_sb,
            rabi_sb=sb.rabi_sb,
            rabi_time=sb.rabi_time,
            repetitions=_repetitions(sb),
            seed=scenario.seed,
        )
        measured = []
        for r, b in zip(series.rsb, series.bsb):
            try:
                measured.append(thermometry.nbar_from_sidebands(r, b))
            except UndefinedRateError:
                measured.append(float("nan"))
        self.write(
            run_manager,
            run_id,
            scenario.prefix,
            "sidebands",
            ["t_s", "rsb", "bsb", "nbar_measured", "nbar_true"],
            [(t, r, b, m, d.nbar) for t, r, b, m, d in zip(series.times, series.rsb, series.bsb, measured, dists)],
        )
        if cfg.pipeline == "two_stage":
            fit = thermometry.fit_sideband_pipeline(series)
        else:
            ok = np.isfinite(measured)
            fit = thermometry.fit_cooling_curve(series.times[ok], np.asarray(measured)[ok])
        self.write_fit(run_manager, run_id, scenario.prefix, fit)
        return {
            "prefix": scenario.prefix,
            "pipeline": cfg.pipeline,
            "source": cfg.trajectory_csv or cfg.engine,
            "rabi_time_s": series.rabi_time,
            "amplitude": fit.amplitude,
            "rate_fit_per_s": fit.rate,
            "n_infinity": fit.n_infinity,
            "t_cut_s": _optional(fit.t_cut),
            "n_ss": _optional(fit.n_ss),
            "final_nbar_true": dists[-1].nbar,
            "final_nonthermality": thermometry.nonthermality(dists[-1]),
            "fit_flags": fit.flags,
            "truncation_check": truncation,
        }


class PulseSequenceExperiment(ScenarioExperiment):
    def run(self, scenario: Scenario, run_manager: RunManager, run_id: str) -> Dict[str, Any]:
        cfg = scenario.experiment
        segments = [(build_scheme(s.scheme, scenario.physics), s.duration) for s in cfg.segments]
        histories = run_sequence(segments, dict(cfg.initial_nbar), engine=cfg.engine, samples=cfg.samples, fock_dim=cfg.fock_dim)
        logger.warning("pulse sequence caveat", caveat=SEQUENCE_CAVEAT)
        summary: Dict[str, Any] = {"prefix": scenario.prefix, "caveat": SEQUENCE_CAVEAT}
        for label, history in histories.items():
            self.write(run_manager, run_id, scenario.prefix, f"sequence_{label}", ["t_s", "nbar"], list(zip(history.times, history.nbar)))
            summary[f"{label}_final_nbar"] = history.final_nbar
            summary[f"{label}_segment_n_ss"] = [_optional(n) for n in history.segment_n_ss]
        return summary


EXPERIMENTS = {
    "spectrum_scan": SpectrumScanExperiment,
    "cooling_trajectory": CoolingTrajectoryExperiment,
    "rabi_map": RabiMapExperiment,
    "detuning_sweep": DetuningSweepExperiment,
    "ttm_rate": TtmRateExperiment,
    "thermometry_replay": ThermometryReplayExperiment,
    "pulse_sequence": PulseSequenceExperiment,
}


def register_experiments(manager: ExperimentManager, workers: Optional[int] = None, gnuplot_stub: bool = False) -> None:
    for name, cls in EXPERIMENTS.items():
        manager.register_experiment(cls(ExperimentConfig(name, workers=workers, config={"gnuplot_stub": gnuplot_stub})))
    logger.info("Experiments registered", count=len(EXPERIMENTS))
