# /src/cli/models.py

import copy
import re
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, ValidationInfo, field_validator, model_validator

from src.core.errors import ConfigError
from src.core.model import CoolingScheme, LaserDrive, TrapMode, ZeemanField, raman_detunings
from src.utils.config.settings import settings

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")

_FREQUENCY_UNITS = {
    "": 1.0,
    "rad/s": 1.0,
    "Hz": 2.0 * np.pi,
    "kHz": 2.0 * np.pi * 1e3,
    "MHz": 2.0 * np.pi * 1e6,
    "GHz": 2.0 * np.pi * 1e9,
}
_TIME_UNITS = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9}
_FIELD_UNITS = {"": 1.0, "T": 1.0, "mT": 1e-3, "G": 1e-4}


def _split(value: Any) -> tuple:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value), ""
    match = _QUANTITY.match(str(value))
    if not match:
        raise ValueError(f"cannot parse quantity '{value}'")
    return float(match.group(1)), match.group(2)


def _gamma(info: Optional[ValidationInfo]) -> Optional[float]:
    context = info.context if info is not None else None
    return (context or {}).get("gamma_total")


def parse_frequency(value: Any, gamma_total: Optional[float] = None) -> float:
    """'2.552 MHz' -> angular frequency in rad/s; 'x Gamma' uses the scenario linewidth."""
    number, unit = _split(value)
    if unit == "Gamma":
        if gamma_total is None:
            raise ValueError("'Gamma' units are not available here")
        return number * gamma_total
    if unit not in _FREQUENCY_UNITS:
        raise ValueError(f"unknown frequency unit '{unit}' (use Hz, kHz, MHz, GHz, rad/s or Gamma)")
    return number * _FREQUENCY_UNITS[unit]


def parse_time(value: Any, gamma_total: Optional[float] = None) -> float:
    number, unit = _split(value)
    if unit == "/Gamma":
        if gamma_total is None:
            raise ValueError("'/Gamma' units are not available here")
        return number / gamma_total
    if unit not in _TIME_UNITS:
        raise ValueError(f"unknown time unit '{unit}' (use s, ms, us, ns or /Gamma)")
    return number * _TIME_UNITS[unit]


def parse_field(value: Any) -> float:
    number, unit = _split(value)
    if unit not in _FIELD_UNITS:
        raise ValueError(f"unknown field unit '{unit}' (use T, mT or G)")
    return number * _FIELD_UNITS[unit]


def _default_gamma() -> float:
    return 2.0 * np.pi * float(settings.get("physics.gamma_hz", 20.7e6))


class PhysicsSettings(BaseModel):
    gamma: float = Field(default_factory=_default_gamma, description="Total P1/2 decay rate", json_schema_extra={"example": "20.7 MHz"})
    branch_s: float = Field(default_factory=lambda: float(settings.get("physics.branch_s", 0.935)))
    branch_d: float = Field(default_factory=lambda: float(settings.get("physics.branch_d", 0.065)))
    delta_s: float = Field(0.0, description="Ground-state Zeeman splitting", json_schema_extra={"example": "10 MHz"})
    field: Optional[float] = Field(None, description="Magnetic field; overrides delta_s", json_schema_extra={"example": "3 G"})
    spurious_pi: bool = True
    emission_eta: float = Field(0.0, ge=0.0)

    @field_validator("gamma", mode="before")
    @classmethod
    def _parse_gamma(cls, v: Any) -> float:
        return parse_frequency(v)

    @field_validator("delta_s", mode="before")
    @classmethod
    def _parse_delta_s(cls, v: Any, info: ValidationInfo) -> float:
        return parse_frequency(v, _gamma(info))

    @field_validator("field", mode="before")
    @classmethod
    def _parse_field(cls, v: Any) -> Optional[float]:
        return None if v is None else parse_field(v)

    def zeeman(self) -> ZeemanField:
        if self.field is not None:
            return ZeemanField(field_strength=self.field)
        return ZeemanField.from_delta_s(self.delta_s)


class LaserSettings(BaseModel):
    label: Literal["pi397", "sigma397", "d866"]
    rabi: float = Field(..., description="Rabi frequency", json_schema_extra={"example": "1.2 Gamma"})
    detuning: Optional[float] = Field(None, description="Omitted: Raman-resonant value for the scheme")
    eta_axial: float = Field(0.0, ge=0.0)
    eta_radial: float = Field(0.0, ge=0.0)
    polarization: Optional[Literal["pi", "sigma+", "sigma-", "sigma+-"]] = None

    @field_validator("rabi", "detuning", mode="before")
    @classmethod
    def _parse(cls, v: Any, info: ValidationInfo) -> Optional[float]:
        return None if v is None else parse_frequency(v, _gamma(info))


class ModeSettings(BaseModel):
    label: Literal["axial", "radial1", "radial2"] = "axial"
    frequency: Optional[float] = Field(None, json_schema_extra={"example": "904.6 kHz"})
    background_heating: float = Field(0.0, ge=0.0, description="phonons/s")

    @field_validator("frequency", mode="before")
    @classmethod
    def _parse(cls, v: Any, info: ValidationInfo) -> Optional[float]:
        return None if v is None else parse_frequency(v, _gamma(info))

    def to_mode(self) -> TrapMode:
        frequency = self.frequency if self.frequency is not None else TrapMode.preset(self.label).frequency
        return TrapMode(self.label, frequency, self.background_heating)


class TuneSettings(BaseModel):
    radial_target: Optional[float] = None
    axial_target: Optional[float] = None
    exact: bool = Field(True, description="Place the bright maxima exactly; false uses the closed-form shift")

    @field_validator("radial_target", "axial_target", mode="before")
    @classmethod
    def _parse(cls, v: Any, info: ValidationInfo) -> Optional[float]:
        return None if v is None else parse_frequency(v, _gamma(info))


class SchemeSettings(BaseModel):
    kind: Literal["single_eit", "double_eit", "custom"] = "double_eit"
    delta: float = Field(..., description="Common detuning Delta", json_schema_extra={"example": "3 Gamma"})
    mode: ModeSettings = Field(default_factory=ModeSettings)
    lasers: List[LaserSettings]
    tune: Optional[TuneSettings] = None

    @field_validator("delta", mode="before")
    @classmethod
    def _parse(cls, v: Any, info: ValidationInfo) -> float:
        return parse_frequency(v, _gamma(info))

    @model_validator(mode="after")
    def _check_lasers(self) -> "SchemeSettings":
        labels = [l.label for l in self.lasers]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate laser labels {labels}")
        if self.kind == "custom" and any(l.detuning is None for l in self.lasers):
            raise ValueError("custom schemes need an explicit detuning for every laser")
        if self.kind == "double_eit" and set(labels) != {"pi397", "sigma397", "d866"}:
            raise ValueError("double_eit needs pi397, sigma397 and d866")
        return self

    def to_scheme(self, physics: PhysicsSettings) -> CoolingScheme:
        zeeman = physics.zeeman()
        raman = raman_detunings(self.delta, zeeman.delta_s)
        lasers = []
        for l in self.lasers:
            if l.detuning is not None:
                detuning = l.detuning
            elif self.kind == "single_eit" and l.label == "d866":
                detuning = 0.0
            else:
                detuning = raman[l.label]
            lasers.append(LaserDrive(l.label, l.rabi, detuning, l.eta_axial, l.eta_radial, l.polarization))
        return CoolingScheme(
            lasers=tuple(lasers),
            mode=self.mode.to_mode(),
            zeeman=zeeman,
            gamma_total=physics.gamma,
            branch_s=physics.branch_s,
            branch_d=physics.branch_d,
            delta=self.delta,
            spurious_pi=physics.spurious_pi,
            emission_eta=physics.emission_eta,
        )


class _TimeModel(BaseModel):
    @field_validator("duration", "dt", "rabi_time", mode="before", check_fields=False)
    @classmethod
    def _parse_time(cls, v: Any, info: ValidationInfo) -> Optional[float]:
        return None if v is None else parse_time(v, _gamma(info))


class SidebandSettings(_TimeModel):
    eta_sb: float = Field(default_factory=lambda: float(settings.get("thermometry.eta_sb", 0.05)), gt=0.0)
    rabi_sb: float = Field(default_factory=lambda: 2.0 * np.pi * float(settings.get("thermometry.rabi_hz", 50e3)))
    rabi_time: Optional[float] = None
    shot_noise: bool = False
    repetitions: Optional[int] = Field(None, ge=1, description="Omitted with shot_noise: thermometry.repetitions")

    @field_validator("rabi_sb", mode="before")
    @classmethod
    def _parse_rabi(cls, v: Any) -> float:
        return parse_frequency(v)


class SpectrumScanSettings(BaseModel):
    type: Literal["spectrum_scan"] = "spectrum_scan"
    start: float
    stop: float
    points: int = Field(201, ge=2)

    @field_validator("start", "stop", mode="before")
    @classmethod
    def _parse(cls, v: Any, info: ValidationInfo) -> float:
        return parse_frequency(v, _gamma(info))


class CoolingTrajectorySettings(_TimeModel):
    type: Literal["cooling_trajectory"] = "cooling_trajectory"
    duration: float
    nbar0: Optional[float] = Field(None, ge=0.0, description="Omitted: Doppler n-bar of the mode")
    samples: int = Field(50, ge=5)
    fock_dim: Optional[int] = Field(None, ge=2)
    include_heating: bool = False
    method: Literal["rk", "dense"] = "rk"
    check_truncation: bool = Field(False, description="Rerun at fock_dim + engines.truncation_step and fail if n-bar moves")


class RabiMapSettings(_TimeModel):
    type: Literal["rabi_map"] = "rabi_map"
    pump: List[float] = Field(..., min_length=1, description="sigma397 Rabi frequencies")
    probe: List[float] = Field(..., min_length=1, description="pi397 Rabi frequencies")
    duration: float
    nbar0: Optional[float] = Field(None, ge=0.0)
    engine: Literal["rate", "master"] = "rate"
    sideband: SidebandSettings = Field(default_factory=SidebandSettings)

    @field_validator("pump", "probe", mode="before")
    @classmethod
    def _parse(cls, v: Any, info: ValidationInfo) -> List[float]:
        return [parse_frequency(x, _gamma(info)) for x in v]


class DetuningSweepSettings(BaseModel):
    type: Literal["detuning_sweep"] = "detuning_sweep"
    deltas: List[float] = Field(..., min_length=1)
    retune: bool = True

    @field_validator("deltas", mode="before")
    @classmethod
    def _parse(cls, v: Any, info: ValidationInfo) -> List[float]:
        return [parse_frequency(x, _gamma(info)) for x in v]


class TtmRateSettings(_TimeModel):
    type: Literal["ttm_rate"] = "ttm_rate"
    nbar0: List[float] = Field(default_factory=lambda: [0.5, 1.0, 5.0], min_length=1)
    dt: Optional[float] = Field(None, description="Omitted: dt_gamma / Gamma from config")
    steps: Optional[int] = Field(None, ge=2)
    horizon: Optional[int] = Field(None, ge=2)
    engine: Literal["rate", "master"] = "rate"
    fock_dim: Optional[int] = Field(None, ge=2)


class ThermometryReplaySettings(_TimeModel):
    type: Literal["thermometry_replay"] = "thermometry_replay"
    duration: Optional[float] = Field(None, description="Simulated cooling time; omitted when replaying a CSV")
    trajectory_csv: Optional[str] = Field(None, description="Replay a cooling_trajectory CSV (_fock or _nbar) instead of simulating")
    nbar0: Optional[float] = Field(None, ge=0.0)
    samples: int = Field(40, ge=5)
    engine: Literal["rate", "master"] = "rate"
    pipeline: Literal["direct", "two_stage"] = "direct"
    fock_dim: Optional[int] = Field(None, ge=2)
    sideband: SidebandSettings = Field(default_factory=SidebandSettings)
    check_truncation: bool = False

    @model_validator(mode="after")
    def _check_source(self) -> "ThermometryReplaySettings":
        if (self.duration is None) == (self.trajectory_csv is None):
            raise ValueError("give exactly one of duration or trajectory_csv")
        return self


class SegmentSettings(_TimeModel):
    scheme: SchemeSettings
    duration: float = Field(..., ge=0.0)


class PulseSequenceSettings(BaseModel):
    type: Literal["pulse_sequence"] = "pulse_sequence"
    segments: List[SegmentSettings] = Field(..., min_length=1)
    initial_nbar: Dict[Literal["axial", "radial1", "radial2"], float]
    engine: Literal["rate", "master"] = "rate"
    samples: int = Field(40, ge=2)
    fock_dim: Optional[int] = Field(None, ge=2)


ExperimentSettings = Annotated[
    Union[
        SpectrumScanSettings,
        CoolingTrajectorySettings,
        RabiMapSettings,
        DetuningSweepSettings,
        TtmRateSettings,
        ThermometryReplaySettings,
        PulseSequenceSettings,
    ],
    Field(discriminator="type"),
]


class SweepSettings(BaseModel):
    parameter: str = Field(..., json_schema_extra={"example": "lasers.sigma397.rabi"})
    values: List[Union[float, str]] = Field(..., min_length=1)


class Scenario(BaseModel):
    name: str = Field(..., min_length=1)
    physics: PhysicsSettings = Field(default_factory=PhysicsSettings)
    scheme: SchemeSettings
    experiment: ExperimentSettings
    sweep: Optional[SweepSettings] = None
    output: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check_sweep(self) -> "Scenario":
        if self.output is None:
            self.output = self.name
        if self.sweep is not None:
            _resolve(self.scheme.model_dump(), self.sweep.parameter)
        return self

    @property
    def prefix(self) -> str:
        return self.output or self.name

    def to_scheme(self) -> CoolingScheme:
        return self.scheme.to_scheme(self.physics)

    def with_parameter(self, parameter: str, value: Any) -> "Scenario":
        """Copy with one scheme parameter replaced (dotted path; lasers are addressed by label)."""
        data = self.model_dump()
        scheme = copy.deepcopy(data["scheme"])
        container, key = _resolve(scheme, parameter)
        container[key] = value
        data["scheme"] = scheme
        data["sweep"] = None
        return Scenario.validate_with_context(data)

    @classmethod
    def validate_with_context(cls, data: Dict[str, Any]) -> "Scenario":
        gamma_raw = (data.get("physics") or {}).get("gamma")
        gamma = _default_gamma() if gamma_raw is None else parse_frequency(gamma_raw)
        return cls.model_validate(data, context={"gamma_total": gamma})

    @classmethod
    def from_yaml(cls, text: str) -> "Scenario":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError("Scenario is not valid YAML", {"line": line, "problem": getattr(e, "problem", str(e))}) from e
        if not isinstance(data, dict):
            raise ConfigError("Scenario must be a mapping")
        try:
            return cls.validate_with_context(data)
        except ValidationError as e:
            fields = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
            raise ConfigError("Scenario failed validation", {"fields": fields}) from e
        except ValueError as e:
            raise ConfigError("Scenario failed validation", {"fields": str(e)}) from e

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _resolve(scheme: Dict[str, Any], parameter: str) -> tuple:
    """(container, key) for a dotted parameter inside the scheme mapping; lasers are addressed by label."""
    parts = parameter.split(".")
    node: Any = scheme
    i = 0
    while i < len(parts) - 1:
        part = parts[i]
        if part == "lasers" and isinstance(node, dict) and i + 2 < len(parts):
            matches = [l for l in node.get("lasers", []) if l.get("label") == parts[i + 1]]
            if not matches:
                raise ValueError(f"sweep parameter '{parameter}': no laser '{parts[i + 1]}'")
            node = matches[0]
            i += 2
            continue
        if not isinstance(node, dict) or not isinstance(node.get(part), dict):
            raise ValueError(f"sweep parameter '{parameter}' does not exist in the scheme")
        node = node[part]
        i += 1
    key = parts[-1]
    if not isinstance(node, dict) or key not in node:
        raise ValueError(f"sweep parameter '{parameter}' does not exist in the scheme")
    return node, key
