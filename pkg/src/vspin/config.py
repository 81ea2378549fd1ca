"""Run configuration: a strict JSON schema with defaults.

Unknown keys are rejected anywhere in the document, and errors name the
offending key path and the expected type.
"""

import json
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .constants import PhysicalConstants
from .errors import ConfigError
from .hamiltonian import GN_VANADIUM_51, DefectModel, ManifoldParams
from .presets import PRESET_NAMES, make_preset
from .spectra import DEFAULT_DETUNING_AXIS, DEFAULT_FIELD_AXIS, DEFAULT_KERNEL_FWHM


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ManifoldConfig(_Strict):
    g_tensor: List[List[float]] | List[float] | float
    A_tensor: List[List[float]] | List[float] | float


class InlineModel(_Strict):
    name: str = "custom"
    ground: ManifoldConfig
    excited: ManifoldConfig
    zpl_wavelength_nm: float = Field(gt=0)


class ConstantsConfig(_Strict):
    mu_B_over_h: Optional[float] = Field(None, gt=0)
    mu_N_over_h: Optional[float] = Field(None, gt=0)
    k_B_over_h: Optional[float] = Field(None, gt=0)
    g_N: Optional[float] = None


class EOMConfig(_Strict):
    """Two-sideband scan: the two-photon detuning is ``fixed - swept``."""

    fixed_sideband_MHz: float = 4500.0
    swept_min_MHz: float = 3000.0
    swept_max_MHz: float = 4500.0


class ScanConfig(_Strict):
    field_min: float = DEFAULT_FIELD_AXIS[0]
    field_max: float = DEFAULT_FIELD_AXIS[1]
    field_steps: int = Field(200, ge=1)
    detuning_min: float = DEFAULT_DETUNING_AXIS[0]
    detuning_max: float = DEFAULT_DETUNING_AXIS[1]
    detuning_steps: int = Field(300, ge=1)
    kernel_fwhm: float = Field(DEFAULT_KERNEL_FWHM, gt=0)
    spin_flip_weight: float = Field(0.0, ge=0, le=1)
    include_x: bool = False
    eom: Optional[EOMConfig] = None

    @model_validator(mode="after")
    def _ranges(self):
        if self.field_steps > 1 and not self.field_max > self.field_min:
            raise ValueError("field_max must exceed field_min")
        if self.detuning_steps > 1 and not self.detuning_max > self.detuning_min:
            raise ValueError("detuning_max must exceed detuning_min")
        return self

    def field_grid(self):
        return np.linspace(self.field_min, self.field_max, self.field_steps)

    def detuning_grid(self):
        if self.eom is not None:
            lo = self.eom.fixed_sideband_MHz - self.eom.swept_max_MHz
            hi = self.eom.fixed_sideband_MHz - self.eom.swept_min_MHz
            return np.linspace(lo, hi, self.detuning_steps)
        return np.linspace(self.detuning_min, self.detuning_max, self.detuning_steps)


class EigConfig(_Strict):
    fields: List[float] = Field(default_factory=lambda: [0.0])


class RatesConfig(_Strict):
    Gamma_opt: Optional[float] = Field(None, ge=0)
    beta_flip: Optional[float] = Field(None, ge=0, le=1)
    Gamma_1: Optional[float] = Field(None, ge=0)
    Gamma_0: Optional[float] = Field(None, ge=0)
    shelf_in: Optional[float] = Field(None, ge=0)
    kappa_ion: Optional[float] = Field(None, ge=0)
    green_reset_rate: Optional[float] = Field(None, ge=0)
    green_cw_rate: Optional[float] = Field(None, ge=0)
    linewidth_fwhm: Optional[float] = Field(None, gt=0)
    temperature: Optional[float] = Field(None, ge=0)

    def build(self):
        from .dynamics import RateParams
        return RateParams(**{k: v for k, v in self.model_dump().items() if v is not None})


class DynamicsConfig(_Strict):
    rates: RatesConfig = Field(default_factory=RatesConfig)
    taus: Optional[List[float]] = None
    pump_duration: float = Field(200e-6, gt=0)
    pump_rate: float = Field(2e6, ge=0)
    trace_bins: int = Field(200, ge=1)
    noise: float = Field(0.0, ge=0)
    sequence: Optional[dict] = None

    @field_validator("taus")
    @classmethod
    def _ascending(cls, v):
        if v is not None and (len(v) == 0 or np.any(np.diff(v) <= 0) or min(v) < 0):
            raise ValueError("taus must be non-empty, non-negative and strictly ascending")
        return v


class FitConfig(_Strict):
    input: Optional[str] = None
    template: Optional[str] = None
    n_starts: int = Field(8, ge=1)
    noise: float = Field(0.0, ge=0)
    splitting_MHz: Optional[float] = Field(None, gt=0)
    g_ground: Optional[float] = None
    slope_MHz_per_mT: Optional[float] = None
    single_spin_fwhm_GHz: float = Field(1.6, gt=0)
    start_perturbation: float = Field(0.2, ge=0, lt=1)
    temperature: float = Field(0.230, gt=0)


class RunConfig(_Strict):
    preset: Literal["4H-alpha", "6H-alpha"] = "4H-alpha"
    model: Optional[InlineModel] = None
    constants: ConstantsConfig = Field(default_factory=ConstantsConfig)
    scan: ScanConfig = Field(default_factory=ScanConfig)
    eig: EigConfig = Field(default_factory=EigConfig)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    fit: FitConfig = Field(default_factory=FitConfig)
    out: str = "out"
    seed: int = 0

    def physical_constants(self):
        kw = {k: v for k, v in self.constants.model_dump().items() if v is not None and k != "g_N"}
        return PhysicalConstants(**kw)

    def defect_model(self):
        g_N = GN_VANADIUM_51 if self.constants.g_N is None else self.constants.g_N
        if self.model is None:
            return make_preset(self.preset, g_N=g_N)
        from .constants import wavelength_to_MHz
        m = self.model
        ground = ManifoldParams(np.asarray(m.ground.g_tensor), np.asarray(m.ground.A_tensor), g_N)
        excited = ManifoldParams(np.asarray(m.excited.g_tensor), np.asarray(m.excited.A_tensor), g_N)
        return DefectModel(m.name, ground, excited, wavelength_to_MHz(m.zpl_wavelength_nm))


def _describe(err):
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        if e["type"] == "extra_forbidden":
            parts.append(f"unknown key '{loc}'")
        else:
            parts.append(f"key '{loc}': {e['msg']}")
    return "; ".join(parts)


def config_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    if "preset" in d and d["preset"] not in PRESET_NAMES:
        raise ConfigError(f"key 'preset': unknown preset {d['preset']!r}, expected one of {list(PRESET_NAMES)}")
    try:
        return RunConfig.model_validate(d)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def parse_config(path):
    """Read and validate a JSON run configuration.

    Raises
    ------
    ConfigError
        Unreadable file, invalid JSON, unknown key or wrong type.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return config_from_dict(doc)
