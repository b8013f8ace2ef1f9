"""Scenario and sweep configuration."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from airmimo.channel import TABLE_NMSE_BY_PILOTS, ArrayGeometry, MultipathSpec
from airmimo.errors import ConfigError, FormatError

__all__ = ["SCHEMES", "ScenarioConfig", "SweepSpec", "load_yaml", "reference_preset", "parse_config"]

SCHEMES = ("rzf", "wmmse_naive", "wmmse_robust")
SWEEP_AXES = ("snr_db", "target_nmse", "K", "Q")

SNR_CONVENTION = (
    "SNR_dB = 10*log10(P_t / (N_c * noise_variance)); "
    "channel normalised to unit average per-antenna gain"
)


class ScenarioConfig(BaseModel):
    """Every physical constant of one simulated operating point.

    ``noise_variance`` is derived from ``snr_db`` as
    ``P_t / (N_c * 10**(snr_db / 10))``. The CSI error level comes from
    ``target_nmse`` or, alternatively, from ``pilot_length`` through the
    pilot-length/NMSE table.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(4, ge=1)
    n_y: int = Field(8, ge=1)
    n_z: int = Field(8, ge=1)
    N_c: int = Field(64, ge=1)
    Q: int = Field(128, ge=1)
    P_t: float = Field(1.0, gt=0)
    snr_db: float = 20.0
    paths_per_user: Union[int, List[int]] = 2
    target_nmse: Optional[float] = Field(None, ge=0)
    pilot_length: Optional[int] = None
    max_delay_samples: Optional[float] = Field(None, ge=0)
    sampling_interval: float = Field(1.0 / 30.72e6, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    trials: int = Field(1, ge=1)
    schemes: List[Literal["rzf", "wmmse_naive", "wmmse_robust"]] = Field(default_factory=lambda: list(SCHEMES))
    iterations: int = Field(10, ge=1)
    symbols: Literal["unit-gaussian", "qpsk"] = "unit-gaussian"
    record_timing: bool = False

    @field_validator("snr_db")
    @classmethod
    def _finite_snr(cls, v):
        if not math.isfinite(v):
            raise ValueError("snr_db must be finite")
        return v

    @field_validator("paths_per_user")
    @classmethod
    def _paths(cls, v):
        counts = [v] if isinstance(v, int) else v
        if not counts or any(c < 1 for c in counts):
            raise ValueError("every user needs at least one path")
        return v

    @field_validator("schemes")
    @classmethod
    def _schemes(cls, v):
        if not v:
            raise ValueError("at least one scheme is required")
        if len(set(v)) != len(v):
            raise ValueError("schemes must be unique")
        return v

    @field_validator("pilot_length")
    @classmethod
    def _pilots(cls, v):
        if v is not None and v not in TABLE_NMSE_BY_PILOTS:
            raise ValueError(f"pilot_length must be one of {sorted(TABLE_NMSE_BY_PILOTS)}")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if self.K > self.n_y * self.n_z:
            raise ValueError(f"K={self.K} exceeds N_t={self.n_y * self.n_z}")
        if isinstance(self.paths_per_user, list) and len(self.paths_per_user) != self.K:
            raise ValueError("paths_per_user list must have one entry per user")
        if self.max_delay_samples is not None and self.max_delay_samples >= self.N_c:
            raise ValueError("max_delay_samples must be smaller than N_c")
        if self.target_nmse is not None and self.pilot_length is not None:
            raise ValueError("give either target_nmse or pilot_length, not both")
        return self

    @property
    def N_t(self) -> int:
        return self.n_y * self.n_z

    @property
    def nmse(self) -> float:
        if self.pilot_length is not None:
            return TABLE_NMSE_BY_PILOTS[self.pilot_length]
        return self.target_nmse if self.target_nmse is not None else 0.0

    @property
    def noise_variance(self) -> float:
        return self.P_t / (self.N_c * 10.0 ** (self.snr_db / 10.0))

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_y, self.n_z, 0.5)

    @property
    def delay_spread_samples(self) -> float:
        # a quarter of the OFDM symbol unless set explicitly
        return self.N_c / 4 if self.max_delay_samples is None else self.max_delay_samples

    def multipath(self) -> MultipathSpec:
        paths = self.paths_per_user if isinstance(self.paths_per_user, int) else tuple(self.paths_per_user)
        return MultipathSpec(paths, self.N_c, self.sampling_interval, self.delay_spread_samples * self.sampling_interval)

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_axis(self, axis: str, value) -> "ScenarioConfig":
        if axis == "target_nmse":
            update = {"target_nmse": float(value), "pilot_length": None}
        elif axis in ("K", "Q"):
            update = {axis: int(value)}
        else:
            update = {axis: float(value)}
        return validate(self.model_dump() | update)


class SweepSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    axis: Literal["snr_db", "target_nmse", "K", "Q"]
    values: List[float] = Field(min_length=1)
    repetitions: int = Field(1, ge=1)


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def validate(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario: {_format_errors(exc)}") from None


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return data


def parse_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Load and validate a YAML (or JSON) scenario file.

    ``overrides`` take precedence over file values; ``None`` entries are
    ignored so unset CLI flags fall through to the file and then defaults.
    A top-level ``sweep`` mapping is allowed and ignored here.
    """
    data = load_yaml(path)
    data.pop("sweep", None)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return validate(data)


def parse_sweep(data: dict) -> SweepSpec:
    try:
        return SweepSpec.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid sweep: {_format_errors(exc)}") from None


def reference_preset(**overrides) -> ScenarioConfig:
    """8x8 half-wavelength UPA, 64 subcarriers, 4 users with 2 paths each."""
    base = dict(K=4, n_y=8, n_z=8, N_c=64, paths_per_user=2, Q=128, snr_db=20.0, pilot_length=32)
    base.update(overrides)
    return validate(base)
