"""Sparse multipath MIMO-OFDM channels on a uniform planar array, and CSI errors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from airmimo.tensor import RandomSource, as_complex, sample_complex_gaussian

__all__ = [
    "ArrayGeometry",
    "CsiErrorModel",
    "MultipathSpec",
    "PathParams",
    "draw_paths",
    "frequency_response",
    "generate_channel_tensor",
    "inject_csi_error",
    "nmse",
    "steering_vector",
    "TABLE_NMSE_BY_PILOTS",
]

# Channel-estimation NMSE at 20 dB SNR versus number of pilot OFDM symbols.
TABLE_NMSE_BY_PILOTS = {4: 0.205, 8: 0.063, 16: 0.020, 32: 0.011, 64: 0.006}

# Stream tags used inside a single trial.
TAG_CHANNEL = 0
TAG_CSI_ERROR = 1


@dataclass(frozen=True)
class ArrayGeometry:
    n_y: int = 8
    n_z: int = 8
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ValueError(f"array dimensions must be >= 1, got {self.n_y}x{self.n_z}")
        if not self.spacing_over_wavelength > 0:
            raise ValueError("spacing_over_wavelength must be positive")

    @property
    def num_antennas(self) -> int:
        return self.n_y * self.n_z


@dataclass(frozen=True)
class PathParams:
    gain: complex
    azimuth: float
    zenith: float
    delay: float

    def __post_init__(self):
        if not -np.pi <= self.azimuth <= np.pi:
            raise ValueError(f"azimuth {self.azimuth} outside [-pi, pi]")
        if not 0.0 <= self.zenith <= np.pi / 4:
            raise ValueError(f"zenith {self.zenith} outside [0, pi/4]")
        if self.delay < 0:
            raise ValueError(f"delay must be non-negative, got {self.delay}")


@dataclass(frozen=True)
class MultipathSpec:
    """Per-user path counts and OFDM timing.

    ``paths_per_user`` is either a single count shared by every user or one
    count per user. ``max_delay`` defaults to a quarter of the OFDM symbol
    (16 samples at 64 subcarriers).
    """

    paths_per_user: Union[int, Sequence[int]] = 2
    num_subcarriers: int = 64
    sampling_interval: float = 1.0 / 30.72e6
    max_delay: Optional[float] = None

    def __post_init__(self):
        counts = np.atleast_1d(self.paths_per_user)
        if np.any(counts < 1):
            raise ValueError("every user needs at least one path")
        if self.num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        if not self.sampling_interval > 0:
            raise ValueError("sampling_interval must be positive")
        if self.max_delay is None:
            object.__setattr__(self, "max_delay", self.num_subcarriers * self.sampling_interval / 4)
        if not 0 <= self.max_delay < self.num_subcarriers * self.sampling_interval:
            raise ValueError("max_delay must lie in [0, num_subcarriers * sampling_interval)")

    def num_paths(self, k: int) -> int:
        if np.isscalar(self.paths_per_user):
            return int(self.paths_per_user)
        return int(self.paths_per_user[k])


@dataclass(frozen=True)
class CsiErrorModel:
    """Zero-mean complex Gaussian CSI error with covariance ``covariance``.

    Build the default scaled-identity model with :meth:`from_nmse`.
    """

    covariance: np.ndarray
    target_nmse: float = field(default=0.0)

    def __post_init__(self):
        cov = as_complex(self.covariance, "covariance")
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"covariance must be square, got shape {cov.shape}")
        scale = max(float(np.max(np.abs(cov), initial=0.0)), 1.0)
        if np.max(np.abs(cov - cov.conj().T), initial=0.0) > 1e-12 * scale:
            raise ValueError("covariance must be Hermitian")
        if np.min(np.linalg.eigvalsh(cov), initial=0.0) < -1e-10 * scale:
            raise ValueError("covariance must be positive semi-definite")
        if self.target_nmse < 0:
            raise ValueError("target_nmse must be non-negative")
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_nmse(cls, target_nmse: float, num_antennas: int) -> "CsiErrorModel":
        # Unit average per-antenna channel gain makes the per-entry error
        # variance equal to the NMSE.
        if target_nmse < 0:
            raise ValueError("target_nmse must be non-negative")
        return cls(target_nmse * np.eye(num_antennas), target_nmse)

    @property
    def num_antennas(self) -> int:
        return self.covariance.shape[0]

    def sqrt_factor(self) -> np.ndarray:
        """Return ``G`` with ``G @ G^H == covariance`` (PSD-safe)."""
        w, v = np.linalg.eigh(self.covariance)
        return v * np.sqrt(np.clip(w, 0.0, None))


def steering_vector(azimuth: float, zenith: float, geom: ArrayGeometry) -> np.ndarray:
    """UPA response; entry ``n * n_z + m`` has phase ``2 pi d/lambda (n sin(az) cos(ze) + m sin(ze))``."""
    n = np.arange(geom.n_y)[:, None]
    m = np.arange(geom.n_z)[None, :]
    phase = 2 * np.pi * geom.spacing_over_wavelength * (
        n * np.sin(azimuth) * np.cos(zenith) + m * np.sin(zenith)
    )
    return np.exp(1j * phase).reshape(-1)


def draw_paths(rng, spec: MultipathSpec, k: int) -> List[PathParams]:
    gen = rng.generator(TAG_CHANNEL) if isinstance(rng, RandomSource) else rng
    n_paths = spec.num_paths(k)
    gains = sample_complex_gaussian(gen, n_paths, 1.0)
    azimuth = gen.uniform(-np.pi, np.pi, n_paths)
    zenith = gen.uniform(0.0, np.pi / 4, n_paths)
    delay = gen.uniform(0.0, spec.max_delay, n_paths)
    return [
        PathParams(complex(gains[i]), float(azimuth[i]), float(zenith[i]), float(delay[i]))
        for i in range(n_paths)
    ]


def frequency_response(paths: Sequence[PathParams], spec: MultipathSpec, geom: ArrayGeometry) -> np.ndarray:
    """Return the ``N_c x N_t`` per-subcarrier channel for one user."""
    if not paths:
        raise ValueError("at least one path is required")
    n = np.arange(spec.num_subcarriers)
    out = np.zeros((spec.num_subcarriers, geom.num_antennas), dtype=np.complex128)
    for p in paths:
        delay_phase = np.exp(-2j * np.pi * n * p.delay / (spec.num_subcarriers * spec.sampling_interval))
        out += p.gain * np.outer(delay_phase, steering_vector(p.azimuth, p.zenith, geom))
    return out / np.sqrt(len(paths))


def generate_channel_tensor(rng, num_users: int, spec: MultipathSpec, geom: ArrayGeometry) -> np.ndarray:
    """Stack independent per-user responses into a ``K x N_c x N_t`` tensor.

    A ``RandomSource`` is consumed through its channel sub-stream so that
    channel draws stay aligned across schemes and error levels.
    """
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    gen = rng.generator(TAG_CHANNEL) if isinstance(rng, RandomSource) else rng
    return np.stack([frequency_response(draw_paths(gen, spec, k), spec, geom) for k in range(num_users)])


def inject_csi_error(rng, h, err: CsiErrorModel) -> np.ndarray:
    """Return the estimate ``h_hat = h - dh`` with ``dh ~ CN(0, R_e)`` i.i.d. over (user, subcarrier)."""
    h = as_complex(h, "h")
    if h.shape[-1] != err.num_antennas:
        raise ValueError(f"channel has {h.shape[-1]} antennas, error model {err.num_antennas}")
    if not np.any(err.covariance):
        return h.copy()
    gen = rng.generator(TAG_CSI_ERROR) if isinstance(rng, RandomSource) else rng
    white = sample_complex_gaussian(gen, h.shape, 1.0)
    dh = white @ err.sqrt_factor().T
    return h - dh


def nmse(h, h_hat) -> float:
    h = np.asarray(h)
    h_hat = np.asarray(h_hat)
    if h.shape != h_hat.shape:
        raise ValueError(f"shape mismatch {h.shape} vs {h_hat.shape}")
    ref = np.vdot(h, h).real
    if ref == 0:
        raise ValueError("reference channel has zero energy")
    diff = h - h_hat
    return float(np.vdot(diff, diff).real / ref)
