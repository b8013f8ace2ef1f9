"""Monte Carlo transmission over the simulated downlink.

Grids are plain complex arrays:

* symbols ``(N_c, K, Q)``
* transmit grids ``(N_c, N_t, Q)``
* received grids ``(K, N_c, Q)``
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from airmimo.beamforming import (
    Beamformer,
    PowerAllocation,
    WmmseConfig,
    equalizers_and_weights,
    evaluate_sum_rate,
    rzf_precoder,
    sinr_and_rate,
    wmmse_solve,
)
from airmimo.channel import CsiErrorModel, generate_channel_tensor, inject_csi_error
from airmimo.config import ScenarioConfig
from airmimo.errors import NumericError
from airmimo.tensor import RandomSource, as_complex, sample_complex_gaussian

__all__ = [
    "HybridCombineConfig",
    "LinkReport",
    "apply_precoding",
    "empirical_metrics",
    "equalize_estimate",
    "hybrid_combine",
    "power_normalize",
    "propagate",
    "random_symbols",
    "run_trial",
]

TAG_SYMBOLS = 2
TAG_NOISE = 3


@dataclass(frozen=True)
class HybridCombineConfig:
    beta_d: float = 0.0
    beta_m: float = 1.0

    def __post_init__(self):
        if self.beta_d == 0 and self.beta_m == 0:
            raise ValueError("at least one combining weight must be nonzero")


@dataclass
class LinkReport:
    scheme: str
    seed: int
    stream_index: int
    scenario_hash: str
    analytical_mse: np.ndarray  # (K, N_c)
    analytical_sinr: np.ndarray
    analytical_rate: np.ndarray
    empirical_mse: np.ndarray
    empirical_sinr: np.ndarray
    per_user_rate: np.ndarray  # (K,)
    sum_rate: float
    tx_power: float
    power_scale: float
    zero_transmit: bool = False
    elapsed_ms: float = field(default=0.0, compare=False)

    @property
    def min_user_rate(self) -> float:
        return float(self.per_user_rate.min())

    def to_dict(self, include_timing: bool = False) -> dict:
        out = asdict(self)
        if not include_timing:
            del out["elapsed_ms"]
        for key, value in out.items():
            if isinstance(value, np.ndarray):
                out[key] = value.tolist()
        return out


def random_symbols(rng, num_users: int, num_subcarriers: int, q: int, kind: str = "unit-gaussian") -> np.ndarray:
    """Unit-power i.i.d. symbols of shape ``(N_c, K, Q)``."""
    if min(num_users, num_subcarriers, q) < 1:
        raise ValueError("grid dimensions must be >= 1")
    gen = rng.generator(TAG_SYMBOLS) if isinstance(rng, RandomSource) else rng
    shape = (num_subcarriers, num_users, q)
    if kind == "unit-gaussian":
        return sample_complex_gaussian(gen, shape, 1.0)
    if kind == "qpsk":
        bits = gen.integers(0, 2, size=shape + (2,))
        return ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1])) / np.sqrt(2)
    raise ValueError(f"unknown symbol kind {kind!r}")


def apply_precoding(f, symbols) -> np.ndarray:
    f = f.matrices if isinstance(f, Beamformer) else np.asarray(f)
    symbols = np.asarray(symbols)
    if f.shape[0] != symbols.shape[0] or f.shape[2] != symbols.shape[1]:
        raise ValueError(f"beamformer {f.shape} incompatible with symbols {symbols.shape}")
    return f @ symbols


def hybrid_combine(x_d, x_m, cfg: HybridCombineConfig = HybridCombineConfig()) -> np.ndarray:
    x_d = np.asarray(x_d)
    x_m = np.asarray(x_m)
    if x_d.shape != x_m.shape:
        raise ValueError(f"shape mismatch {x_d.shape} vs {x_m.shape}")
    return cfg.beta_d * x_d + cfg.beta_m * x_m


def power_normalize(x_c, total_power: float, q: int, *, return_scale: bool = False):
    """Shrink ``x_c`` onto the ball ``|X|_F <= sqrt(Q * P_t)``; never amplify.

    An all-zero grid is returned unchanged with scale 0.
    """
    x_c = np.asarray(x_c)
    norm = float(np.linalg.norm(x_c))
    if norm == 0:
        scale = 0.0
        x = x_c.copy()
    else:
        scale = min(np.sqrt(q * total_power), norm) / norm
        x = x_c * scale
    return (x, scale) if return_scale else x


def propagate(rng, h_true, x, noise_variance: float, *, return_noise: bool = False):
    """``y[k, n, q] = h[k,n]^H x[n, :, q] + z``, with ``z ~ CN(0, noise_variance)``."""
    h = as_complex(h_true, "h_true")
    x = np.asarray(x)
    if h.shape[1] != x.shape[0] or h.shape[2] != x.shape[1]:
        raise ValueError(f"channel {h.shape} incompatible with transmit grid {x.shape}")
    y = np.einsum("knt,ntq->knq", h.conj(), x)
    gen = rng.generator(TAG_NOISE) if isinstance(rng, RandomSource) else rng
    z = sample_complex_gaussian(gen, y.shape, noise_variance)
    y = y + z
    return (y, z) if return_noise else y


def equalize_estimate(y, e) -> np.ndarray:
    """Per-user scalar equalization; returns estimates shaped like the symbols ``(N_c, K, Q)``."""
    y = np.asarray(y)
    e = np.asarray(e)
    if e.shape != y.shape[:2]:
        raise ValueError(f"equalizer {e.shape} incompatible with received grid {y.shape}")
    return np.swapaxes(e[..., None] * y, 0, 1)


def empirical_metrics(r_hat, r, signal, interference, noise) -> dict:
    """Sample MSE and SINR per (user, subcarrier).

    ``r_hat`` and ``r`` are ``(N_c, K, Q)``; ``signal``, ``interference``
    and ``noise`` are the received-grid components ``(K, N_c, Q)`` whose
    sum is the observation.
    """
    err = np.asarray(r_hat) - np.asarray(r)
    mse = np.mean(np.abs(err) ** 2, axis=-1).T
    p_sig = np.mean(np.abs(signal) ** 2, axis=-1)
    p_int = np.mean(np.abs(interference) ** 2, axis=-1)
    p_noise = np.mean(np.abs(noise) ** 2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = p_sig / (p_int + p_noise)
    return {"mse": mse, "sinr": sinr, "signal_power": p_sig, "interference_power": p_int, "noise_power": p_noise}


def design_beamformer(scheme: str, h_hat, scenario: ScenarioConfig):
    """Return ``(Beamformer, PowerAllocation)`` for ``scheme`` from the estimated channel."""
    sig2 = scenario.noise_variance
    n_c = scenario.N_c
    if scheme == "rzf":
        p = np.full(n_c, scenario.P_t / n_c)
        f = np.stack([rzf_precoder(h_hat[:, n, :], sig2, p[n]) for n in range(n_c)])
        beam, alloc = Beamformer(f), PowerAllocation(p, scenario.P_t)
    elif scheme in ("wmmse_naive", "wmmse_robust"):
        cov = scenario.nmse if scheme == "wmmse_robust" else None
        cfg = WmmseConfig(sig2, scenario.P_t, scenario.iterations, cov)
        res = wmmse_solve(h_hat, cfg)
        beam, alloc = res.beamformer, res.power
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    beam.check_power(alloc)
    return beam, alloc


def run_trial(scenario: ScenarioConfig, scheme: str, rng: RandomSource,
              hybrid: HybridCombineConfig = HybridCombineConfig(), x_d=None) -> LinkReport:
    """Generate a channel, design a beamformer from its estimate, transmit and measure.

    The receiver-side equalizer is the MMSE scalar for the true equivalent
    channel. Rates are evaluated with the true channel and the beamformer
    actually radiated (after the transmit-power projection).
    """
    start = time.perf_counter()
    k, n_c, q = scenario.K, scenario.N_c, scenario.Q
    sig2 = scenario.noise_variance

    h = generate_channel_tensor(rng, k, scenario.multipath(), scenario.geometry())
    err = CsiErrorModel.from_nmse(scenario.nmse, scenario.N_t)
    h_hat = inject_csi_error(rng, h, err)
    beam, _ = design_beamformer(scheme, h_hat, scenario)

    symbols = random_symbols(rng, k, n_c, q, scenario.symbols)
    x_m = apply_precoding(beam, symbols)
    x_d = np.zeros_like(x_m) if x_d is None else x_d
    x, scale = power_normalize(hybrid_combine(x_d, x_m, hybrid), scenario.P_t, q, return_scale=True)
    tx_power = float(np.vdot(x, x).real)
    if tx_power > q * scenario.P_t + 1e-9:
        raise NumericError(f"transmit grid power {tx_power!r} exceeds Q*P_t={q * scenario.P_t!r}")

    y, z = propagate(rng, h, x, sig2, return_noise=True)

    f_eff = scale * hybrid.beta_m * beam.matrices
    h_nk = np.swapaxes(h, 0, 1)
    e, eps, _ = equalizers_and_weights(h_nk, f_eff, None, sig2)
    r_hat = equalize_estimate(y, e.T)

    gain = np.diagonal(np.conj(h_nk) @ f_eff, axis1=-2, axis2=-1)  # (N_c, K)
    signal = np.swapaxes(gain[..., None] * symbols, 0, 1)
    interference = (y - z) - signal
    emp = empirical_metrics(r_hat, symbols, signal, interference, z)

    zero_tx = scale == 0.0
    eps_k = eps.T
    if zero_tx:
        gamma, rate = np.zeros_like(eps_k), np.zeros_like(eps_k)
    else:
        gamma, rate = sinr_and_rate(np.clip(eps_k, np.finfo(float).tiny, 1.0))
    per_user, total = evaluate_sum_rate(h, f_eff, sig2)
    return LinkReport(
        scheme=scheme,
        seed=rng.seed,
        stream_index=rng.stream_index,
        scenario_hash=scenario.digest(),
        analytical_mse=eps_k,
        analytical_sinr=gamma,
        analytical_rate=rate,
        empirical_mse=emp["mse"],
        empirical_sinr=emp["sinr"],
        per_user_rate=per_user,
        sum_rate=total,
        tx_power=tx_power,
        power_scale=float(scale),
        zero_transmit=bool(zero_tx),
        elapsed_ms=(time.perf_counter() - start) * 1e3,
    )
