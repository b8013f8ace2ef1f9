"""Error-covariance-aware WMMSE beamforming, RZF baseline and water-filling.

Array conventions
-----------------
* channel tensors: ``(K, N_c, N_t)``; row ``h[k, n]`` is the column vector
  ``h[k,n]`` stored flat, so ``h^H f == np.vdot(h, f)``.
* beamformers: ``(N_c, N_t, K)``; column ``k`` of slice ``n`` is ``f[k, n]``.
* equalizers and weights are returned as ``(K, N_c)`` arrays.

``error_cov`` arguments accept ``None`` (perfect CSI), a scalar ``s`` meaning
``s * I``, or a full ``N_t x N_t`` Hermitian PSD matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from airmimo.errors import ConfigError, ContractError, NumericError
from airmimo.tensor import as_complex, hermitian_solve

__all__ = [
    "Beamformer",
    "PowerAllocation",
    "RateProfile",
    "WmmseConfig",
    "WmmseResult",
    "evaluate_sum_rate",
    "mmse_equalizer",
    "mmse_residual",
    "mse_terms",
    "optimal_weight",
    "precoder_closed_form",
    "rate_profile",
    "received_power",
    "rzf_precoder",
    "sinr_and_rate",
    "waterfill_power",
    "wmmse_solve",
    "wmse",
    "zf_initial_beamformer",
]

LN2 = math.log(2.0)
POWER_RTOL = 1e-9


@dataclass(frozen=True)
class PowerAllocation:
    p: np.ndarray
    total: float
    water_level: float = float("nan")

    def __post_init__(self):
        if np.any(self.p < 0):
            raise NumericError("negative power in allocation")
        if self.p.sum() > self.total * (1 + POWER_RTOL):
            raise NumericError(f"allocation sums to {self.p.sum()!r} > total {self.total!r}")


@dataclass(frozen=True)
class Beamformer:
    matrices: np.ndarray  # (N_c, N_t, K)

    @property
    def powers(self) -> np.ndarray:
        return np.sum(np.abs(self.matrices) ** 2, axis=(1, 2))

    def check_power(self, alloc: PowerAllocation) -> None:
        pw = self.powers
        if np.any(pw > alloc.p * (1 + POWER_RTOL) + 1e-300):
            n = int(np.argmax(pw - alloc.p))
            raise NumericError(f"subcarrier {n}: |F|^2={pw[n]!r} exceeds p={alloc.p[n]!r}")
        if pw.sum() > alloc.total * (1 + POWER_RTOL):
            raise NumericError("beamformer exceeds total power")


@dataclass(frozen=True)
class WmmseConfig:
    noise_variance: float
    total_power: float = 1.0
    iterations: int = 10
    error_cov: object = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.noise_variance > 0:
            raise ConfigError("noise_variance must be positive")
        if not self.total_power > 0:
            raise ConfigError("total_power must be positive")


@dataclass(frozen=True)
class WmmseResult:
    beamformer: Beamformer
    power: PowerAllocation
    equalizers: np.ndarray  # (K, N_c)
    weights: np.ndarray  # (K, N_c)


# ---------------------------------------------------------------------------
# error covariance helpers


def _normalize_cov(error_cov, n_t: int):
    if error_cov is None:
        return None
    if np.isscalar(error_cov):
        if error_cov < 0:
            raise ValueError("error variance must be non-negative")
        return float(error_cov) if error_cov > 0 else None
    cov = as_complex(getattr(error_cov, "covariance", error_cov), "error_cov")
    if cov.shape != (n_t, n_t):
        raise ValueError(f"error covariance must be {n_t}x{n_t}, got {cov.shape}")
    if not np.any(cov):
        return None
    diag = cov[0, 0].real
    if np.array_equal(cov, diag * np.eye(n_t)):
        return float(diag)
    return cov


def _error_quadratic(f, cov) -> np.ndarray:
    """``f_m^H R_e f_m`` for every column ``m`` of ``f`` (leading axes kept)."""
    if cov is None:
        return np.zeros(f.shape[:-2] + f.shape[-1:])
    if isinstance(cov, float):
        return cov * np.sum(np.abs(f) ** 2, axis=-2)
    return np.einsum("...im,ij,...jm->...m", f.conj(), cov, f).real


# ---------------------------------------------------------------------------
# per-(k, n) scalar quantities


def received_power(h_hat_kn, f_all, noise_variance: float) -> float:
    """Average received power ``sum_m |h^H f_m|^2 + sigma^2``."""
    g = np.conj(np.asarray(h_hat_kn)) @ np.asarray(f_all)
    return float(np.sum(np.abs(g) ** 2) + noise_variance)


def _error_interference(f_all, k: int, error_cov) -> float:
    cov = _normalize_cov(error_cov, np.shape(f_all)[0])
    q = _error_quadratic(np.asarray(f_all, dtype=np.complex128), cov)
    return float(q.sum() - q[k])


def mse_terms(h_hat_kn, f_all, e_kn, error_cov, noise_variance: float, k: int) -> Tuple[float, float]:
    """Split the approximate MSE into its perfect-CSI part and CSI-error part."""
    t = received_power(h_hat_kn, f_all, noise_variance)
    g = np.vdot(h_hat_kn, np.asarray(f_all)[:, k])
    eps1 = abs(e_kn) ** 2 * t - 2.0 * (e_kn * g).real + 1.0
    eps2 = abs(e_kn) ** 2 * _error_interference(f_all, k, error_cov)
    return float(eps1), float(eps2)


def mmse_equalizer(h_hat_kn, f_all, error_cov, noise_variance: float, k: int) -> complex:
    t = received_power(h_hat_kn, f_all, noise_variance)
    g = np.vdot(h_hat_kn, np.asarray(f_all)[:, k])
    return complex(np.conj(g) / (t + _error_interference(f_all, k, error_cov)))


def mmse_residual(h_hat_kn, f_all, error_cov, noise_variance: float, k: int) -> float:
    t = received_power(h_hat_kn, f_all, noise_variance)
    g = np.vdot(h_hat_kn, np.asarray(f_all)[:, k])
    denom = t + _error_interference(f_all, k, error_cov)
    # (denom - |g|^2) / denom avoids cancellation when the SINR is large
    return float((denom - abs(g) ** 2) / denom)


def sinr_and_rate(eps):
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0) or np.any(eps > 1):
        raise ValueError("MMSE residual must lie in (0, 1]")
    # 1 - eps is exact for eps in [0.5, 1] (Sterbenz), so both forms keep
    # full relative precision for weak users where gamma and the rate are tiny
    gamma = (1.0 - eps) / eps
    near_one = eps >= 0.5
    rate = np.where(near_one, -np.log1p(np.where(near_one, eps - 1.0, 0.0)) / np.log(2.0), -np.log2(eps))
    if gamma.ndim == 0:
        return float(gamma), float(rate)
    return gamma, rate


def optimal_weight(eps):
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0):
        raise ValueError("MSE must be positive")
    lam = 1.0 / eps
    return float(lam) if lam.ndim == 0 else lam


def wmse(lam, eps):
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("MSE weight must be positive")
    xi = lam * np.asarray(eps) - np.log2(lam)
    return float(xi) if xi.ndim == 0 else xi


# ---------------------------------------------------------------------------
# batched (all users, all subcarriers) quantities


def _user_terms(h_nk, f, cov, noise_variance):
    """Return ``(G, T, err)`` for channels ``(..., K, N_t)`` and beamformers ``(..., N_t, K)``.

    ``G[..., k, m] = h_k^H f_m``; ``T`` is the received power; ``err`` the
    CSI-error interference ``sum_{m != k} f_m^H R_e f_m``.
    """
    g = np.conj(h_nk) @ f
    t = np.sum(np.abs(g) ** 2, axis=-1) + noise_variance
    q = _error_quadratic(f, cov)
    err = q.sum(axis=-1, keepdims=True) - q
    return g, t, err


def equalizers_and_weights(h_nk, f, error_cov, noise_variance):
    """MMSE equalizers, residuals and optimal weights, each ``(..., K)``."""
    cov = _normalize_cov(error_cov, h_nk.shape[-1])
    g, t, err = _user_terms(h_nk, f, cov, noise_variance)
    gkk = np.diagonal(g, axis1=-2, axis2=-1)
    denom = t + err
    e = np.conj(gkk) / denom
    eps = (denom - np.abs(gkk) ** 2) / denom
    return e, eps, 1.0 / eps


def total_wmse(h_nk, f, e, lam, error_cov, noise_variance, *, power=None) -> np.ndarray:
    """Sum over users of the augmented WMSE, per subcarrier.

    With ``power`` given the noise term is scaled by ``|F|_F^2 / p``: the
    objective whose unconstrained minimiser is :func:`precoder_closed_form`.
    It coincides with the plain objective whenever ``|F|_F^2 == p``.
    """
    cov = _normalize_cov(error_cov, h_nk.shape[-1])
    noise = np.asarray(noise_variance, dtype=np.float64)
    if power is not None:
        noise = noise * np.sum(np.abs(f) ** 2, axis=(-2, -1)) / np.asarray(power)
    noise = np.asarray(noise)[..., None]
    g, t, err = _user_terms(h_nk, f, cov, 0.0)
    t = t + noise
    gkk = np.diagonal(g, axis1=-2, axis2=-1)
    eps = np.abs(e) ** 2 * (t + err) - 2.0 * (e * gkk).real + 1.0
    return np.sum(lam * eps - np.log2(lam), axis=-1)


def precoder_closed_form(h_hat_n, e_n, lam_n, error_cov, noise_variance: float, power,
                         *, fill_power: bool = True, return_scale: bool = False):
    """Stationary point of the WMSE in the beamformer, then power-scaled.

    Accepts one subcarrier (``h_hat_n`` of shape ``K x N_t``, ``e_n`` and
    ``lam_n`` of length ``K``, scalar ``power``) or a stack of subcarriers
    along a leading axis. For user ``k`` solves

        A_k f_k = conj(e_k) lam_k h_k,
        A_k = (sigma^2/p) sum_m w_m I + sum_{m != k} w_m R_e + sum_m w_m h_m h_m^H,

    with ``w_m = lam_m |e_m|^2``.

    The raw solution is rescaled so ``|F|_F^2 == p`` (``fill_power``) or
    only shrunk when it exceeds ``p`` (``fill_power=False``). With
    ``return_scale`` the applied factor is returned too; dividing the
    equalizers by it leaves every MSE unchanged.
    """
    h = as_complex(h_hat_n, "h_hat_n")
    single = h.ndim == 2
    if single:
        h = h[None]
    e = np.asarray(e_n, dtype=np.complex128).reshape(h.shape[:-1])
    lam = np.asarray(lam_n, dtype=np.float64).reshape(h.shape[:-1])
    p = np.broadcast_to(np.asarray(power, dtype=np.float64), h.shape[:-2])
    if np.any(p <= 0):
        raise ValueError("per-subcarrier power must be positive")
    if np.any(lam <= 0):
        raise ValueError("MSE weights must be positive")
    n_t = h.shape[-1]
    cov = _normalize_cov(error_cov, n_t)

    w = lam * np.abs(e) ** 2  # (B, K)
    w_sum = w.sum(axis=-1)
    eye = np.eye(n_t)
    # sum_m w_m h_m h_m^H  ->  H^T diag(w) conj(H)
    base = np.einsum("bkt,bk,bks->bts", h, w, h.conj())
    base = base + (noise_variance / p * w_sum)[:, None, None] * eye
    rhs = (np.conj(e) * lam)[..., None] * h  # (B, K, N_t)

    if cov is None:
        f = hermitian_solve(base, np.swapaxes(rhs, -1, -2))
    else:
        rest = w_sum[:, None] - w  # (B, K)
        cov_mat = cov * eye if isinstance(cov, float) else cov
        a = base[:, None] + rest[..., None, None] * cov_mat
        f = np.swapaxes(hermitian_solve(a, rhs), -1, -2)

    norm2 = np.sum(np.abs(f) ** 2, axis=(-2, -1))
    scale = np.ones_like(norm2)
    positive = norm2 > 0
    if fill_power:
        scale[positive] = np.sqrt(p[positive] / norm2[positive])
    else:
        over = norm2 > p
        scale[over] = np.sqrt(p[over] / norm2[over])
    f = f * scale[:, None, None]
    if single:
        f, scale = f[0], scale[0]
    return (f, scale) if return_scale else f


def rzf_precoder(h_hat_n, noise_variance: float, power: float) -> np.ndarray:
    """Regularized zero forcing, scaled to ``|F|_F^2 == power`` exactly."""
    if not power > 0:
        raise ValueError("power must be positive")
    h = as_complex(h_hat_n, "h_hat_n")
    k = h.shape[0]
    gram = h.conj() @ h.T + (k * noise_variance / power) * np.eye(k)
    f = h.T @ hermitian_solve(gram, np.eye(k, dtype=np.complex128))
    return f * math.sqrt(power) / np.linalg.norm(f)


def zf_initial_beamformer(h_hat, noise_variance: float, total_power: float,
                          cond_limit: float = 1e12) -> np.ndarray:
    """Zero forcing per subcarrier at uniform power; RZF where the Gram matrix is singular."""
    h = as_complex(h_hat, "h_hat")
    k, n_c, n_t = h.shape
    p = total_power / n_c
    out = np.empty((n_c, n_t, k), dtype=np.complex128)
    for n in range(n_c):
        hn = h[:, n, :]
        gram = hn.conj() @ hn.T
        f = None
        if np.linalg.cond(gram) < cond_limit:
            try:
                f = hn.T @ hermitian_solve(gram, np.eye(k, dtype=np.complex128), hermitian_tol=1e-9)
            except NumericError:
                f = None
        if f is None:
            f = rzf_precoder(hn, noise_variance * n_c, total_power)
        out[n] = f * math.sqrt(p) / np.linalg.norm(f)
    return out


# ---------------------------------------------------------------------------
# water-filling


@dataclass(frozen=True)
class RateProfile:
    """Per-subcarrier sum rate as a function of the subcarrier power ``p``.

    ``rate_n(p) = sum_k log2(1 + S[n,k] p / (I[n,k] p + noise))`` which is
    concave and nondecreasing for non-negative ``S``, ``I``.
    """

    signal: np.ndarray  # (N_c, K)
    interference: np.ndarray  # (N_c, K)
    noise_variance: float

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.signal, dtype=np.float64))
        i = np.broadcast_to(np.atleast_2d(np.asarray(self.interference, dtype=np.float64)), s.shape)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(i))):
            raise ContractError("rate profile has non-finite gains")
        if np.any(s < 0) or np.any(i < 0):
            raise ContractError("rate profile is not monotone: negative signal or interference gain")
        if not self.noise_variance > 0:
            raise ContractError("rate profile needs positive noise variance")
        object.__setattr__(self, "signal", s)
        object.__setattr__(self, "interference", np.array(i))

    @property
    def num_subcarriers(self) -> int:
        return self.signal.shape[0]

    def rate(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)[..., None]
        s, i, sig2 = self.signal, self.interference, self.noise_variance
        return np.sum(np.log2((s + i) * p + sig2) - np.log2(i * p + sig2), axis=-1)

    def derivative(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)[..., None]
        s, i, sig2 = self.signal, self.interference, self.noise_variance
        u = (s + i) * p + sig2
        v = i * p + sig2
        return np.sum(s * sig2 / (u * v), axis=-1) / LN2

    def second_derivative(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)[..., None]
        s, i, sig2 = self.signal, self.interference, self.noise_variance
        u = (s + i) * p + sig2
        v = i * p + sig2
        t = s * sig2 / (u * v)
        return -np.sum(t * ((s + i) / u + i / v), axis=-1) / LN2


def rate_profile(h_hat, f, error_cov, noise_variance: float) -> RateProfile:
    """Rate profile induced by the unit-norm direction of each ``F[n]``."""
    h_nk = np.swapaxes(as_complex(h_hat, "h_hat"), 0, 1)
    f = np.asarray(f)
    norms = np.linalg.norm(f, axis=(1, 2))
    fbar = np.where(norms[:, None, None] > 0, f / np.where(norms > 0, norms, 1.0)[:, None, None], 0.0)
    cov = _normalize_cov(error_cov, h_nk.shape[-1])
    g, _, err = _user_terms(h_nk, fbar, cov, 0.0)
    power = np.abs(g) ** 2
    signal = np.diagonal(power, axis1=-2, axis2=-1)
    interference = power.sum(axis=-1) - signal + err
    return RateProfile(signal, np.clip(interference, 0.0, None), noise_variance)


def _power_at_level(profile: RateProfile, mu: float, cap: float) -> np.ndarray:
    """Solve ``rate_n'(p) = mu`` on ``[0, cap]`` for every subcarrier.

    The derivative is convex and decreasing, so Newton iterates started at
    ``p = 0`` increase monotonically to the root without overshooting.
    """
    n_c = profile.num_subcarriers
    p = np.zeros(n_c)
    active = profile.derivative(p) > mu
    capped = active & (profile.derivative(np.full(n_c, cap)) >= mu)
    p[capped] = cap
    todo = active & ~capped
    for _ in range(200):
        if not np.any(todo):
            break
        d1 = profile.derivative(p) - mu
        d2 = profile.second_derivative(p)
        step = np.where(todo, -d1 / d2, 0.0)
        p = np.minimum(p + step, cap)
        todo &= np.abs(step) > 1e-15 * np.maximum(p, 1e-300)
    return p


def waterfill_power(profile: RateProfile, total: float) -> PowerAllocation:
    """Maximise ``sum_n rate_n(p[n])`` subject to ``sum p == total``, ``p >= 0``.

    Solves the KKT system: the water level ``mu`` is found by Brent's method
    on ``log(mu)``; for each trial level the per-subcarrier powers solve
    ``rate_n'(p) = mu`` (zero if ``rate_n'(0) <= mu``). Interference-free
    profiles reduce to classical water-filling.
    """
    if not total > 0:
        raise ValueError("total power must be positive")
    n_c = profile.num_subcarriers
    d0 = profile.derivative(np.zeros(n_c))
    live = d0 > 0
    if not np.any(live):
        return PowerAllocation(np.full(n_c, total / n_c), total, 0.0)

    d_cap = profile.derivative(np.full(n_c, total))
    mu_hi = float(d0.max())
    mu_lo = float(d_cap[live].min())
    if mu_lo >= mu_hi:
        # a single live subcarrier (or ties): all power goes to the live set
        p = np.where(live, total / live.sum(), 0.0)
        return PowerAllocation(p, total, float(profile.derivative(p)[live].min()))

    def excess(log_mu):
        return _power_at_level(profile, math.exp(log_mu), total).sum() - total

    lo, hi = math.log(mu_lo), math.log(mu_hi)
    if excess(lo) <= 0:
        log_mu = lo
    else:
        log_mu = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    mu = math.exp(log_mu)
    p = _power_at_level(profile, mu, total)
    s = p.sum()
    if s <= 0:
        p = np.where(d0 == d0.max(), 1.0, 0.0)
        s = p.sum()
    p = p * (total / s)
    return PowerAllocation(p, total, mu)


def kkt_residual(profile: RateProfile, alloc: PowerAllocation) -> float:
    """Largest relative violation of the water-filling optimality conditions."""
    d = profile.derivative(alloc.p)
    mu = alloc.water_level
    on = alloc.p > 0
    res = 0.0
    if np.any(on):
        res = float(np.max(np.abs(d[on] - mu)) / mu)
    if np.any(~on):
        res = max(res, float(np.max(np.clip(d[~on] - mu, 0.0, None)) / mu))
    return res


# ---------------------------------------------------------------------------
# solver


def wmmse_solve(h_hat, cfg: WmmseConfig, *, trace=None) -> WmmseResult:
    """Block coordinate descent over power allocation, equalizers/weights and precoders.

    Starts from zero forcing at uniform power and runs ``cfg.iterations``
    rounds of: water-filling across subcarriers with the current precoder
    directions; MMSE equalizer and weight update; closed-form precoder
    update. ``trace``, if given, is called as ``trace(stage, f, e, lam, p)``
    with subcarrier-major arrays: ``"power"`` after water-filling (previous
    equalizers and weights, from the second round on), ``"weights"`` after
    the equalizer/weight update and ``"precoder"`` after the precoder update.
    """
    h = as_complex(h_hat, "h_hat")
    k, n_c, n_t = h.shape
    if k > n_t:
        raise ConfigError(f"K={k} users exceed N_t={n_t} antennas")
    cov = _normalize_cov(cfg.error_cov, n_t)
    sig2 = cfg.noise_variance
    h_nk = np.swapaxes(h, 0, 1)

    f = zf_initial_beamformer(h, sig2, cfg.total_power)
    norms = np.linalg.norm(f, axis=(1, 2))
    direction = f / norms[:, None, None]

    e = lam = None
    for _ in range(cfg.iterations):
        alloc = waterfill_power(rate_profile(h, direction, cov, sig2), cfg.total_power)
        p = alloc.p
        f = direction * np.sqrt(p)[:, None, None]
        if trace is not None and e is not None:
            trace("power", f, e, lam, p)
        e, _, lam = equalizers_and_weights(h_nk, f, cov, sig2)
        if trace is not None:
            trace("weights", f, e, lam, p)
        on = (p > 0) & (np.sum(lam * np.abs(e) ** 2, axis=-1) > 0)
        if np.any(on):
            f_on, scale = precoder_closed_form(h_nk[on], e[on], lam[on], cov, sig2, p[on], return_scale=True)
            f[on] = f_on
            direction[on] = f_on / np.linalg.norm(f_on, axis=(1, 2))[:, None, None]
            if trace is not None:
                e = e.copy()
                e[on] = e[on] / scale[:, None]
                trace("precoder", f, e, lam, p)

    e, _, lam = equalizers_and_weights(h_nk, f, cov, sig2)
    beam = Beamformer(f)
    beam.check_power(alloc)
    return WmmseResult(beam, alloc, e.T.copy(), lam.T.copy())


def evaluate_sum_rate(h_true, f, noise_variance: float):
    """Genie rates ``(per_user, sum)`` in bits/s/Hz averaged over subcarriers."""
    h_nk = np.swapaxes(as_complex(h_true, "h_true"), 0, 1)
    f = f.matrices if isinstance(f, Beamformer) else np.asarray(f)
    g = np.conj(h_nk) @ f
    power = np.abs(g) ** 2
    signal = np.diagonal(power, axis1=-2, axis2=-1)
    interference = power.sum(axis=-1) - signal
    rates = np.log2(1.0 + signal / (interference + noise_variance))
    per_user = rates.mean(axis=0)
    return per_user, float(per_user.sum())
