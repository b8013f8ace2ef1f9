"""Acceptance checks, runnable from pytest or ``airmimo selftest``.

Each ``criterion_*`` function runs one check at its full size and returns a
:class:`CriterionResult`; the runtime budget is part of the pass condition.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List

import mpmath
import numpy as np

from airmimo.beamforming import (
    RateProfile,
    WmmseConfig,
    equalizers_and_weights,
    mmse_equalizer,
    mmse_residual,
    mse_terms,
    precoder_closed_form,
    sinr_and_rate,
    total_wmse,
    waterfill_power,
    wmmse_solve,
)
from airmimo.channel import (
    TABLE_NMSE_BY_PILOTS,
    ArrayGeometry,
    CsiErrorModel,
    MultipathSpec,
    generate_channel_tensor,
    inject_csi_error,
)
from airmimo.config import validate
from airmimo.link import (
    HybridCombineConfig,
    design_beamformer,
    hybrid_combine,
    power_normalize,
    run_trial,
)
from airmimo.tensor import RandomSource, sample_complex_gaussian

ACCEPTANCE_SEED = 20240611


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    elapsed_s: float
    budget_s: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d}. {self.title}: {self.detail} ({self.elapsed_s:.1f}s / {self.budget_s:.0f}s)"


def _timed(number: int, title: str, budget_s: float):
    def wrap(fn: Callable[[], tuple]) -> Callable[[], CriterionResult]:
        def run() -> CriterionResult:
            start = time.perf_counter()
            ok, detail = fn()
            elapsed = time.perf_counter() - start
            if elapsed > budget_s:
                ok = False
                detail += f"; runtime {elapsed:.1f}s over budget"
            return CriterionResult(number, title, bool(ok), detail, elapsed, budget_s)

        run.number = number
        run.title = title
        return run

    return wrap


def _random_cov(gen, n_t: int, trace_per_antenna: float) -> np.ndarray:
    g = sample_complex_gaussian(gen, (n_t, n_t))
    cov = g @ g.conj().T
    cov = (cov + cov.conj().T) / 2
    return cov * (trace_per_antenna * n_t / np.trace(cov).real)


def _random_instance(gen, k: int, n_t: int, n_c: int = 1):
    """Channels (N_c, K, N_t), unit-power-per-subcarrier beamformers, noise, error covariance."""
    h = sample_complex_gaussian(gen, (n_c, k, n_t))
    f = sample_complex_gaussian(gen, (n_c, n_t, k))
    p = gen.uniform(0.2, 2.0, n_c)
    f *= np.sqrt(p / np.sum(np.abs(f) ** 2, axis=(1, 2)))[:, None, None]
    sig2 = 10 ** gen.uniform(-2, 0.5)
    cov = _random_cov(gen, n_t, gen.uniform(0.0, 0.3))
    return h, f, p, sig2, cov


# ---------------------------------------------------------------------------


@_timed(1, "rate-MSE identity", 10)
def criterion_1():
    # Oracle: exact evaluation of 1/eps - 1, -log2(eps) and log2(1 + gamma)
    # at 40 significant digits, starting from the float eps actually produced.
    mp = mpmath.mp.clone()
    mp.dps = 40
    ln2 = mp.log(2)
    gen = RandomSource(ACCEPTANCE_SEED, 1).generator()
    worst_gamma = worst_rate = worst_chain = worst_routes = 0.0
    for _ in range(1000):
        h, f, _, sig2, cov = _random_instance(gen, 4, 64, 8)
        _, eps, _ = equalizers_and_weights(h, f, cov, sig2)
        gamma, rate = sinr_and_rate(eps)
        for e_, g_, r_ in zip(eps.ravel(), gamma.ravel(), rate.ravel()):
            e_mp = mp.mpf(float(e_))
            g_true = 1 / e_mp - 1
            r_true = -mp.log(e_mp) / ln2
            worst_gamma = max(worst_gamma, float(abs(g_ - g_true) / g_true))
            worst_rate = max(worst_rate, float(abs(r_ - r_true) / r_true))
            # the identity evaluated on the returned gamma
            worst_chain = max(worst_chain, float(abs(r_ - mp.log1p(mp.mpf(float(g_))) / ln2) / r_true))
        # the batched residual agrees with the per-user route
        n, k = gen.integers(8), gen.integers(4)
        eps_scalar = mmse_residual(h[n, k], f[n], cov, sig2, int(k))
        worst_routes = max(worst_routes, abs(eps_scalar - eps[n, k]) / eps[n, k])
    worst = max(worst_gamma, worst_rate, worst_chain, worst_routes)
    return worst <= 1e-12, (f"max relative deviation {worst:.2e} (gamma {worst_gamma:.1e}, rate {worst_rate:.1e}, "
                            f"log2(1+gamma) {worst_chain:.1e}, routes {worst_routes:.1e})")


@_timed(2, "equalizer optimality", 30)
def criterion_2():
    gen = RandomSource(ACCEPTANCE_SEED, 2).generator()
    violations = 0
    smallest = np.inf
    for _ in range(1000):
        h, f, _, sig2, cov = _random_instance(gen, 4, 16)
        k = int(gen.integers(4))
        hk, fn = h[0, k], f[0]
        e_opt = mmse_equalizer(hk, fn, cov, sig2, k)
        base = sum(mse_terms(hk, fn, e_opt, cov, sig2, k))
        offsets = 1e-3 * np.exp(2j * np.pi * gen.uniform(size=100))
        for d in offsets:
            inc = sum(mse_terms(hk, fn, e_opt + d, cov, sig2, k)) - base
            smallest = min(smallest, inc)
            if not inc > 0:
                violations += 1
    ok = violations == 0 and smallest > -1e-9
    return ok, f"{violations} non-increasing perturbations of 100000; smallest increase {smallest:.2e}"


def _fd_gradient(fun, x: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros(x.shape, dtype=np.complex128)
    for idx in np.ndindex(x.shape):
        for unit, part in ((1.0, "re"), (1j, "im")):
            xp, xm = x.copy(), x.copy()
            xp[idx] += unit * step
            xm[idx] -= unit * step
            d = (fun(xp) - fun(xm)) / (2 * step)
            grad[idx] += d if part == "re" else 1j * d
    return grad


@_timed(3, "precoder stationarity", 60)
def criterion_3():
    gen = RandomSource(ACCEPTANCE_SEED, 3).generator()
    worst = 0.0
    for i in range(100):
        h, f0, p, sig2, cov = _random_instance(gen, 4, 16)
        cov_arg = cov if i % 2 else float(np.trace(cov).real / 16)
        e, _, lam = equalizers_and_weights(h, f0, cov_arg, sig2)
        f, scale = precoder_closed_form(h[0], e[0], lam[0], cov_arg, sig2, p[0], return_scale=True)
        f_raw = f / scale

        def objective(x):
            return float(total_wmse(h[0], x, e[0], lam[0], cov_arg, sig2, power=p[0]))

        grad = _fd_gradient(objective, f_raw, 1e-5)
        # gradient at F = 0 is the linear term alone: the natural scale
        ref = _fd_gradient(objective, np.zeros_like(f_raw), 1e-5)
        worst = max(worst, np.linalg.norm(grad) / np.linalg.norm(ref))
    return worst <= 1e-6, f"max relative gradient norm {worst:.2e}"


@_timed(4, "BCD monotonicity", 120)
def criterion_4():
    geom = ArrayGeometry(4, 4)
    spec = MultipathSpec(2, 4)
    monotone = 0
    worst = -np.inf
    for trial in range(500):
        rs = RandomSource(ACCEPTANCE_SEED + 4, trial)
        gen = rs.generator(7)
        h = generate_channel_tensor(rs, 4, spec, geom)
        nmse_level = list(TABLE_NMSE_BY_PILOTS.values())[trial % 5]
        cov = nmse_level if trial % 2 else _random_cov(gen, 16, nmse_level)
        sig2 = 1.0 / (4 * 10 ** (gen.uniform(0, 20) / 10))
        h_nk = np.swapaxes(h, 0, 1)
        values: List[tuple] = []

        def trace(stage, f, e, lam, p):
            values.append((stage, float(np.sum(total_wmse(h_nk, f, e, lam, cov, sig2)))))

        wmmse_solve(h, WmmseConfig(sig2, 1.0, 5, cov), trace=trace)
        ok = True
        for (s0, v0), (s1, v1) in zip(values, values[1:]):
            if (s0, s1) in (("power", "weights"), ("weights", "precoder")):
                rise = v1 - v0
                worst = max(worst, rise / max(1.0, abs(v0)))
                if rise > 1e-9 * max(1.0, abs(v0)):
                    ok = False
        monotone += ok
    frac = monotone / 500
    return frac >= 0.99, f"{monotone}/500 trials monotone ({frac:.1%}); largest relative rise {worst:.2e}"


def _greedy_oracle(profile: RateProfile, total: float, steps: int = 10_000) -> float:
    """Allocate ``total`` in ``steps`` equal increments, each to the best marginal gain."""
    n_c = profile.num_subcarriers
    delta = total / steps
    alloc = np.zeros(n_c)
    current = profile.rate(alloc)
    for _ in range(steps):
        gain = profile.rate(alloc + delta) - current
        n = int(np.argmax(gain))
        alloc[n] += delta
        current[n] += gain[n]
    return float(profile.rate(alloc).sum())


@_timed(5, "water-filling oracle", 30)
def criterion_5():
    gen = RandomSource(ACCEPTANCE_SEED, 5).generator()
    worst_gap = worst_sum = 0.0
    for i in range(100):
        k = 1 + i % 2
        signal = 10 ** gen.uniform(-1.5, 1.5, size=(4, k))
        profile = RateProfile(signal, np.zeros((4, k)), 10 ** gen.uniform(-1, 0.5))
        total = 10 ** gen.uniform(-1, 1)
        alloc = waterfill_power(profile, total)
        achieved = float(profile.rate(alloc.p).sum())
        worst_gap = max(worst_gap, abs(achieved - _greedy_oracle(profile, total)))
        worst_sum = max(worst_sum, abs(alloc.p.sum() - total) / total)
    ok = worst_gap <= 1e-3 and worst_sum <= 1e-9
    return ok, f"max rate gap to grid oracle {worst_gap:.2e} bits; max |sum p - P_t|/P_t {worst_sum:.1e}"


def _paired_rates(scenario, schemes, trials, seed):
    rates = {s: np.empty(trials) for s in schemes}
    for t in range(trials):
        rs = RandomSource(seed, t)
        for s in schemes:
            rates[s][t] = run_trial(scenario, s, rs).sum_rate
    return rates


@_timed(6, "baseline dominance", 300)
def criterion_6():
    scenario = validate(dict(K=4, n_y=8, n_z=8, N_c=16, Q=16, snr_db=10.0, target_nmse=0.0))
    rates = _paired_rates(scenario, ("rzf", "wmmse_naive"), 200, ACCEPTANCE_SEED + 6)
    w, r = rates["wmmse_naive"].mean(), rates["rzf"].mean()
    margin = w / r - 1
    wins = int(np.sum(rates["wmmse_naive"] > rates["rzf"]))
    return w > r, f"WMMSE {w:.4f} vs RZF {r:.4f} bits/s/Hz (margin {margin:+.2%}, WMMSE ahead in {wins}/200)"


@_timed(7, "imperfect-CSI robustness", 300)
def criterion_7():
    scenario = validate(dict(K=4, n_y=8, n_z=8, N_c=16, Q=16, snr_db=20.0, target_nmse=0.205))
    rates = _paired_rates(scenario, ("wmmse_naive", "wmmse_robust"), 200, ACCEPTANCE_SEED + 7)
    rob, nai = rates["wmmse_robust"].mean(), rates["wmmse_naive"].mean()
    wins = int(np.sum(rates["wmmse_robust"] > rates["wmmse_naive"]))
    return rob >= nai, f"robust {rob:.4f} vs naive {nai:.4f} bits/s/Hz ({rob / nai - 1:+.2%}, robust ahead in {wins}/200)"


@_timed(8, "Monte Carlo consistency", 120)
def criterion_8():
    scenario = validate(dict(K=4, n_y=4, n_z=4, N_c=2, Q=100_000, snr_db=10.0, target_nmse=0.0))
    worst_mse = worst_sinr = 0.0
    for scheme in ("rzf", "wmmse_naive"):
        rep = run_trial(scenario, scheme, RandomSource(ACCEPTANCE_SEED + 8, 0))
        worst_mse = max(worst_mse, np.max(np.abs(rep.empirical_mse / rep.analytical_mse - 1)))
        worst_sinr = max(worst_sinr, np.max(np.abs(rep.empirical_sinr / rep.analytical_sinr - 1)))
    ok = worst_mse <= 0.05 and worst_sinr <= 0.05
    return ok, f"max relative error: MSE {worst_mse:.2%}, SINR {worst_sinr:.2%} at 1e5 symbols per (k, n)"


@_timed(9, "channel statistics", 60)
def criterion_9():
    geom = ArrayGeometry(8, 8)
    spec = MultipathSpec(2, 64)
    energy = 0.0
    count = 0
    draws = 10_000
    for i in range(draws):
        h = generate_channel_tensor(RandomSource(ACCEPTANCE_SEED + 9, i), 4, spec, geom)
        energy += np.vdot(h, h).real
        count += h.shape[0] * h.shape[1]
    mean_norm = energy / count
    norm_ok = abs(mean_norm / geom.num_antennas - 1) <= 0.02
    details = [f"mean |h|^2 {mean_norm:.3f} (N_t=64)"]
    nmse_ok = True
    for level in TABLE_NMSE_BY_PILOTS.values():
        err = CsiErrorModel.from_nmse(level, geom.num_antennas)
        num = den = 0.0
        for i in range(1000):
            rs = RandomSource(ACCEPTANCE_SEED + 90, i)
            h = generate_channel_tensor(rs, 4, spec, geom)
            d = h - inject_csi_error(rs, h, err)
            num += np.vdot(d, d).real
            den += np.vdot(h, h).real
        measured = num / den
        nmse_ok &= abs(measured / level - 1) <= 0.10
        details.append(f"{level}->{measured:.4f}")
    return norm_ok and nmse_ok, "; ".join(details)


@_timed(10, "power constraints", 120)
def criterion_10():
    checked_grids = checked_beams = 0
    worst_grid = worst_beam = -np.inf
    for snr in (0.0, 10.0, 20.0, 30.0):
        for nmse_level in (0.0, 0.205):
            scenario = validate(dict(K=4, n_y=4, n_z=4, N_c=8, Q=32, snr_db=snr, target_nmse=nmse_level))
            for scheme in ("rzf", "wmmse_naive", "wmmse_robust"):
                for t in range(5):
                    rs = RandomSource(ACCEPTANCE_SEED + 10, t)
                    rep = run_trial(scenario, scheme, rs)
                    worst_grid = max(worst_grid, rep.tx_power - scenario.Q * scenario.P_t)
                    checked_grids += 1
                    h = generate_channel_tensor(rs, 4, scenario.multipath(), scenario.geometry())
                    beam, alloc = design_beamformer(scheme, h, scenario)
                    worst_beam = max(worst_beam, float(np.max(beam.powers - alloc.p)),
                                     beam.powers.sum() - scenario.P_t)
                    checked_beams += 1
    # hybrid combining with a synthetic data-driven branch, over- and under-powered
    gen = RandomSource(ACCEPTANCE_SEED + 10, 999).generator()
    for i in range(50):
        x_m = sample_complex_gaussian(gen, (8, 16, 32), 10 ** gen.uniform(-2, 1))
        x_d = sample_complex_gaussian(gen, (8, 16, 32), 10 ** gen.uniform(-2, 1))
        x = power_normalize(hybrid_combine(x_d, x_m, HybridCombineConfig(0.5, 0.5)), 1.0, 32)
        worst_grid = max(worst_grid, float(np.vdot(x, x).real) - 32)
        checked_grids += 1
    ok = worst_grid <= 1e-9 and worst_beam <= 1e-9
    return ok, (f"{checked_grids} transmit grids (max excess {worst_grid:.1e}), "
                f"{checked_beams} beamformers (max excess {worst_beam:.1e})")


@_timed(11, "sweep determinism", 60)
def criterion_11():
    from airmimo.cli import main

    cfg = "K: 2\nn_y: 4\nn_z: 4\nN_c: 8\nQ: 32\ntarget_nmse: 0.063\nseed: 11\niterations: 3\n"
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "cfg.yaml").write_text(cfg)
        outs = []
        for run in range(2):
            out = tmp / f"run{run}.csv"
            code = main(["sweep", "--config", str(tmp / "cfg.yaml"), "--axis", "snr_db",
                         "--values", "0,10,20", "--reps", "2", "--out", str(out)])
            if code != 0:
                return False, f"sweep exited with {code}"
            outs.append(out.read_bytes())
    same = outs[0] == outs[1]
    rows = outs[0].count(b"\n") - 1
    verdict = "byte-identical" if same else "differ"
    return same and rows == 18, f"two runs {verdict} ({len(outs[0])} bytes, {rows} rows)"


CRITERIA: Dict[int, Callable[[], CriterionResult]] = {
    fn.number: fn
    for fn in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
               criterion_7, criterion_8, criterion_9, criterion_10, criterion_11)
}


def run_all(numbers=None, echo=print) -> List[CriterionResult]:
    results = []
    for n in sorted(numbers or CRITERIA):
        res = CRITERIA[n]()
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
