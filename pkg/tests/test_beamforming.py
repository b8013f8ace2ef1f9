import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from airmimo.beamforming import (
    Beamformer,
    PowerAllocation,
    RateProfile,
    WmmseConfig,
    equalizers_and_weights,
    evaluate_sum_rate,
    kkt_residual,
    mmse_equalizer,
    mmse_residual,
    mse_terms,
    optimal_weight,
    precoder_closed_form,
    rate_profile,
    received_power,
    rzf_precoder,
    sinr_and_rate,
    total_wmse,
    waterfill_power,
    wmmse_solve,
    wmse,
    zf_initial_beamformer,
)
from airmimo.errors import ConfigError, ContractError, NumericError

from conftest import crandn


def random_cov(gen, n, level):
    g = crandn(gen, n, n)
    cov = g @ g.conj().T
    return level * n * cov / np.trace(cov).real


def unit(v):
    return v / np.linalg.norm(v)


def cosine(a, b):
    return abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))


# received power, MSE terms, equalizer, residual


def test_received_power_without_beamformer(gen):
    assert received_power(crandn(gen, 4), np.zeros((4, 2)), 0.3) == 0.3


def test_received_power_single_aligned_user(gen):
    h = unit(crandn(gen, 6))
    assert received_power(h, np.sqrt(2.5) * h[:, None], 0.1) == pytest.approx(2.6, rel=1e-14)


def test_received_power_brute_force(gen):
    h, f = crandn(gen, 8), crandn(gen, 8, 3)
    expected = 0.2
    for m in range(3):
        inner = sum(np.conj(h[i]) * f[i, m] for i in range(8))
        expected += abs(inner) ** 2
    assert received_power(h, f, 0.2) == pytest.approx(expected, rel=1e-12)


def test_mse_terms_zero_equalizer(gen):
    eps1, eps2 = mse_terms(crandn(gen, 4), crandn(gen, 4, 2), 0.0, random_cov(gen, 4, 0.1), 0.5, 0)
    assert (eps1, eps2) == (1.0, 0.0)


def test_mse_terms_perfect_csi_has_no_error_term(gen):
    h, f = crandn(gen, 4), crandn(gen, 4, 3)
    for cov in (None, 0.0, np.zeros((4, 4))):
        assert mse_terms(h, f, 0.3 - 0.2j, cov, 0.5, 1)[1] == 0.0


def test_mse_terms_formula(gen):
    h, f = crandn(gen, 5), crandn(gen, 5, 3)
    cov = random_cov(gen, 5, 0.2)
    e, sig2, k = 0.4 + 0.1j, 0.3, 2
    t = sum(abs(np.vdot(h, f[:, m])) ** 2 for m in range(3)) + sig2
    eps1 = abs(e) ** 2 * t - 2 * (e * np.vdot(h, f[:, k])).real + 1
    eps2 = abs(e) ** 2 * sum((f[:, m].conj() @ cov @ f[:, m]).real for m in range(3) if m != k)
    got = mse_terms(h, f, e, cov, sig2, k)
    assert got[0] == pytest.approx(eps1, rel=1e-12)
    assert got[1] == pytest.approx(eps2, rel=1e-12)


def _monte_carlo_mse(gen, h_hat, f, e, cov, sig2, k, draws=10**5):
    n_t, n_users = f.shape
    chol = np.linalg.cholesky(cov)
    dh = crandn(gen, draws, n_t) @ chol.T
    r = crandn(gen, draws, n_users)
    noise = np.sqrt(sig2) * crandn(gen, draws)
    h_true = h_hat[None, :] + dh
    y = np.einsum("dt,tm,dm->d", h_true.conj(), f, r) + noise
    return np.mean(np.abs(e * y - r[:, k]) ** 2)


def test_mse_terms_against_monte_carlo_expectation(gen):
    # weak CSI error: the own-stream error term left out of the model is negligible
    h, f = crandn(gen, 4), 0.5 * crandn(gen, 4, 2)
    cov = random_cov(gen, 4, 0.01)
    e = mmse_equalizer(h, f, cov, 0.1, 0)
    model = sum(mse_terms(h, f, e, cov, 0.1, 0))
    assert _monte_carlo_mse(gen, h, f, e, cov, 0.1, 0) == pytest.approx(model, rel=0.02)


def test_mse_terms_omit_only_the_own_stream_error(gen):
    # the exact expectation adds |e|^2 f_k^H R_e f_k to the modelled terms
    h, f = crandn(gen, 4), crandn(gen, 4, 3)
    cov = random_cov(gen, 4, 0.2)
    e, k = 0.3 + 0.2j, 1
    exact = sum(mse_terms(h, f, e, cov, 0.2, k)) + abs(e) ** 2 * (f[:, k].conj() @ cov @ f[:, k]).real
    assert _monte_carlo_mse(gen, h, f, e, cov, 0.2, k) == pytest.approx(exact, rel=0.02)


def test_equalizer_single_user_closed_form(gen):
    h = unit(crandn(gen, 8))
    p, sig2 = 2.0, 0.5
    e = mmse_equalizer(h, np.sqrt(p) * h[:, None], None, sig2, 0)
    assert e == pytest.approx(np.sqrt(p) / (p + sig2), rel=1e-14)


def test_equalizer_and_residual_with_silent_user(gen):
    f = crandn(gen, 4, 2)
    f[:, 1] = 0
    h = crandn(gen, 4)
    assert mmse_equalizer(h, f, 0.1, 0.5, 1) == 0
    assert mmse_residual(h, f, 0.1, 0.5, 1) == 1.0


def test_equalizer_minimises_mse(gen):
    h, f = crandn(gen, 6), crandn(gen, 6, 3)
    cov = random_cov(gen, 6, 0.1)
    e = mmse_equalizer(h, f, cov, 0.2, 1)
    base = sum(mse_terms(h, f, e, cov, 0.2, 1))
    for d in 1e-3 * np.exp(2j * np.pi * gen.uniform(size=100)):
        assert sum(mse_terms(h, f, e + d, cov, 0.2, 1)) > base


def test_residual_single_user_closed_form(gen):
    h = unit(crandn(gen, 8))
    p, sig2 = 2.0, 0.5
    assert mmse_residual(h, np.sqrt(p) * h[:, None], None, sig2, 0) == pytest.approx(sig2 / (p + sig2), rel=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_residual_equals_terms_at_optimum(seed):
    gen = np.random.default_rng(seed)
    h, f = crandn(gen, 6), crandn(gen, 6, 4)
    cov = random_cov(gen, 6, 0.15)
    for k in range(4):
        eps = mmse_residual(h, f, cov, 0.3, k)
        assert 0 < eps <= 1
        e = mmse_equalizer(h, f, cov, 0.3, k)
        assert sum(mse_terms(h, f, e, cov, 0.3, k)) == pytest.approx(eps, rel=1e-12)


def test_batched_route_matches_scalar_route(gen):
    h = crandn(gen, 3, 4, 8)  # (N_c, K, N_t)
    f = crandn(gen, 3, 8, 4)
    cov = random_cov(gen, 8, 0.1)
    e, eps, lam = equalizers_and_weights(h, f, cov, 0.4)
    for n in range(3):
        for k in range(4):
            assert e[n, k] == pytest.approx(mmse_equalizer(h[n, k], f[n], cov, 0.4, k), rel=1e-12)
            assert eps[n, k] == pytest.approx(mmse_residual(h[n, k], f[n], cov, 0.4, k), rel=1e-12)
    np.testing.assert_allclose(lam, 1 / eps, rtol=1e-15)


def test_scalar_and_matrix_covariance_agree(gen):
    h, f = crandn(gen, 2, 3, 5), crandn(gen, 2, 5, 3)
    a = equalizers_and_weights(h, f, 0.07, 0.2)
    b = equalizers_and_weights(h, f, 0.07 * np.eye(5), 0.2)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-13)


# SINR, rate, weights, WMSE


@pytest.mark.parametrize("eps, gamma, rate", [(1.0, 0.0, 0.0), (0.5, 1.0, 1.0), (0.25, 3.0, 2.0)])
def test_sinr_and_rate_examples(eps, gamma, rate):
    assert sinr_and_rate(eps) == (gamma, rate)


@pytest.mark.parametrize("eps", [0.0, -0.1, 1.5])
def test_sinr_and_rate_domain(eps):
    with pytest.raises(ValueError):
        sinr_and_rate(eps)


@given(st.floats(1e-12, 1.0))
def test_rate_identity_chain(eps):
    # exact references: rational arithmetic for gamma, 40-digit logs for the rates
    gamma, rate = sinr_and_rate(eps)
    exact_gamma = 1 / Fraction(eps) - 1
    assert abs(Fraction(gamma) - exact_gamma) <= Fraction(1e-12) * exact_gamma
    with mpmath.workdps(40):
        exact_rate = -mpmath.log(mpmath.mpf(eps), 2)
        assert abs(rate - exact_rate) <= 1e-12 * exact_rate
        assert abs(rate - mpmath.log(1 + mpmath.mpf(gamma), 2)) <= 1e-12 * exact_rate


def test_rate_precision_for_weak_users():
    # eps just below one: a naive 1/eps - 1 loses most significant digits
    eps = 1.0 - 2.0**-40
    gamma, rate = sinr_and_rate(eps)
    assert gamma == pytest.approx(2.0**-40 / eps, rel=1e-15)
    assert rate == pytest.approx(-math.log1p(-(2.0**-40)) / math.log(2), rel=1e-15)


@pytest.mark.parametrize("eps, lam", [(1.0, 1.0), (0.25, 4.0)])
def test_optimal_weight_examples(eps, lam):
    assert optimal_weight(eps) == lam


def test_optimal_weight_domain():
    with pytest.raises(ValueError):
        optimal_weight(0.0)


@pytest.mark.parametrize("lam, eps, xi", [(1.0, 1.0, 1.0), (2.0, 0.5, 0.0), (2.0, 0.25, -0.5)])
def test_wmse_examples(lam, eps, xi):
    assert wmse(lam, eps) == pytest.approx(xi, abs=1e-15)


def test_wmse_domain():
    with pytest.raises(ValueError):
        wmse(0.0, 0.5)


@given(st.floats(1e-6, 1.0))
def test_optimal_weight_attains_one_minus_rate(eps):
    assert wmse(optimal_weight(eps), eps) == pytest.approx(1 - sinr_and_rate(eps)[1], abs=1e-12)


@given(st.floats(1e-6, 1.0))
def test_optimal_weight_minimises_natural_log_wmse(eps):
    # lambda = 1/eps is the exact minimiser of lambda*eps - ln(lambda); the
    # base-2 objective differs only by the common factor 1/ln 2 on the weights
    gen = np.random.default_rng(int(eps * 1e9))
    lam = optimal_weight(eps)
    best = lam * eps - math.log(lam)
    probes = np.exp(gen.uniform(-8, 16, 100))
    assert np.all(probes * eps - np.log(probes) >= best - 1e-12)
    # the base-2 stationary weight
    lam2 = lam / math.log(2)
    assert np.all(wmse(probes, eps) >= wmse(lam2, eps) - 1e-12)


def test_precoder_invariant_to_common_weight_scale(gen):
    h, e = crandn(gen, 3, 6), crandn(gen, 3)
    lam = gen.uniform(0.5, 3, 3)
    cov = random_cov(gen, 6, 0.1)
    a = precoder_closed_form(h, e, lam, cov, 0.2, 1.0)
    b = precoder_closed_form(h, e, lam / math.log(2), cov, 0.2, 1.0)
    np.testing.assert_allclose(a, b, rtol=1e-12)


# closed-form precoder


def _explicit_precoder(h, e, lam, cov, sig2, p, normalise=True):
    k, n_t = h.shape
    w = lam * np.abs(e) ** 2
    cols = []
    for j in range(k):
        a = sig2 / p * w.sum() * np.eye(n_t, dtype=complex)
        for m in range(k):
            a += w[m] * np.outer(h[m], h[m].conj())
            if m != j:
                a += w[m] * cov
        cols.append(np.linalg.solve(a, np.conj(e[j]) * lam[j] * h[j]))
    f = np.stack(cols, axis=1)
    return f * np.sqrt(p) / np.linalg.norm(f) if normalise else f


@pytest.mark.parametrize("cov_kind", ["none", "scalar", "matrix"])
def test_precoder_matches_explicit_construction(gen, cov_kind):
    h = crandn(gen, 3, 6)
    e = crandn(gen, 3)
    lam = gen.uniform(0.5, 3, 3)
    cov = {"none": np.zeros((6, 6)), "scalar": 0.08 * np.eye(6), "matrix": random_cov(gen, 6, 0.1)}[cov_kind]
    arg = {"none": None, "scalar": 0.08, "matrix": cov}[cov_kind]
    f = precoder_closed_form(h, e, lam, arg, 0.3, 0.7)
    np.testing.assert_allclose(f, _explicit_precoder(h, e, lam, cov, 0.3, 0.7), rtol=1e-10, atol=1e-12)


def test_precoder_single_user_is_matched_filter(gen):
    h = crandn(gen, 1, 8)
    f = precoder_closed_form(h, [0.5 - 0.3j], [2.0], None, 0.1, 1.5)
    assert cosine(f[:, 0], h[0]) == pytest.approx(1.0, abs=1e-10)
    assert np.sum(np.abs(f) ** 2) == pytest.approx(1.5, rel=1e-12)


def test_precoder_power_contract(gen):
    for _ in range(20):
        h = crandn(gen, 4, 8)
        p = gen.uniform(0.01, 5)
        f = precoder_closed_form(h, crandn(gen, 4), gen.uniform(0.1, 5, 4), random_cov(gen, 8, 0.1), 0.2, p)
        assert np.sum(np.abs(f) ** 2) <= p * (1 + 1e-9)
        assert np.sum(np.abs(f) ** 2) == pytest.approx(p, rel=1e-12)


def test_precoder_projection_only_shrinks(gen):
    h = crandn(gen, 2, 4)
    lam = np.array([1.0, 2.0])
    for e, p in ((crandn(gen, 2), 50.0), (1e-3 * crandn(gen, 2), 0.5)):
        raw = _explicit_precoder(h, e, lam, np.zeros((4, 4)), 0.3, p, normalise=False)
        out = precoder_closed_form(h, e, lam, None, 0.3, p, fill_power=False)
        if np.sum(np.abs(raw) ** 2) <= p:
            np.testing.assert_allclose(out, raw, rtol=1e-10)
        else:
            assert np.sum(np.abs(out) ** 2) == pytest.approx(p, rel=1e-12)
            assert cosine(out.ravel(), raw.ravel()) == pytest.approx(1.0, abs=1e-12)
    # both branches were exercised
    big = _explicit_precoder(h, 1e-3 * np.ones(2), lam, np.zeros((4, 4)), 0.3, 0.5, normalise=False)
    assert np.sum(np.abs(big) ** 2) > 0.5


def test_precoder_batch_equals_loop(gen):
    h = crandn(gen, 3, 2, 5)
    e = crandn(gen, 3, 2)
    lam = gen.uniform(0.5, 2, (3, 2))
    p = np.array([0.2, 0.5, 0.3])
    batch = precoder_closed_form(h, e, lam, 0.05, 0.1, p)
    for n in range(3):
        np.testing.assert_allclose(batch[n], precoder_closed_form(h[n], e[n], lam[n], 0.05, 0.1, p[n]), rtol=1e-12)


def test_precoder_is_stationary_point(gen):
    h = crandn(gen, 3, 4)
    f0 = crandn(gen, 4, 3)
    cov = random_cov(gen, 4, 0.1)
    p = 0.8
    e, _, lam = equalizers_and_weights(h, f0, cov, 0.2)
    f, scale = precoder_closed_form(h, e, lam, cov, 0.2, p, return_scale=True)
    x = f / scale

    def objective(z):
        return float(total_wmse(h, z, e, lam, cov, 0.2, power=p))

    step = 1e-5
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        for unit_dir in (1.0, 1j):
            xp, xm = x.copy(), x.copy()
            xp[idx] += unit_dir * step
            xm[idx] -= unit_dir * step
            grad[idx] += unit_dir * (objective(xp) - objective(xm)) / (2 * step)
    ref = np.zeros_like(x)
    g0 = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        for unit_dir in (1.0, 1j):
            rp, rm = ref.copy(), ref.copy()
            rp[idx] += unit_dir * step
            rm[idx] -= unit_dir * step
            g0[idx] += unit_dir * (objective(rp) - objective(rm)) / (2 * step)
    assert np.linalg.norm(grad) <= 1e-6 * np.linalg.norm(g0)


def test_precoder_rejects_bad_inputs(gen):
    h = crandn(gen, 2, 4)
    with pytest.raises(ValueError):
        precoder_closed_form(h, [1, 1], [1, 1], None, 0.1, 0.0)
    with pytest.raises(ValueError):
        precoder_closed_form(h, [1, 1], [1, -1], None, 0.1, 1.0)


# RZF and ZF


def test_rzf_single_user_matched_filter(gen):
    h = crandn(gen, 1, 8)
    f = rzf_precoder(h, 0.2, 0.9)
    assert cosine(f[:, 0], h[0]) == pytest.approx(1.0, abs=1e-12)
    assert np.sum(np.abs(f) ** 2) == pytest.approx(0.9, rel=1e-12)


def test_rzf_power_contract(gen):
    for _ in range(10):
        p = gen.uniform(0.01, 10)
        f = rzf_precoder(crandn(gen, 4, 16), gen.uniform(0.01, 1), p)
        assert np.sum(np.abs(f) ** 2) == pytest.approx(p, rel=1e-12)


def test_rzf_high_snr_approaches_pseudo_inverse():
    h = np.array([[1, 1j, 0, 0], [0, 0, 1, -1]], dtype=complex)  # orthogonal rows
    f = rzf_precoder(h, 1e-9, 1.0)
    pinv = np.linalg.pinv(h.conj())
    for k in range(2):
        assert cosine(f[:, k], pinv[:, k]) >= 0.999


def test_rzf_matches_formula(gen):
    h = crandn(gen, 3, 6)
    sig2, p = 0.3, 2.0
    ref = h.T @ np.linalg.inv(h.conj() @ h.T + 3 * sig2 / p * np.eye(3))
    np.testing.assert_allclose(rzf_precoder(h, sig2, p), ref * np.sqrt(p) / np.linalg.norm(ref), rtol=1e-12)


def test_zf_initialisation_removes_interference(gen):
    h = crandn(gen, 3, 4, 8)
    f = zf_initial_beamformer(h, 0.1, 2.0)
    assert f.shape == (4, 8, 3)
    np.testing.assert_allclose(np.sum(np.abs(f) ** 2, axis=(1, 2)), 0.5, rtol=1e-12)
    for n in range(4):
        g = h[:, n, :].conj() @ f[n]
        off = g - np.diag(np.diag(g))
        assert np.max(np.abs(off)) < 1e-12 * np.max(np.abs(g))


def test_zf_falls_back_on_rank_deficient_subcarrier(gen):
    h = crandn(gen, 2, 2, 6)
    h[1, 1] = h[0, 1]  # identical users on subcarrier 1
    f = zf_initial_beamformer(h, 0.1, 1.0)
    assert np.all(np.isfinite(f))
    np.testing.assert_allclose(np.sum(np.abs(f) ** 2, axis=(1, 2)), 0.5, rtol=1e-12)


# water-filling


def test_identical_subcarriers_get_uniform_power():
    prof = RateProfile(np.full((5, 1), 3.0), np.zeros((5, 1)), 0.5)
    np.testing.assert_allclose(waterfill_power(prof, 2.0).p, 0.4, rtol=1e-12)


def test_classical_two_subcarrier_case():
    prof = RateProfile(np.array([[1.0], [4.0]]), np.zeros((2, 1)), 1.0)
    alloc = waterfill_power(prof, 2.0)
    # mu = (2 + 1 + 1/4) / 2 = 1.625 ; p = mu - 1/g
    np.testing.assert_allclose(alloc.p, [0.625, 1.375], rtol=1e-10)
    grid = np.linspace(0, 2, 10**4)
    oracle = np.max(prof.rate(np.stack([grid, 2 - grid], axis=-1)).sum(axis=-1))
    assert prof.rate(alloc.p).sum() >= oracle - 1e-9
    assert prof.rate(alloc.p).sum() - oracle <= 1e-3


def test_weak_subcarrier_switched_off():
    prof = RateProfile(np.array([[10.0], [0.01]]), np.zeros((2, 1)), 1.0)
    alloc = waterfill_power(prof, 1.0)
    assert alloc.p[1] == 0
    assert alloc.p[0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(10))
def test_waterfill_with_interference_against_grid(seed):
    gen = np.random.default_rng(seed)
    prof = RateProfile(gen.uniform(0.1, 5, (2, 3)), gen.uniform(0, 2, (2, 3)), gen.uniform(0.05, 1))
    total = gen.uniform(0.1, 3)
    alloc = waterfill_power(prof, total)
    grid = np.linspace(0, total, 10**4)
    oracle = np.max(prof.rate(np.stack([grid, total - grid], axis=-1)).sum(axis=-1))
    got = prof.rate(alloc.p).sum()
    assert got >= oracle - 1e-9
    assert got - oracle <= 1e-3
    assert kkt_residual(prof, alloc) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_waterfill_feasibility_and_kkt(seed):
    gen = np.random.default_rng(100 + seed)
    n_c = 16
    prof = RateProfile(gen.exponential(1, (n_c, 4)), gen.exponential(0.3, (n_c, 4)), 0.05)
    alloc = waterfill_power(prof, 1.0)
    assert np.all(alloc.p >= 0)
    assert alloc.p.sum() == pytest.approx(1.0, rel=1e-9)
    assert kkt_residual(prof, alloc) <= 1e-8


def test_waterfill_matches_scipy_optimiser():
    from scipy.optimize import minimize

    gen = np.random.default_rng(7)
    prof = RateProfile(gen.uniform(0.5, 4, (4, 2)), gen.uniform(0, 1, (4, 2)), 0.2)
    alloc = waterfill_power(prof, 2.0)
    res = minimize(lambda p: -prof.rate(p).sum(), np.full(4, 0.5), method="SLSQP",
                   bounds=[(0, 2)] * 4, constraints=[{"type": "eq", "fun": lambda p: p.sum() - 2}],
                   options={"ftol": 1e-14, "maxiter": 500})
    assert prof.rate(alloc.p).sum() >= -res.fun - 1e-8


def test_rate_profile_derivatives_match_finite_differences():
    gen = np.random.default_rng(3)
    prof = RateProfile(gen.uniform(0.1, 5, (3, 2)), gen.uniform(0, 2, (3, 2)), 0.3)
    p = np.array([0.2, 1.0, 3.0])
    h = 1e-6
    np.testing.assert_allclose(prof.derivative(p), (prof.rate(p + h) - prof.rate(p - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(prof.second_derivative(p),
                               (prof.derivative(p + h) - prof.derivative(p - h)) / (2 * h), rtol=1e-5)


def test_rate_profile_contract_violations():
    with pytest.raises(ContractError):
        RateProfile(np.array([[-1.0]]), np.zeros((1, 1)), 1.0)
    with pytest.raises(ContractError):
        RateProfile(np.array([[1.0]]), np.array([[-0.5]]), 1.0)
    with pytest.raises(ContractError):
        RateProfile(np.array([[np.inf]]), np.zeros((1, 1)), 1.0)
    with pytest.raises(ContractError):
        RateProfile(np.array([[1.0]]), np.zeros((1, 1)), 0.0)


def test_rate_profile_from_beamformer(gen):
    h = crandn(gen, 2, 3, 4)
    f = crandn(gen, 3, 4, 2)
    prof = rate_profile(h, f, None, 0.1)
    p = np.array([0.3, 0.5, 0.2])
    scaled = f / np.linalg.norm(f, axis=(1, 2))[:, None, None] * np.sqrt(p)[:, None, None]
    _, eps, _ = equalizers_and_weights(np.swapaxes(h, 0, 1), scaled, None, 0.1)
    np.testing.assert_allclose(prof.rate(p), -np.log2(eps).sum(axis=-1), rtol=1e-12)


def test_power_allocation_validation():
    with pytest.raises(NumericError):
        PowerAllocation(np.array([-0.1, 0.5]), 1.0)
    with pytest.raises(NumericError):
        PowerAllocation(np.array([0.6, 0.6]), 1.0)


def test_beamformer_power_check():
    beam = Beamformer(np.ones((2, 2, 1), dtype=complex))  # |F[n]|^2 = 2
    beam.check_power(PowerAllocation(np.array([2.0, 2.0]), 4.0))
    with pytest.raises(NumericError, match="subcarrier"):
        beam.check_power(PowerAllocation(np.array([1.0, 2.0]), 4.0))


# WMMSE solver


def test_single_user_optimum(gen):
    h = crandn(gen, 1, 1, 8)
    sig2, p_t = 0.3, 2.0
    res = wmmse_solve(h, WmmseConfig(sig2, p_t, 5))
    _, total = evaluate_sum_rate(h, res.beamformer, sig2)
    assert total == pytest.approx(math.log2(1 + p_t * np.linalg.norm(h) ** 2 / sig2), abs=1e-6)


def test_solver_rejects_more_users_than_antennas(gen):
    with pytest.raises(ConfigError):
        wmmse_solve(crandn(gen, 5, 2, 4), WmmseConfig(0.1))


@pytest.mark.parametrize("kwargs", [dict(iterations=0), dict(noise_variance=0.0), dict(total_power=-1.0)])
def test_solver_config_validation(kwargs):
    base = dict(noise_variance=0.1, total_power=1.0, iterations=3)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        WmmseConfig(**base)


@pytest.mark.parametrize("cov", [None, 0.05])
def test_solver_power_constraints(gen, cov):
    res = wmmse_solve(crandn(gen, 3, 6, 8), WmmseConfig(0.05, 1.0, 5, cov))
    powers = res.beamformer.powers
    assert np.all(powers <= res.power.p * (1 + 1e-9))
    assert powers.sum() <= 1.0 * (1 + 1e-9)
    assert res.power.p.sum() == pytest.approx(1.0, rel=1e-9)
    assert res.equalizers.shape == res.weights.shape == (3, 6)
    assert np.all(res.weights > 0)


def test_solver_rate_mse_equivalence(gen):
    h = crandn(gen, 3, 4, 8)
    res = wmmse_solve(h, WmmseConfig(0.1, 1.0, 6))
    _, total = evaluate_sum_rate(h, res.beamformer, 0.1)
    # weights are 1/eps at the returned beamformer
    assert total == pytest.approx(np.mean(np.sum(np.log2(res.weights), axis=0)), abs=1e-9)


def test_solver_is_permutation_equivariant(gen):
    h = crandn(gen, 4, 3, 8)
    perm = np.array([2, 0, 3, 1])
    cfg = WmmseConfig(0.1, 1.0, 4, 0.02)
    a = wmmse_solve(h, cfg)
    b = wmmse_solve(h[perm], cfg)
    np.testing.assert_allclose(b.beamformer.matrices, a.beamformer.matrices[:, :, perm], rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(b.power.p, a.power.p, rtol=1e-8)


@pytest.mark.parametrize("cov", [None, 0.1])
def test_solver_monotone_in_each_block(gen, cov):
    h = crandn(gen, 3, 4, 8)
    log = []
    wmmse_solve(h, WmmseConfig(0.1, 1.0, 6, cov), trace=lambda stage, f, e, lam, p: log.append(
        (stage, float(np.sum(total_wmse(np.swapaxes(h, 0, 1), f, e, lam, cov, 0.1))))))
    stages = [s for s, _ in log]
    assert stages[:2] == ["weights", "precoder"]
    for (s0, v0), (s1, v1) in zip(log, log[1:]):
        if (s0, s1) in (("power", "weights"), ("weights", "precoder")):
            assert v1 <= v0 + 1e-9 * max(1.0, abs(v0))


def test_solver_beats_rzf_on_average():
    gen = np.random.default_rng(5)
    gain = 0.0
    for _ in range(10):
        h = crandn(gen, 4, 4, 16)
        res = wmmse_solve(h, WmmseConfig(0.02, 1.0, 10))
        rzf = np.stack([rzf_precoder(h[:, n], 0.02, 0.25) for n in range(4)])
        gain += evaluate_sum_rate(h, res.beamformer, 0.02)[1] - evaluate_sum_rate(h, rzf, 0.02)[1]
    assert gain > 0


# genie evaluation


def test_sum_rate_zero_beamformer(gen):
    per_user, total = evaluate_sum_rate(crandn(gen, 2, 3, 4), np.zeros((3, 4, 2)), 0.1)
    assert total == 0
    assert not np.any(per_user)


def test_sum_rate_single_user_matched(gen):
    h = crandn(gen, 1, 1, 6)
    f = (np.sqrt(2.0) * unit(h[0, 0]))[None, :, None]
    assert evaluate_sum_rate(h, f, 0.4)[1] == pytest.approx(math.log2(1 + 2.0 * np.linalg.norm(h) ** 2 / 0.4),
                                                            rel=1e-13)


def test_sum_rate_brute_force(gen):
    k, n_c, n_t, sig2 = 3, 4, 5, 0.2
    h, f = crandn(gen, k, n_c, n_t), crandn(gen, n_c, n_t, k)
    expected = 0.0
    for n in range(n_c):
        for u in range(k):
            powers = [abs(np.vdot(h[u, n], f[n, :, m])) ** 2 for m in range(k)]
            expected += math.log2(1 + powers[u] / (sum(powers) - powers[u] + sig2))
    assert evaluate_sum_rate(h, f, sig2)[1] == pytest.approx(expected / n_c, rel=1e-12)
