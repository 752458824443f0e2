import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thirring_lab.analysis import (
    FitResult,
    PoorFitWarning,
    WindowPolicy,
    integrated_autocorr_time,
    jackknife,
    kadanoff_product,
    local_slopes,
    power_law_fit,
    ratio_fit,
)
from thirring_lab.errors import ContractViolation, FitError

R = np.arange(2.0, 33.0)


def test_exact_power_law_recovered():
    f = power_law_fit(R, 3.0 * R ** -2)
    assert f.exponent == pytest.approx(-2.0, abs=1e-12)
    assert f.amplitude == pytest.approx(3.0, rel=1e-12)
    assert f.kappa == pytest.approx(1.0, abs=1e-12)
    assert f.window == (2.0, 32.0) and f.n_points == len(R)


def test_corrections_to_scaling_controlled_by_window():
    r = np.arange(2.0, 65.0)
    v = r ** -2 * (1 + 0.5 / r)
    f = power_law_fit(r, v, policy=WindowPolicy(r_min=8, r_max=64))
    assert abs(f.exponent + 2) <= 0.03
    g = power_law_fit(R, R ** -2 * (1 + 0.5 / R), policy=WindowPolicy(r_floor=8))
    assert g.window[0] >= 8 and abs(g.exponent + 2) <= 0.03


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(0.3, 3.0))
def test_amplitude_rescaling_leaves_exponent_unchanged(scale, p):
    v = R ** -p
    a = power_law_fit(R, v)
    b = power_law_fit(R, scale * v)
    assert b.exponent == pytest.approx(a.exponent, abs=1e-12)
    assert b.window == a.window


def test_power_of_two_scaling_is_bit_identical():
    v = R ** -1.7
    assert power_law_fit(R, 4.0 * v).exponent == power_law_fit(R, v).exponent


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 4.0))
def test_separation_rescaling(c):
    # C(r) = r^-p read at r' = c r is the same law with a rescaled amplitude
    v = R ** -1.3
    a = power_law_fit(R, v)
    b = power_law_fit(c * R, v)
    assert b.exponent == pytest.approx(a.exponent, abs=1e-12)


def test_negative_correlator_sign_definite():
    f = power_law_fit(R, -2.0 * R ** -1.5)
    assert f.exponent == pytest.approx(-1.5, abs=1e-12)
    assert f.amplitude == pytest.approx(-2.0, rel=1e-12)


def test_sign_changes_without_window_raise():
    v = np.where(np.arange(len(R)) % 2 == 0, 1.0, -1.0) * R ** -2
    with pytest.raises(FitError):
        power_law_fit(R, v)
    with pytest.raises(FitError):
        power_law_fit(R, v, policy=WindowPolicy(r_min=2, r_max=10))


def test_window_stops_at_sign_change():
    v = R ** -2.0
    v[20:] *= -1
    f = power_law_fit(R, v)
    assert f.window[1] <= R[19]


def test_r_floor_excludes_short_distances():
    v = R ** -2 * (1 + 5 * np.exp(-R))
    f = power_law_fit(R, v, policy=WindowPolicy(r_floor=6))
    assert f.window[0] >= 6
    assert f.exponent == pytest.approx(-2.0, abs=2e-3)


def test_contracts():
    with pytest.raises(ContractViolation):
        power_law_fit(R, R[:-1])
    with pytest.raises(ContractViolation):
        power_law_fit(R[::-1], R ** -2)
    with pytest.raises(ContractViolation):
        FitResult(-2.0, 1.0, -1.0, (1.0, 2.0), 0.0)
    with pytest.raises(ContractViolation):
        FitResult(-2.0, 1.0, 0.1, (3.0, 2.0), 0.0)
    with pytest.raises(ContractViolation):
        jackknife(np.ones(1))


def test_poor_fit_warns():
    v = R ** -2 * (1 + 0.3 * np.sin(R))
    with pytest.warns(PoorFitWarning):
        power_law_fit(R, v, errors=1e-4 * v, policy=WindowPolicy(r_min=2, r_max=32))


def test_noisy_fit_error_is_honest():
    rng = np.random.default_rng(0)
    p_true, rel = 2.0, 0.02
    hits, fits = 0, []
    for _ in range(200):
        v = R ** -p_true * (1 + rel * rng.standard_normal(len(R)))
        f = power_law_fit(R, v, errors=rel * R ** -p_true, policy=WindowPolicy(r_min=2, r_max=32))
        fits.append(f.exponent)
        hits += abs(f.exponent + p_true) <= 2 * f.stderr
    assert hits >= 180
    assert np.std(fits) == pytest.approx(f.stderr, rel=0.2)


def test_jackknife_mean_agrees_with_naive_error():
    x = np.random.default_rng(1).standard_normal(500)
    est, err = jackknife(x)
    assert est == pytest.approx(x.mean(), abs=1e-15)
    naive = x.std(ddof=1) / math.sqrt(len(x))
    assert err == pytest.approx(naive, rel=1e-10)
    est2, err2 = jackknife(x, lambda s: s.mean(axis=0))
    assert err2 == pytest.approx(err, rel=1e-10)
    assert 0.5 < jackknife(x, lambda s: s.mean() ** 2)[1] / (2 * abs(x.mean()) * naive) < 2


def test_jackknife_slope_error_matches_fit_error():
    rng = np.random.default_rng(2)
    blocks = R ** -2 * (1 + 0.05 * rng.standard_normal((200, len(R))))
    mean = blocks.mean(0)
    err = blocks.std(0, ddof=1) / math.sqrt(len(blocks))
    # leave-one-out block means play the role of jackknife samples
    loo = (blocks.sum(0)[None] - blocks) / (len(blocks) - 1)
    pol = WindowPolicy(r_min=2, r_max=32)
    a = power_law_fit(R, mean, err, pol)
    b = power_law_fit(R, mean, err, pol, samples=loo)
    assert 0.5 < b.stderr / a.stderr < 2


def test_ratio_fit_removes_shared_distortion():
    ref = R ** -2 * (1 + 3 * (R / 40) ** 2)
    f = ratio_fit(R, 5 * ref * R ** -0.2, ref)
    assert f.exponent == pytest.approx(-2.2, abs=1e-12)
    assert f.amplitude == pytest.approx(5.0, rel=1e-12)


def test_kadanoff_product():
    one = FitResult(-2.0, 1.0, 0.02, (2.0, 8.0), 1.0)
    val, err = kadanoff_product(one, one)
    assert val == pytest.approx(1.0, abs=1e-15)
    assert err == pytest.approx(math.hypot(0.01, 0.01), rel=1e-12)
    a = FitResult(-2.2, 1.0, 0.0, (2.0, 8.0), 1.0)
    b = FitResult(-1 / 1.1 * 2, 1.0, 0.0, (2.0, 8.0), 1.0)
    assert kadanoff_product(a, b)[0] == pytest.approx(1.0, abs=1e-14)


def test_local_slopes_exact():
    assert np.allclose(local_slopes(R, R ** -1.25), -1.25, atol=1e-12)


def test_tau_int_ar1():
    rng = np.random.default_rng(3)
    phi, n = 0.8, 200_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = 0.0
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    exact = 0.5 * (1 + phi) / (1 - phi)
    assert integrated_autocorr_time(x) == pytest.approx(exact, rel=0.1)
    assert integrated_autocorr_time(rng.standard_normal(10_000)) == pytest.approx(0.5, abs=0.1)
    assert integrated_autocorr_time(np.ones(100)) == 0.5


def test_fit_result_serializes():
    d = FitResult(-2.0, 1.0, 0.1, (2.0, 8.0), 1.0, 7).to_dict()
    assert d["kappa"] == 1.0 and d["kappa_stderr"] == 0.05 and d["window"] == [2.0, 8.0]
