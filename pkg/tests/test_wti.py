import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thirring_lab.errors import ContractViolation
from thirring_lab.thirring_exact import Normalization, ThirringParams, compute_anomalies
from thirring_lab.wti_check import (
    CHANNELS,
    QuadratureSpec,
    TestFunction,
    extract_contact_coefficients,
    free_three_point,
    smeared_divergence,
    split_current_3pt,
    split_current_reference,
    vertex,
)

X, Y, Z = (0.3, 0.2), (1.5, -0.7), (-0.4, 1.1)


@pytest.mark.parametrize("channel", CHANNELS)
def test_free_split_current_matches_analytic(channel):
    d = min(math.dist(Z, X), math.dist(Z, Y), math.dist(X, Y))
    got = split_current_3pt(Z, X, Y, 1e-4 * d, channel)
    assert np.max(np.abs(got - free_three_point(Z, X, Y, channel))) < 1e-6


@pytest.mark.parametrize("lam,eta_plus", [(0.0, 0.0), (0.2, 0.0), (0.2, 0.01)])
@pytest.mark.parametrize("channel", CHANNELS)
def test_vectorized_matches_literal_n_point(lam, eta_plus, channel):
    p = ThirringParams(lam=lam, eta_plus=eta_plus)
    a = split_current_3pt(Z, X, Y, 1e-2, channel, p)
    b = split_current_reference(Z, X, Y, 1e-2, channel, p)
    assert np.max(np.abs(a - b)) < 1e-10


def test_axial_is_dual_of_vector():
    # gamma^5 gamma^mu = -i eps^{mu nu} gamma^nu
    eps = np.array([[0, 1], [-1, 0]])
    assert np.allclose(vertex("axial"), -1j * np.einsum("mn,nab->mab", eps, vertex("vector")))
    p = ThirringParams(lam=0.2)
    fv = split_current_3pt(Z, X, Y, 1e-3, "vector", p)
    fa = split_current_3pt(Z, X, Y, 1e-3, "axial", p)
    assert np.allclose(fa, -1j * np.einsum("mn,nws->mws", eps, fv), atol=1e-14)


def test_split_too_large_is_rejected():
    with pytest.raises(ContractViolation):
        split_current_3pt(Z, X, Y, 0.5)
    with pytest.raises(ContractViolation):
        split_current_3pt(Z, X, Y, 1e-3, channel="tensor")


def test_bump_integrates_to_one_and_gradient():
    f = TestFunction((0.2, -0.1), 0.7)
    r = np.linspace(0, 0.7, 4001)
    val = np.trapezoid(2 * np.pi * r * f(np.stack([0.2 + r, -0.1 + 0 * r], -1)), r)
    assert val == pytest.approx(1.0, abs=1e-6)
    z = np.array([0.4, 0.1])
    h = 1e-6
    fd = [(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(f.grad(z), fd, rtol=1e-6)


@pytest.mark.parametrize("lam,eta_plus", [(0.0, 0.0), (0.3, 0.0), (0.3, 0.02)])
@pytest.mark.parametrize("channel", CHANNELS)
def test_conserved_away_from_contacts(lam, eta_plus, channel):
    p = ThirringParams(lam=lam, eta_plus=eta_plus)
    f = TestFunction((-1.0, 1.2), 0.6)
    assert np.max(np.abs(smeared_divergence(f, (0, 0), (1.5, 0.5), channel, p))) < 1e-4


@pytest.mark.parametrize("channel", CHANNELS)
def test_free_contacts_equal_one(channel):
    est = extract_contact_coefficients((0, 0), (1.5, 0.5), channel)
    assert est.at_x == pytest.approx(1.0, abs=1e-10)
    assert est.at_y == pytest.approx(1.0, abs=1e-10)


def test_swap_flips_contact_sign():
    # exchanging x and y keeps the normalized coefficient, since S(x-y) flips with it
    a = extract_contact_coefficients((0, 0), (1.5, 0.5), "vector")
    b = extract_contact_coefficients((1.5, 0.5), (0, 0), "vector")
    assert a.coefficient == pytest.approx(b.coefficient, abs=1e-10)
    f = TestFunction((0.0, 0.0), 0.5)
    Ia = smeared_divergence(f, (0, 0), (1.5, 0.5), "vector")
    Ib = smeared_divergence(f, (1.5, 0.5), (0, 0), "vector")
    # psi-end contact carries -S(x-y), psibar-end contact +S(y-x) = -S(x-y)
    assert np.allclose(Ia, Ib, rtol=1e-10, atol=1e-14)
    assert abs(Ia[0, 1]) > 0.1


def test_contact_scales_with_C():
    est = extract_contact_coefficients((0, 0), (1.5, 0.5), "vector", norm=Normalization(C=2.5))
    assert est.coefficient == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.02, 0.02), st.sampled_from(CHANNELS))
def test_split_contact_equals_small_eps_expansion(lam, eta_plus, channel):
    """Normal-ordering remainder S_eps S_xy (R-1) shifts the contact by half a trace.

    Averaging e e^T over the split directions gives delta/2, and the
    divergence of grad(ln|z-x| - ln|z-y|) is 2 pi [delta_x - delta_y].  The
    two psi chiralities carry eta and eta_plus; gamma^5 flips the sign of the
    eta_plus one in the axial channel.
    """
    if lam == 0:
        eta_plus = 0.0
    p = ThirringParams(lam=lam, eta_plus=eta_plus)
    an = compute_anomalies(p)
    est = extract_contact_coefficients((0.1, -0.2), (1.2, 0.9), channel, p)
    sign = 1 if channel == "vector" else -1
    assert est.coefficient == pytest.approx(1 + 0.5 * (an.eta + sign * an.eta_plus), abs=1e-9)


def test_eps_stability():
    p = ThirringParams(lam=0.3, eta_plus=0.01)
    f = TestFunction((0.0, 0.0), 0.5)
    a = smeared_divergence(f, (0, 0), (1.5, 0.5), "vector", p, eps=1e-5)
    b = smeared_divergence(f, (0, 0), (1.5, 0.5), "vector", p, eps=5e-6)
    assert np.max(np.abs(a - b)) < 1e-8


def test_requires_separated_points():
    with pytest.raises(ContractViolation):
        extract_contact_coefficients((0, 0), (0.5, 0.0))
    with pytest.raises(ContractViolation):
        QuadratureSpec(radius_frac=0.6)
