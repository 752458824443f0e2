import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from thirring_lab.errors import ContractViolation, PoleError, SingularityError, SizeError
from thirring_lab.thirring_exact import (
    Normalization,
    Point,
    ThirringParams,
    compute_anomalies,
    g_function,
    homogeneity_degree,
    n_point,
    two_point,
    wick_determinant,
)

from oracles import anomalies_mp, n_point_mp


def random_config(rng, n, balanced=True, scale=3.0):
    pts = rng.uniform(-scale, scale, size=(2 * n, 2))
    om = rng.choice([1, -1], size=n)
    sg = -om if balanced else rng.choice([1, -1], size=n)
    sg = rng.permutation(sg)
    xs = [(tuple(pts[i]), int(om[i])) for i in range(n)]
    ys = [(tuple(pts[n + i]), int(sg[i])) for i in range(n)]
    return xs, ys


# -- anomalies ---------------------------------------------------------------

@pytest.mark.parametrize("xi", [0.0, 0.5, 1.0, -2.3])
def test_free_anomalies(xi):
    an = compute_anomalies(ThirringParams(lam=0.0, xi=xi))
    assert (an.nu, an.nu_bar, an.a, an.a_bar, an.eta, an.eta_plus) == (0, 0, 1, 1, 0, 0)


@pytest.mark.parametrize("lam", [-0.4, -0.1, 0.05, 0.2, 0.5])
def test_symmetric_regularization(lam):
    an = compute_anomalies(ThirringParams(lam=lam, xi=0.5))
    assert an.nu == pytest.approx(lam / (4 * math.pi), rel=1e-15)
    assert an.nu_bar == -an.nu


def test_anomaly_values_lambda_02():
    an = compute_anomalies(ThirringParams(lam=0.2, xi=0.5))
    assert an.nu == pytest.approx(0.0159155, abs=1e-7)
    assert an.a == pytest.approx(1.0161729, abs=1e-7)
    # quoted value 0.9843337 is truncated; mpmath gives 0.98433384
    assert an.a_bar == pytest.approx(0.9843337, abs=2e-7)
    assert an.eta == pytest.approx(5.0674e-4, rel=1e-4)
    ref = anomalies_mp(0.2, 0.5)
    for got, want in zip((an.nu, an.nu_bar, an.a, an.a_bar, an.eta), ref):
        assert got == pytest.approx(float(want), rel=1e-13)


def test_dimensional_regularization_only_axial():
    an = compute_anomalies(ThirringParams(lam=0.3, xi=1.0))
    assert an.nu == 0
    assert an.a == 1
    assert an.nu_bar == pytest.approx(-0.3 / (2 * math.pi))


@given(lam=st.floats(-0.5, 0.5), xi=st.floats(-3, 3))
def test_eta_identity(lam, xi):
    an = compute_anomalies(ThirringParams(lam=lam, xi=xi))
    assert an.eta == lam / (4 * math.pi) * (an.a - an.a_bar)


def test_eta_smooth_in_lambda():
    lams = np.linspace(-0.5, 0.5, 201)
    etas = np.array([compute_anomalies(ThirringParams(lam=l)).eta for l in lams])
    slope = np.diff(etas) / np.diff(lams)
    assert np.all(np.isfinite(slope))
    assert np.max(np.abs(np.diff(slope))) < 1e-3


def test_param_validation():
    with pytest.raises(ContractViolation):
        ThirringParams(lam=0.6)
    with pytest.raises(ContractViolation):
        ThirringParams(lam=0.1, mass=1.0)
    with pytest.raises(ContractViolation):
        ThirringParams(lam=0.0, eta_plus=0.1)
    # nu = (lam/2pi)(1-xi) = 1 at lam = 4pi, xi = 1/2
    with pytest.raises(PoleError):
        ThirringParams(lam=4 * math.pi, xi=0.5, lambda_max=100)


# -- two-point ---------------------------------------------------------------

def test_two_point_free():
    p = ThirringParams()
    s = two_point(Point(1, 0), p)
    assert np.array_equal(s, np.array([[0, 1], [1, 0]], dtype=complex))
    s = two_point(Point(0, 1), p)
    assert s[0, 1] == -1j and s[1, 0] == 1j
    assert s[0, 0] == 0 and s[1, 1] == 0


def test_two_point_interacting():
    s = two_point(Point(2, 0), ThirringParams(lam=0.2))
    assert s[0, 1].real == pytest.approx(0.4998244, abs=1e-7)
    assert s[0, 1].imag == 0


def test_two_point_amplitude():
    s = two_point(Point(1, 0), ThirringParams(), Normalization(C=2.5))
    assert s[0, 1] == 2.5


def test_two_point_singular():
    with pytest.raises(SingularityError):
        two_point(Point(0, 0), ThirringParams())


# -- g_function / n_point ----------------------------------------------------

def test_n1_reduces_to_two_point():
    p = ThirringParams(lam=0.3, eta_plus=0.01)
    x, y = (0.4, -1.2), (1.5, 0.3)
    s = two_point(Point(x[0] - y[0], x[1] - y[1]), p)
    for om in (1, -1):
        for sg in (1, -1):
            ref = s[0 if om == 1 else 1, 0 if sg == 1 else 1]
            assert g_function([(x, om)], [(y, sg)], p) == pytest.approx(ref, rel=1e-14, abs=0)
            assert n_point([(x, om)], [(y, sg)], p) == pytest.approx(ref, rel=1e-14, abs=0)


def test_g_against_mpmath_oracle():
    xs = [((0.3, 1.1), 1), ((-0.7, 0.2), -1)]
    ys = [((1.4, -0.5), -1), ((0.1, -1.3), 1)]
    val = g_function(xs, ys, ThirringParams(lam=0.2))
    assert val == pytest.approx(0.3008651245340125848 - 0.033939053682190436899j, rel=1e-13)
    val = g_function(xs, ys, ThirringParams(lam=0.2, eta_plus=0.01))
    assert val == pytest.approx(0.29800867088981846316 - 0.033616831777205124464j, rel=1e-13)


def test_n_point_against_mpmath_oracle():
    xs = [((0.3, 1.1), 1), ((-0.7, 0.2), 1)]
    ys = [((1.4, -0.5), -1), ((0.1, -1.3), -1)]
    val = n_point(xs, ys, ThirringParams(lam=0.2))
    assert val == pytest.approx(-0.065546683282417882696 + 0.096404508402485079891j, rel=1e-13)
    xs = [((0.3, 1.1), 1), ((-0.7, 0.2), -1), ((2.0, 0.5), 1)]
    ys = [((1.4, -0.5), -1), ((0.1, -1.3), 1), ((-1.0, -1.0), -1)]
    val = n_point(xs, ys, ThirringParams(lam=0.2, eta_plus=0.003))
    assert val == pytest.approx(-0.12794538631167117052 - 0.051824265637471316026j, rel=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_n_point_random_vs_mpmath(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(3):
        xs, ys = random_config(rng, n)
        got = n_point(xs, ys, ThirringParams(lam=-0.3, xi=0.2, eta_plus=0.02))
        want = complex(n_point_mp(xs, ys, -0.3, 0.2, 0.02))
        assert abs(got - want) <= 1e-12 * abs(want)


def test_n_point_equals_literal_permutation_sum():
    import itertools
    from thirring_lab.thirring_exact import _perm_sign
    rng = np.random.default_rng(5)
    p = ThirringParams(lam=0.25, eta_plus=-0.01)
    xs, ys = random_config(rng, 4)
    ref = sum(_perm_sign(pi) * g_function(xs, [ys[k] for k in pi], p)
              for pi in itertools.permutations(range(4)))
    assert n_point(xs, ys, p) == pytest.approx(ref, rel=1e-12)


def test_free_n_point_is_product_of_two_points():
    rng = np.random.default_rng(2)
    xs, ys = random_config(rng, 3)
    p = ThirringParams()
    ref = 1.0
    for (x, om), (y, sg) in zip(xs, ys):
        ref *= two_point(Point(x[0] - y[0], x[1] - y[1]), p)[(1 - om) // 2, (1 - sg) // 2]
    assert g_function(xs, ys, p) == pytest.approx(ref, rel=1e-14)


def test_determinant_structure_interacting():
    # the pairing-independent factors pull out, leaving a determinant
    rng = np.random.default_rng(9)
    p = ThirringParams(lam=0.4, xi=0.3, eta_plus=0.05)
    an = compute_anomalies(p)
    xs, ys = random_config(rng, 5)
    X = np.array([q for q, _ in xs]); Y = np.array([q for q, _ in ys])
    om = np.array([c for _, c in xs]); sg = np.array([c for _, c in ys])
    e = lambda s: np.where(s > 0, an.eta_plus, an.eta)  # noqa: E731
    rxy = np.linalg.norm(X[:, None] - Y[None], axis=-1)
    A = np.array([[g_function([xs[i]], [ys[j]], p) for j in range(5)] for i in range(5)])
    A = A * rxy ** e(om[:, None] * sg[None, :])
    logc = -np.sum(e(om[:, None] * sg[None, :]) * np.log(rxy))
    iu = np.triu_indices(5, 1)
    rxx = np.linalg.norm(X[:, None] - X[None], axis=-1)
    ryy = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    logc += np.sum(e(-om[:, None] * om[None, :])[iu] * np.log(rxx[iu]))
    logc += np.sum(e(-sg[:, None] * sg[None, :])[iu] * np.log(ryy[iu]))
    assert n_point(xs, ys, p) == pytest.approx(np.exp(logc) * np.linalg.det(A), rel=1e-11)


def test_size_and_shape_errors():
    rng = np.random.default_rng(0)
    xs, ys = random_config(rng, 9)
    with pytest.raises(SizeError):
        n_point(xs, ys, ThirringParams())
    with pytest.raises(ContractViolation):
        n_point(xs[:2], ys[:3], ThirringParams())
    with pytest.raises(SingularityError):
        n_point([((0, 0), 1)], [((0, 0), -1)], ThirringParams())
    with pytest.raises(SingularityError):
        n_point([((0, 0), 1), ((0, 0), -1)], [((1, 0), -1), ((2, 0), 1)], ThirringParams())


# -- free-field equivalence --------------------------------------------------

def test_wick_small_cases():
    p = ThirringParams()
    xs = [((0.5, 0.1), 1)]
    ys = [((-1.0, 2.0), -1)]
    assert wick_determinant(xs, ys, p) == pytest.approx(n_point(xs, ys, p), rel=1e-15)
    rng = np.random.default_rng(1)
    xs, ys = random_config(rng, 2)
    M = [[g_function([xs[i]], [ys[j]], p) for j in range(2)] for i in range(2)]
    assert wick_determinant(xs, ys, p) == pytest.approx(
        M[0][0] * M[1][1] - M[0][1] * M[1][0], rel=1e-13)


def test_wick_rejects_interacting():
    with pytest.raises(ContractViolation):
        wick_determinant([((0, 1), 1)], [((0, 0), -1)], ThirringParams(lam=0.1))


def test_free_field_equivalence_random():
    rng = np.random.default_rng(11)
    p = ThirringParams()
    worst = 0.0
    for trial in range(100):
        n = 1 + trial % 5
        xs, ys = random_config(rng, n)
        w = wick_determinant(xs, ys, p)
        worst = max(worst, abs(n_point(xs, ys, p) - w) / abs(w))
    assert worst <= 1e-10


# -- invariants --------------------------------------------------------------

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 4),
       lam=st.floats(-0.4, 0.4), ep=st.floats(-0.05, 0.05))
@example(seed=327, n=4, lam=0.0, ep=0.0)
def test_antisymmetry(seed, n, lam, ep):
    # the permutation sum cancels strongly for n = 4, so the reordering
    # residual is bounded relative to the terms, not to the (small) total
    rng = np.random.default_rng(seed)
    xs, ys = random_config(rng, n)
    p = ThirringParams(lam=lam, eta_plus=ep if lam != 0 else 0.0)
    v = n_point(xs, ys, p)
    xs2 = list(xs); xs2[0], xs2[1] = xs2[1], xs2[0]
    ys2 = list(ys); ys2[0], ys2[-1] = ys2[-1], ys2[0]
    assert abs(n_point(xs2, ys, p) + v) <= 1e-10 * abs(v) + 1e-300
    assert abs(n_point(xs, ys2, p) + v) <= 1e-10 * abs(v) + 1e-300


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4),
       lam=st.floats(-0.2, 0.2), ep=st.floats(-0.05, 0.05))
def test_scaling_covariance(seed, n, lam, ep):
    rng = np.random.default_rng(seed)
    xs, ys = random_config(rng, n)
    p = ThirringParams(lam=lam, eta_plus=ep if lam != 0 else 0.0)
    deg = homogeneity_degree([c for _, c in xs], [c for _, c in ys], compute_anomalies(p))
    v = n_point(xs, ys, p)
    if v == 0:
        return
    for s in (0.5, 2.0, 10.0):
        scaled = n_point([((s * q[0], s * q[1]), c) for q, c in xs],
                         [((s * q[0], s * q[1]), c) for q, c in ys], p)
        assert abs(scaled - s ** deg * v) <= 1e-9 * abs(s ** deg * v)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
def test_chirality_selection(seed, n):
    rng = np.random.default_rng(seed)
    xs, ys = random_config(rng, n, balanced=False)
    p = ThirringParams(lam=0.3, eta_plus=0.02)
    if sum(c for _, c in xs) != -sum(c for _, c in ys):
        assert n_point(xs, ys, p) == 0


def test_homogeneity_examples():
    an0 = compute_anomalies(ThirringParams())
    assert homogeneity_degree([1, -1, 1], [-1, 1, -1], an0) == -3
    an = compute_anomalies(ThirringParams(lam=0.2, eta_plus=0.01))
    assert homogeneity_degree([1], [-1], an) == pytest.approx(-(1 + an.eta))
    # ratio test at two scales
    xs = [((0.3, 1.1), 1), ((-0.7, 0.2), -1)]
    ys = [((1.4, -0.5), -1), ((0.1, -1.3), 1)]
    p = ThirringParams(lam=0.2, eta_plus=0.01)
    v1 = n_point(xs, ys, p)
    v2 = n_point([((3 * q[0], 3 * q[1]), c) for q, c in xs],
                 [((3 * q[0], 3 * q[1]), c) for q, c in ys], p)
    measured = math.log(abs(v2 / v1)) / math.log(3)
    assert measured == pytest.approx(homogeneity_degree([1, -1], [-1, 1], an), abs=1e-12)
