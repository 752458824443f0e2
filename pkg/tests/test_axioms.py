import json

import numpy as np
import pytest

from thirring_lab.axioms_check import (
    HalfPlaneConfig,
    os_gram,
    os_gram_two_point,
    reflect,
    run_axiom_suite,
)
from thirring_lab.errors import ContractViolation
from thirring_lab.thirring_exact import Point, ThirringParams


def half_plane(rng, m):
    pts = [((float(rng.uniform(0.05, 3)), float(rng.uniform(-3, 3))), int(rng.choice([1, -1])))
           for _ in range(m)]
    coeffs = list(rng.normal(size=m) + 1j * rng.normal(size=m))
    return HalfPlaneConfig(pts, coeffs)


def test_reflect():
    assert reflect(Point(1, 2)) == (-1, 2)
    assert reflect(Point(0, 5)) == (0, 5)
    x = Point(0.3, -7.1)
    assert reflect(reflect(x)) == x


def test_half_plane_validation():
    with pytest.raises(ContractViolation):
        HalfPlaneConfig([])
    with pytest.raises(ContractViolation):
        HalfPlaneConfig([((0.0, 1.0), 1)])
    with pytest.raises(ContractViolation):
        HalfPlaneConfig([((1.0, 1.0), 1)], [1, 2])


def test_single_point_free():
    g = os_gram_two_point(HalfPlaneConfig([((0.7, 0.2), 1)]), ThirringParams())
    assert g.matrix.shape == (1, 1)
    # S(2t, 0)[+,-] = 1/(2t)
    assert g.matrix[0, 0] == pytest.approx(1 / 1.4)


def test_one_particle_kernel_closed_form():
    # <psi_j psibar(theta x_i)> gamma^0 sector: 1/(w_j + conj(w_i)), w = x0 + i x1
    rng = np.random.default_rng(3)
    cfg = half_plane(rng, 5)
    cfg.points = [(p, 1) for p, _ in cfg.points]
    cfg.coefficients = [1.0] * 5
    G = os_gram_two_point(cfg, ThirringParams()).matrix
    w = np.array([complex(*p) for p, _ in cfg.points])
    assert np.allclose(G, 1 / (w[None, :] + np.conj(w[:, None])), rtol=1e-14)


@pytest.mark.parametrize("lam,tol", [(0.0, -1e-10), (0.1, -1e-8), (-0.1, -1e-8)])
def test_gram_positive(lam, tol):
    rng = np.random.default_rng(42)
    for _ in range(30):
        g = os_gram_two_point(half_plane(rng, 4), ThirringParams(lam=lam))
        assert g.min_eigenvalue >= tol
        assert g.asymmetry <= 1e-12


@pytest.mark.parametrize("lam", [0.0, 0.2])
def test_higher_sector_positive(lam):
    rng = np.random.default_rng(8)
    for _ in range(5):
        g = os_gram(half_plane(rng, 5), ThirringParams(lam=lam), sector=2)
        ev = np.linalg.eigvalsh(g.matrix)
        assert ev.min() >= -1e-10 * abs(ev).max()


def test_suite_rejects_zero_trials():
    with pytest.raises(ContractViolation):
        run_axiom_suite(ThirringParams(), trials=0)


def test_suite_free_all_pass():
    rep = run_axiom_suite(ThirringParams(), trials=100, seed=7)
    assert rep.all_passed, rep.to_dict()
    json.dumps(rep.to_dict())


def test_suite_independent_of_workers():
    p = ThirringParams(lam=0.1)
    a = run_axiom_suite(p, trials=12, seed=3, workers=1).to_dict()
    b = run_axiom_suite(p, trials=12, seed=3, workers=4).to_dict()
    assert a == b
    assert a["all_passed"]
