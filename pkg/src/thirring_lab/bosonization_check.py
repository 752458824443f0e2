"""Free-boson side of the massless bosonization dictionary.

Boson propagator convention: for the action (1/2beta) int (d phi)^2 the
two-point function is D(x) = -(beta/4pi) ln(|x|^2/ell^2), i.e. the momentum
integral beta * int d^2p/(2pi)^2 e^{ipx}/p^2 referenced to |x| = ell.
Only decay exponents are compared with the fermion side; amplitudes carry
the convention-dependent zeta factors and are not matched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ContractViolation, FitError, RangeError, SingularityError
from .thirring_exact import (
    Normalization,
    ThirringParams,
    compute_anomalies,
    grassmann_sign,
    homogeneity_degree,
    n_point,
)

# Levi-Civita with eps^{01} = +1
EPS = np.array([[0.0, 1.0], [-1.0, 0.0]])
GAMMA5_DIAG = (-1, 1)  # i gamma^0 gamma^1 = diag(-1, +1)
BETA_MAX = 16 * math.pi


@dataclass(frozen=True)
class BosonParams:
    beta: float = 4 * math.pi
    ell: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta < BETA_MAX:
            raise ContractViolation("beta must lie in (0, 16 pi)")
        if not self.ell > 0:
            raise ContractViolation("ell must be positive")


def _r2(x) -> float:
    r2 = float(x[0]) ** 2 + float(x[1]) ** 2
    if r2 == 0:
        raise SingularityError("boson propagator at coincident points")
    return r2


def boson_propagator(x, bp: BosonParams) -> float:
    return -bp.beta / (4 * math.pi) * math.log(_r2(x) / bp.ell ** 2)


def vertex_correlator(ys: Sequence, bp: BosonParams) -> float:
    """<prod_j :exp(i sigma_j phi(y_j)):> for charges sigma_j = +-1."""
    charges = []
    for _, s in ys:
        if s not in (1, -1):
            raise ContractViolation(f"vertex charge must be +-1, got {s}")
        charges.append(s)
    pts = [(float(p[0]), float(p[1])) for p, _ in ys]
    if len(set(pts)) != len(pts):
        raise SingularityError("vertex operators at coincident points")
    if sum(charges) != 0:
        return 0.0
    log_val = 0.0
    k = bp.beta / (2 * math.pi)
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            r = math.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1])
            log_val += k * charges[i] * charges[j] * math.log(r / bp.ell)
    return math.exp(log_val)


def vertex_exponent(bp: BosonParams) -> float:
    """Decay exponent of the neutral (+,-) pair: beta / 2pi."""
    return bp.beta / (2 * math.pi)


def boson_hessian(x, bp: BosonParams) -> np.ndarray:
    r2 = _r2(x)
    xv = np.array([float(x[0]), float(x[1])])
    return -bp.beta / (2 * math.pi) * (np.eye(2) * r2 - 2 * np.outer(xv, xv)) / r2 ** 2


def current_correlator_boson(x, mu: int, nu: int, bp: BosonParams) -> float:
    """(1/pi) eps^{mu a} eps^{nu c} d_a d_c D(x)."""
    if mu not in (0, 1) or nu not in (0, 1):
        raise ContractViolation("direction indices must be 0 or 1")
    return float((EPS @ boson_hessian(x, bp) @ EPS.T)[mu, nu] / math.pi)


def current_correlator_fermion_free(x, mu: int, nu: int, norm: Normalization | None = None) -> float:
    """Free fermion loop -tr(gamma^mu S(x) gamma^nu S(-x)) = 2C^2 (2 x^mu x^nu - delta |x|^2)/|x|^4."""
    norm = norm or Normalization()
    r2 = _r2(x)
    xv = (float(x[0]), float(x[1]))
    return 2 * norm.C ** 2 * (2 * xv[mu] * xv[nu] - (mu == nu) * r2) / r2 ** 2


# -- fermion side ------------------------------------------------------------

def _bilinear_fields(center, c: int, e, eps: float):
    h = 0.5 * eps
    plus = (center[0] + h * e[0], center[1] + h * e[1])
    minus = (center[0] - h * e[0], center[1] - h * e[1])
    return (plus, c), (minus, c)


def bilinear_correlator(params: ThirringParams, sigma: int, r: float,
                        direction=(1.0, 0.0), split=(1.0, 0.0), eps_rel: float = 1e-3,
                        norm: Normalization | None = None) -> float:
    """Point-split <O^sigma_x O^{-sigma}_0> at |x| = r, with the split factor removed.

    O^sigma = psibar (1 + sigma gamma^5) psi = 2 psibar_c psi_c with c = -sigma.
    psi sits at x + eps e/2 and psibar at x - eps e/2; the intra-pair factor
    prod_j |x_j - y_j|^{-eta_{w_j s_j}} is divided out.
    """
    if sigma not in (1, -1):
        raise ContractViolation("sigma must be +-1")
    c = -sigma
    eps = eps_rel * r
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    e = np.asarray(split, float)
    e = e / np.linalg.norm(e)
    x = (r * d[0], r * d[1])
    px, mx = _bilinear_fields(x, c, e, eps)
    p0, m0 = _bilinear_fields((0.0, 0.0), -c, e, eps)
    # psibar_1 psi_1 psibar_2 psi_2 = - psi_1 psi_2 psibar_1 psibar_2
    val = -4.0 * grassmann_sign(2) * n_point([px, p0], [mx, m0], params, norm)
    an = compute_anomalies(params)
    eps_factor = eps ** (-2 * an.eta_of(c * c))
    return float(val.real / eps_factor)


def bilinear_exponent_prediction(params: ThirringParams, sigma: int) -> float:
    """Decay exponent implied by the exponent bookkeeping, split factor removed."""
    c = -sigma
    an = compute_anomalies(params)
    deg = homogeneity_degree([c, -c], [c, -c], an)
    eps_deg = -2 * an.eta_of(c * c)
    return -(deg - eps_deg)


def default_r_grid() -> np.ndarray:
    return np.geomspace(1.0, 100.0, 9)


def fermion_bilinear_exponent(params: ThirringParams, sigma: int = 1, r_grid=None,
                              direction=(1.0, 0.0), eps_rel: float = 1e-3,
                              norm: Normalization | None = None,
                              residual_tol: float = 1e-6) -> float:
    """Log-log fitted decay exponent 2 kappa_F of <O^sigma_x O^{-sigma}_0>.

    Averages the two axis-aligned split directions.
    """
    r_grid = default_r_grid() if r_grid is None else np.asarray(r_grid, float)
    if len(r_grid) < 3 or np.any(r_grid <= 0):
        raise ContractViolation("need at least 3 positive separations")
    vals = np.array([
        0.5 * (abs(bilinear_correlator(params, sigma, r, direction, (1, 0), eps_rel, norm))
               + abs(bilinear_correlator(params, sigma, r, direction, (0, 1), eps_rel, norm)))
        for r in r_grid
    ])
    if np.any(vals <= 0):
        raise FitError("bilinear correlator vanished on the grid")
    lr, lv = np.log(r_grid), np.log(vals)
    slope, icpt = np.polyfit(lr, lv, 1)
    resid = np.max(np.abs(lv - (slope * lr + icpt)))
    if resid > residual_tol:
        raise FitError(f"bilinear correlator is not a pure power law (max log residual {resid:.3g})")
    return float(-slope)


def match_beta(params: ThirringParams, **kw) -> float:
    """Boson stiffness whose vertex exponent equals the fermion bilinear exponent."""
    if params.lam == 0:
        # free-fermion identity: bilinear exponent 2 = beta/2pi at beta = 4 pi
        return 4 * math.pi
    target = fermion_bilinear_exponent(params, 1, **kw)
    f = lambda b: b / (2 * math.pi) - target  # noqa: E731
    lo, hi = 1e-9, BETA_MAX * (1 - 1e-12)
    if f(lo) * f(hi) > 0:
        raise RangeError(f"no beta in (0, 16 pi) reproduces exponent {target}")
    return float(brentq(f, lo, hi, xtol=1e-14, rtol=1e-15))


def beta_slope(lam: float = 0.1, xi: float = 0.5, eta_plus: float = 0.0) -> float:
    """Symmetric-difference estimate of d beta / d lambda at the origin."""
    bp = match_beta(ThirringParams(lam=lam, xi=xi, eta_plus=eta_plus))
    bm = match_beta(ThirringParams(lam=-lam, xi=xi, eta_plus=-eta_plus))
    return (bp - bm) / (2 * lam)
