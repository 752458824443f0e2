"""Ward-Takahashi contact terms from the point-split current three-point function.

The current is split as J^mu(z) = :psibar(z - eps e/2) Gamma^mu psi(z + eps e/2):
with Gamma = gamma^mu (vector) or gamma^5 gamma^mu (axial), averaged over the
four directions e = +-e0, +-e1.  The divergence is taken weakly, by integrating by parts
onto a compactly supported bump,

    int f d_mu F^mu = - int (d_mu f) F^mu,

so the delta-function contact terms at x and y are read off directly, with no
pointwise finite differencing of a distribution.

Calibration: the free Dirac equation gamma^mu d_mu S = 2 pi C delta fixes

    d_mu <J_V^mu(z) psi_x psibar_y> = -2 pi C [delta(z-x) - delta(z-y)] S(x-y)
    d_mu <J_A^mu(z) psi_x psibar_y> = +2 pi C [delta(z-x) - delta(z-y)] gamma^5 S(x-y)

and the reported coefficients are normalized so that both equal 1 at lambda=0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .errors import ContractViolation, QuadratureError
from .thirring_exact import (
    Normalization,
    ThirringParams,
    compute_anomalies,
    grassmann_sign,
    n_point,
    two_point,
)

GAMMA = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]]], dtype=complex)
GAMMA5 = np.diag([-1.0, 1.0]).astype(complex)
CHANNELS = ("vector", "axial")
SPLIT_MAX_REL = 0.1
CHIS = (1, -1)
# symmetric split directions: the O(eps) term cancels
SPLIT_DIRS = tuple(np.array(v) for v in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)))


def vertex(channel: str) -> np.ndarray:
    """Gamma^mu for the channel, shape (2, 2, 2) indexed [mu, a, b]."""
    if channel == "vector":
        return GAMMA.copy()
    if channel == "axial":
        return np.einsum("ab,mbc->mac", GAMMA5, GAMMA)
    raise ContractViolation(f"channel must be one of {CHANNELS}, got {channel!r}")


def contact_calibration(channel: str, norm: Normalization) -> float:
    return (-1.0 if channel == "vector" else 1.0) * 2 * math.pi * norm.C


# -- test functions -----------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """Bump c (1 - r^2/rho^2)^k on the disk |z - center| < rho, unit integral."""

    __test__ = False  # not a pytest class

    center: tuple
    radius: float
    degree: int = 4

    def __post_init__(self):
        if not self.radius > 0:
            raise ContractViolation("test-function radius must be positive")
        if self.degree < 2:
            raise ContractViolation("degree >= 2 keeps the bump C^1")

    @property
    def norm_const(self) -> float:
        return (self.degree + 1) / (math.pi * self.radius ** 2)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        d = z - np.asarray(self.center, float)
        u = 1 - np.sum(d * d, axis=-1) / self.radius ** 2
        return self.norm_const * np.where(u > 0, u, 0.0) ** self.degree

    def grad(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        d = z - np.asarray(self.center, float)
        u = 1 - np.sum(d * d, axis=-1) / self.radius ** 2
        k = self.degree
        g = -2 * k * self.norm_const * np.where(u > 0, u, 0.0) ** (k - 1) / self.radius ** 2
        return g[..., None] * d


@dataclass(frozen=True)
class QuadratureSpec:
    order: int = 24
    radius_frac: float = 0.4
    degree: int = 4
    eps_rel: float = 1e-4
    tol: float = 1e-4

    def __post_init__(self):
        if self.order < 4:
            raise ContractViolation("quadrature order must be >= 4")
        if not 0 < self.radius_frac < 0.5:
            raise ContractViolation("radius_frac must lie in (0, 0.5) so the bumps do not overlap")
        if not 0 < self.eps_rel <= SPLIT_MAX_REL:
            raise ContractViolation(f"eps_rel must lie in (0, {SPLIT_MAX_REL}]")


# -- split current ------------------------------------------------------------

def _check_split(Z, x, y, eps):
    if not eps > 0:
        raise ContractViolation("split eps must be positive")
    dmin = min(np.min(np.hypot(*(Z - x).T)), np.min(np.hypot(*(Z - y).T)),
               math.hypot(*(x - y)))
    if eps > SPLIT_MAX_REL * dmin:
        raise ContractViolation(
            f"split eps={eps:.3g} exceeds {SPLIT_MAX_REL} x min separation {dmin:.3g}")


def _s_entries(d, om):
    """1/(d0 + i om d1): S(d)[om, -om] without C and |d|^-eta, vectorized."""
    return 1.0 / (d[..., 0] + 1j * om * d[..., 1])


def _log_ratio(d, h):
    """ln|d + h| - ln|d - h|, stable for |h| << |d|."""
    dm = d - h
    return 0.5 * np.log1p(4 * np.sum(h * d, axis=-1) / np.sum(dm * dm, axis=-1))


def _split_field(Z, x, y, eps, channel, params, norm):
    """Vectorized split three-point function, shape (N, 2, 2, 2) = [z, mu, w, s].

    For each split direction e and chiralities (a, b) of (psibar, psi), the
    Grassmann expectation <psibar_a psi_b psi_w psibar_s> equals
    g(swap) - g(id) of the two-pair product formula; normal ordering removes
    the z-independent product <psibar_a psi_b><psi_w psibar_s>, which leaves
    g(swap) - S_eps S_xy (R - 1).  The common eps^{-eta} is stripped.
    """
    an = compute_anomalies(params)
    C = norm.C
    G = vertex(channel)
    e_of = an.eta_of
    out = np.zeros((len(Z), 2, 2, 2), dtype=complex)
    dxy = x - y
    rxy = math.hypot(*dxy)
    for e in SPLIT_DIRS:
        h = 0.5 * eps * e
        zp, zm = Z + h, Z - h
        dpx, dpy = zp - x, zp - y
        dmx, dmy = zm - x, zm - y
        rpx, rpy = np.hypot(*dpx.T), np.hypot(*dpy.T)
        rmx, rmy = np.hypot(*dmx.T), np.hypot(*dmy.T)
        # ln of the two cross distances entering R, each as a stable difference
        lx = _log_ratio(Z - x, h)  # ln|z+ - x| - ln|z- - x|
        ly = _log_ratio(Z - y, h)  # ln|z+ - y| - ln|z- - y|
        for iw, w in enumerate(CHIS):
            for is_, s in enumerate(CHIS):
                if w == s:
                    continue
                for ib, b in enumerate(CHIS):
                    a = -b
                    ia = 1 - ib
                    gam = G[:, ia, ib]
                    if not np.any(gam):
                        continue
                    es = e_of(-b * w)
                    # g(swap): pairs (z+,b)-(y,s) and (x,w)-(z-,a); the cross
                    # denominators are |z+ - z-|^eta (stripped) and |x - y|
                    if b != s and w != a:
                        dxm = -dmx
                        swap = (C * C * rpy ** (-an.eta) * rmx ** (-an.eta)
                                * _s_entries(dpy, b) * _s_entries(dxm, w)
                                * np.exp(es * np.log(rpx) + e_of(-a * s) * np.log(rmy)
                                         - e_of(w * s) * math.log(rxy)))
                    else:
                        swap = 0.0
                    # disconnected remainder: S_eps[b,a] S_xy[w,s] (R - 1), times eps^eta
                    s_eps = C * eps ** (-1.0) / (e[0] + 1j * b * e[1])
                    s_xy = C * rxy ** (-an.eta) / (dxy[0] + 1j * w * dxy[1])
                    lnR = es * (lx - ly)
                    disc = s_eps * s_xy * np.expm1(lnR)
                    val = swap - disc
                    out[:, :, iw, is_] += 0.25 * gam[None, :] * val[:, None]
    return out


def split_current_3pt(z, x, y, eps: float, channel: str = "vector",
                      params: ThirringParams | None = None,
                      norm: Normalization | None = None) -> np.ndarray:
    """<:J^mu(z): psi_{x,w} psibar_{y,s}> with the eps^{-eta} split factor removed.

    Returns a complex array of shape (2, 2, 2) indexed [mu, w, s], chirality
    index 0 for + and 1 for -.
    """
    params = params or ThirringParams()
    norm = norm or Normalization()
    vertex(channel)
    Z = np.atleast_2d(np.asarray(z, float))
    x, y = np.asarray(x, float), np.asarray(y, float)
    _check_split(Z, x, y, eps)
    return _split_field(Z, x, y, eps, channel, params, norm)[0]


def split_current_reference(z, x, y, eps: float, channel: str = "vector",
                            params: ThirringParams | None = None,
                            norm: Normalization | None = None) -> np.ndarray:
    """Same quantity assembled literally from :func:`n_point`; slow, for checks."""
    params = params or ThirringParams()
    norm = norm or Normalization()
    G = vertex(channel)
    an = compute_anomalies(params)
    z, x, y = (np.asarray(v, float) for v in (z, x, y))
    out = np.zeros((2, 2, 2), dtype=complex)
    Sxy = two_point(x - y, params, norm)
    for e in SPLIT_DIRS:
        h = 0.5 * eps * e
        zp, zm = tuple(z + h), tuple(z - h)
        Seps = two_point(2 * h, params, norm)
        for iw, w in enumerate(CHIS):
            for is_, s in enumerate(CHIS):
                for ia, a in enumerate(CHIS):
                    for ib, b in enumerate(CHIS):
                        gam = G[:, ia, ib]
                        if not np.any(gam):
                            continue
                        # psibar_a psi_b psi_w psibar_s = psi_b psi_w psibar_a psibar_s
                        full = grassmann_sign(2) * n_point(
                            [(zp, b), (tuple(x), w)], [(zm, a), (tuple(y), s)], params, norm)
                        # minus <psibar_a psi_b><psi_w psibar_s> = -(-S_eps[b,a]) S_xy[w,s]
                        val = full + Seps[ib, ia] * Sxy[iw, is_]
                        out[:, iw, is_] += 0.25 * gam * val * eps ** an.eta
    return out


def free_three_point(z, x, y, channel: str = "vector",
                     norm: Normalization | None = None) -> np.ndarray:
    """Free-field S(x - z) Gamma^mu S(z - y), shape [mu, w, s]."""
    norm = norm or Normalization()
    free = ThirringParams()
    z, x, y = (np.asarray(v, float) for v in (z, x, y))
    A = two_point(x - z, free, norm)
    B = two_point(z - y, free, norm)
    return np.einsum("wa,mab,bs->mws", A, vertex(channel), B)


# -- weak divergence ----------------------------------------------------------

def _polar_grid(center, radius, order):
    """Gauss-Legendre in r (with Jacobian r) times a uniform angular rule."""
    t, wt = roots_legendre(order)
    r = 0.5 * radius * (t + 1)
    wr = 0.5 * radius * wt * r
    m = 2 * order
    phi = 2 * math.pi * (np.arange(m) + 0.5) / m
    R, P = np.meshgrid(r, phi, indexing="ij")
    W = np.outer(wr, np.full(m, 2 * math.pi / m))
    pts = np.stack([center[0] + R * np.cos(P), center[1] + R * np.sin(P)], axis=-1)
    return pts.reshape(-1, 2), W.ravel()


def smeared_divergence(f: TestFunction, x, y, channel: str = "vector",
                       params: ThirringParams | None = None,
                       norm: Normalization | None = None,
                       order: int = 24, eps: float | None = None) -> np.ndarray:
    """int f(z) d_mu F^mu(z) d^2z = -int (d_mu f) F^mu, shape [w, s]."""
    params = params or ThirringParams()
    norm = norm or Normalization()
    x, y = np.asarray(x, float), np.asarray(y, float)
    Z, W = _polar_grid(np.asarray(f.center, float), f.radius, order)
    dmin = min(np.min(np.hypot(*(Z - x).T)), np.min(np.hypot(*(Z - y).T)),
               math.hypot(*(x - y)))
    eps = 1e-4 * dmin if eps is None else eps
    _check_split(Z, x, y, eps)
    F = _split_field(Z, x, y, eps, channel, params, norm)
    gf = f.grad(Z)
    return -np.einsum("n,nm,nmws->ws", W, gf, F)


@dataclass
class ContactEstimate:
    channel: str
    at_x: float
    at_y: float
    quadrature_change: float
    expected: float
    params: dict

    @property
    def coefficient(self) -> float:
        return 0.5 * (self.at_x + self.at_y)

    @property
    def discrepancy(self) -> float:
        return self.coefficient - self.expected

    def to_dict(self) -> dict:
        return {"channel": self.channel, "coefficient": self.coefficient,
                "at_x": self.at_x, "at_y": self.at_y,
                "quadrature_change": self.quadrature_change,
                "expected": self.expected, "discrepancy": self.discrepancy,
                "params": self.params}


def _contact_pair(x, y, channel, params, norm, spec, order):
    sep = math.hypot(*(x - y))
    rho = spec.radius_frac * sep
    S = two_point(x - y, params, norm)
    target = GAMMA5 @ S if channel == "axial" else S
    kappa = contact_calibration(channel, norm)
    vals = []
    for c, sgn in ((x, 1.0), (y, -1.0)):
        f = TestFunction(tuple(c), rho, spec.degree)
        # a point-split probe cannot sit closer than eps to x or y
        I = smeared_divergence(f, x, y, channel, params, norm, order,
                               eps=spec.eps_rel * rho / order ** 2)
        f0 = f.norm_const
        coeff = [sgn * I[i, j] / (f0 * kappa * target[i, j]) for i, j in ((0, 1), (1, 0))]
        vals.append(float(np.mean(coeff).real))
    return vals


def extract_contact_coefficients(x, y, channel: str = "vector",
                                 params: ThirringParams | None = None,
                                 norm: Normalization | None = None,
                                 spec: QuadratureSpec | None = None) -> ContactEstimate:
    """Normalized contact coefficients of the current Ward identity at x and y.

    Raises QuadratureError if doubling the quadrature order moves either
    coefficient by more than ``spec.tol``.
    """
    params = params or ThirringParams()
    norm = norm or Normalization()
    spec = spec or QuadratureSpec()
    vertex(channel)
    x, y = np.asarray(x, float), np.asarray(y, float)
    if math.hypot(*(x - y)) < 1.0:
        raise ContractViolation("need |x - y| >= 1")
    v1 = _contact_pair(x, y, channel, params, norm, spec, spec.order)
    v2 = _contact_pair(x, y, channel, params, norm, spec, 2 * spec.order)
    change = max(abs(p - q) for p, q in zip(v1, v2))
    if change > spec.tol:
        raise QuadratureError(f"contact coefficient moved by {change:.3g} under order doubling")
    an = compute_anomalies(params)
    expected = an.a if channel == "vector" else an.a_bar
    return ContactEstimate(channel, v2[0], v2[1], change, expected,
                           {"lambda": params.lam, "xi": params.xi, "eta_plus": params.eta_plus})
