"""Closed-form massless Thirring correlation functions.

Conventions
-----------
* A chirality is an int in {+1, -1}; matrix index 0 is ``+`` and 1 is ``-``.
* Two-point matrices are indexed ``[omega of psi, sigma of psibar]``.
* ``eta_minus`` is the anomalous dimension ``eta``; ``eta_plus`` is a free
  input (default 0), since no closed form for it is used here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, PoleError, SingularityError, SizeError

DEFAULT_LAMBDA_MAX = 0.5
DEFAULT_N_MAX = 8


class Point(NamedTuple):
    x0: float
    x1: float


def norm(x) -> float:
    return math.hypot(x[0], x[1])


def sub(x, y) -> Point:
    return Point(x[0] - y[0], x[1] - y[1])


def chirality_index(omega: int) -> int:
    if omega == 1:
        return 0
    if omega == -1:
        return 1
    raise ContractViolation(f"chirality must be +1 or -1, got {omega!r}")


@dataclass(frozen=True)
class ThirringParams:
    lam: float = 0.0
    xi: float = 0.5
    mass: float = 0.0
    eta_plus: float = 0.0
    lambda_max: float = DEFAULT_LAMBDA_MAX

    def __post_init__(self):
        if not (math.isfinite(self.lam) and math.isfinite(self.xi)):
            raise ContractViolation("lambda and xi must be finite")
        if abs(self.lam) > self.lambda_max:
            raise ContractViolation(
                f"|lambda|={abs(self.lam)} exceeds lambda_max={self.lambda_max}"
            )
        if self.mass != 0:
            raise ContractViolation("only the massless model (mass=0) is supported")
        if self.lam == 0 and self.eta_plus != 0:
            raise ContractViolation("eta_plus must vanish at lambda=0")
        nu, nu_bar = _nus(self.lam, self.xi)
        if 1.0 - nu == 0.0 or 1.0 - nu_bar == 0.0:
            raise PoleError(f"1-nu or 1-nu_bar vanishes at lambda={self.lam}, xi={self.xi}")


@dataclass(frozen=True)
class AnomalyData:
    nu: float
    nu_bar: float
    a: float
    a_bar: float
    eta: float
    eta_plus: float

    def eta_of(self, s: int) -> float:
        """``eta_s`` for s = -1 (eta) or s = +1 (eta_plus)."""
        return self.eta_plus if s > 0 else self.eta


@dataclass(frozen=True)
class Normalization:
    C: float = 1.0
    zeta_J: float = 1.0
    zeta_O: float = 1.0
    Z: float = 1.0

    def __post_init__(self):
        if not self.C > 0:
            raise ContractViolation("normalization C must be positive")


def _nus(lam: float, xi: float) -> tuple[float, float]:
    nu = lam / (2 * math.pi) * (1.0 - xi)
    nu_bar = -lam / (2 * math.pi) * xi
    return nu, nu_bar


def compute_anomalies(params: ThirringParams) -> AnomalyData:
    nu, nu_bar = _nus(params.lam, params.xi)
    if 1.0 - nu == 0.0 or 1.0 - nu_bar == 0.0:
        raise PoleError("coupling outside admissible range (1 - nu = 0)")
    a = 1.0 / (1.0 - nu)
    a_bar = 1.0 / (1.0 - nu_bar)
    eta = params.lam / (4 * math.pi) * (a - a_bar)
    return AnomalyData(nu, nu_bar, a, a_bar, eta, params.eta_plus)


def _two_point_from_eta(x, eta: float, C: float) -> np.ndarray:
    r = norm(x)
    if r == 0.0:
        raise SingularityError("two-point function evaluated at coincident points")
    amp = C * r ** (-eta)
    out = np.zeros((2, 2), dtype=complex)
    out[0, 1] = amp / complex(x[0], x[1])
    out[1, 0] = amp / complex(x[0], -x[1])
    return out


def two_point(x, params: ThirringParams, norm_: Normalization | None = None) -> np.ndarray:
    """2x2 matrix of <psi_x psibar_0> (divided by Z)."""
    norm_ = norm_ or Normalization()
    return _two_point_from_eta(x, compute_anomalies(params).eta, norm_.C)


def _pairing_factor(x, omega: int, y, sigma: int, eta: float, C: float) -> complex:
    if omega == sigma:
        return 0.0
    d = (x[0] - y[0], x[1] - y[1])
    r = math.hypot(*d)
    if r == 0.0:
        raise SingularityError("coincident psi/psibar arguments")
    if omega == 1:
        return C * r ** (-eta) / complex(d[0], d[1])
    return C * r ** (-eta) / complex(d[0], -d[1])


def _split(fields):
    pts, chis = [], []
    for p, c in fields:
        chirality_index(c)
        pts.append((float(p[0]), float(p[1])))
        chis.append(int(c))
    return pts, chis


def _check_config(xs, ys, n_max=None):
    if len(xs) != len(ys):
        raise ContractViolation(f"need |xs| == |ys|, got {len(xs)} and {len(ys)}")
    if len(xs) < 1:
        raise ContractViolation("need at least one psi/psibar pair")
    if n_max is not None and len(xs) > n_max:
        raise SizeError(f"n={len(xs)} exceeds n_max={n_max}")
    allp = [tuple(p) for p, _ in xs] + [tuple(p) for p, _ in ys]
    if len(set(allp)) != len(allp):
        raise SingularityError("points must be pairwise distinct")


def g_function(xs: Sequence, ys: Sequence, params: ThirringParams,
               norm_: Normalization | None = None) -> complex:
    """Single pairing term: xs[j] is paired with ys[j].

    Direct transcription of the product formula; used as the reference path.
    """
    norm_ = norm_ or Normalization()
    _check_config(xs, ys)
    an = compute_anomalies(params)
    xp, om = _split(xs)
    yp, sg = _split(ys)
    n = len(xp)
    val = complex(1.0)
    for j in range(n):
        val *= _pairing_factor(xp[j], om[j], yp[j], sg[j], an.eta, norm_.C)
    if val == 0:
        return 0j
    log_ratio = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            log_ratio += an.eta_of(-om[i] * om[j]) * math.log(norm(sub(xp[i], xp[j])))
            log_ratio += an.eta_of(-sg[i] * sg[j]) * math.log(norm(sub(yp[i], yp[j])))
    for i in range(n):
        for j in range(n):
            if i != j:
                log_ratio -= an.eta_of(om[i] * sg[j]) * math.log(norm(sub(xp[i], yp[j])))
    return complex(val * math.exp(log_ratio))


_PERM_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _permutations(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _PERM_CACHE:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
        signs = np.array([_perm_sign(p) for p in perms], dtype=float)
        _PERM_CACHE[n] = (perms, signs)
    return _PERM_CACHE[n]


def _perm_sign(p) -> int:
    seen = [False] * len(p)
    sign = 1
    for i in range(len(p)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = p[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def n_point(xs: Sequence, ys: Sequence, params: ThirringParams,
            norm_: Normalization | None = None, n_max: int = DEFAULT_N_MAX) -> complex:
    """Antisymmetrized sum over pairings, sum_pi sgn(pi) G(xs, pi(ys)).

    The x-x and y-y products do not depend on the pairing, and the x-y
    denominator splits into a pairing-independent total times the paired
    terms, so each permutation costs only a product of n precomputed entries.
    """
    norm_ = norm_ or Normalization()
    _check_config(xs, ys, n_max)
    an = compute_anomalies(params)
    xp, om = _split(xs)
    yp, sg = _split(ys)
    n = len(xp)
    X = np.array(xp)
    Y = np.array(yp)
    om_a = np.array(om)
    sg_a = np.array(sg)
    eta_pm = lambda s: np.where(s > 0, an.eta_plus, an.eta)  # noqa: E731

    dxy = X[:, None, :] - Y[None, :, :]
    rxy = np.hypot(dxy[..., 0], dxy[..., 1])
    if np.any(rxy == 0):
        raise SingularityError("coincident psi/psibar arguments")
    z = dxy[..., 0] + 1j * np.where(om_a[:, None] > 0, dxy[..., 1], -dxy[..., 1])
    M = np.where(om_a[:, None] != sg_a[None, :], norm_.C * rxy ** (-an.eta) / z, 0.0)
    lxy = eta_pm(om_a[:, None] * sg_a[None, :]) * np.log(rxy)

    const = -lxy.sum()
    iu = np.triu_indices(n, 1)
    if n > 1:
        rxx = np.hypot(*(X[:, None, :] - X[None, :, :]).transpose(2, 0, 1))
        ryy = np.hypot(*(Y[:, None, :] - Y[None, :, :]).transpose(2, 0, 1))
        const += np.sum(eta_pm(-om_a[:, None] * om_a[None, :])[iu] * np.log(rxx[iu]))
        const += np.sum(eta_pm(-sg_a[:, None] * sg_a[None, :])[iu] * np.log(ryy[iu]))

    A = M * np.exp(lxy)
    perms, signs = _permutations(n)
    terms = np.prod(A[np.arange(n), perms], axis=1)
    return complex(np.exp(const) * np.dot(signs, terms))


def grassmann_sign(n: int) -> int:
    """Sign relating :func:`n_point` to the Grassmann-ordered expectation.

    <psi_1 ... psi_n psibar_1 ... psibar_n> = grassmann_sign(n) * n_point(...),
    since the antisymmetrized sum is normalized so that n_point = det[S] at
    lambda = 0.
    """
    return -1 if (n * (n - 1) // 2) % 2 else 1


def wick_determinant(xs: Sequence, ys: Sequence, params: ThirringParams,
                     norm_: Normalization | None = None) -> complex:
    """Free-fermion oracle: det of the matrix of two-point entries."""
    if params.lam != 0:
        raise ContractViolation("wick_determinant is only valid at lambda=0")
    norm_ = norm_ or Normalization()
    _check_config(xs, ys)
    xp, om = _split(xs)
    yp, sg = _split(ys)
    n = len(xp)
    M = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            M[i, j] = _pairing_factor(xp[i], om[i], yp[j], sg[j], 0.0, norm_.C)
    return complex(np.linalg.det(M))


def homogeneity_degree(omegas: Sequence[int], sigmas: Sequence[int],
                       anomalies: AnomalyData) -> float:
    """Scaling degree of n_point under x -> s x for all arguments.

    Written so that it does not depend on which pairing is listed first:
    every non-vanishing pairing contributes n * eta through its paired
    x-y factors, which cancels the -n * eta of the two-point amplitudes.
    """
    if len(omegas) != len(sigmas):
        raise ContractViolation("chirality lists differ in length")
    for c in (*omegas, *sigmas):
        chirality_index(c)
    n = len(omegas)
    e = anomalies.eta_of
    deg = -float(n)
    for i in range(n):
        for j in range(i + 1, n):
            deg += e(-omegas[i] * omegas[j]) + e(-sigmas[i] * sigmas[j])
    for i in range(n):
        for j in range(n):
            deg -= e(omegas[i] * sigmas[j])
    return deg
