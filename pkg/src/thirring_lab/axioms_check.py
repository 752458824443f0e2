"""Desk-scale spot checks of Osterwalder-Schrader style properties.

Reflection pairing used for the Gram matrices
---------------------------------------------
Time reflection is ``theta(x0, x1) = (-x0, x1)``.  A field ``psi_{x,w}`` at
positive time is mapped to ``psibar_{theta x, -w}`` (contraction with
gamma^0, which flips chirality), with complex-conjugated coefficient.  For a
k-particle state ``F_J = psi_{J_1} ... psi_{J_k}`` the Gram entry is

    G_IJ = conj(c_I) c_J < psi_{J_1} ... psi_{J_k}
                           psibar_{theta I_1, -w} ... psibar_{theta I_k, -w} >

evaluated with :func:`n_point`.  Keeping the reflected fields in the original
order equals the order-reversing reflection times (-1)^(k(k-1)/2).  For k = 1 this is
``conj(c_i) c_j * S(x_j - theta x_i)[w_j, -w_i]``, i.e. minus the
two-point function at ``theta x_i - x_j``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .thirring_exact import (
    Normalization,
    Point,
    ThirringParams,
    compute_anomalies,
    homogeneity_degree,
    n_point,
    two_point,
    wick_determinant,
)

PAIRING_CONVENTION = (
    "G_IJ = conj(c_I) c_J <psi_J1..psi_Jk psibar(theta x_I1, -w_I1)..psibar(theta x_Ik, -w_Ik)>, "
    "theta(x0,x1)=(-x0,x1)"
)

TOL_FREE = -1e-10
TOL_INTERACTING = -1e-8


@dataclass
class HalfPlaneConfig:
    points: list
    coefficients: list | None = None

    def __post_init__(self):
        if not self.points:
            raise ContractViolation("configuration must be non-empty")
        for p, c in self.points:
            if not p[0] > 0:
                raise ContractViolation(f"point {p} is not at strictly positive time")
            if c not in (1, -1):
                raise ContractViolation(f"bad chirality {c}")
        if self.coefficients is None:
            self.coefficients = [1.0] * len(self.points)
        if len(self.coefficients) != len(self.points):
            raise ContractViolation("one coefficient per point required")


@dataclass
class GramMatrix:
    matrix: np.ndarray
    asymmetry: float
    sector: int
    convention: str = PAIRING_CONVENTION

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix).min())


def reflect(x) -> Point:
    return Point(-x[0], x[1])


def os_gram(config: HalfPlaneConfig, params: ThirringParams,
            norm: Normalization | None = None, sector: int = 1) -> GramMatrix:
    """Gram matrix of the reflection pairing on ``sector``-particle states.

    Sector 1 is the default two-point check; higher sectors use the full
    n-point function over all k-subsets of the configuration and get
    expensive quickly.
    """
    if sector < 1 or sector > len(config.points):
        raise ContractViolation(f"sector must be in [1, {len(config.points)}]")
    states = list(itertools.combinations(range(len(config.points)), sector))
    m = len(states)
    G = np.empty((m, m), dtype=complex)
    for a, I in enumerate(states):
        refl = [(reflect(config.points[i][0]), -config.points[i][1]) for i in I]
        cI = np.prod([config.coefficients[i] for i in I])
        for b, J in enumerate(states):
            fields = [config.points[j] for j in J]
            cJ = np.prod([config.coefficients[j] for j in J])
            G[a, b] = np.conj(cI) * cJ * n_point(fields, refl, params, norm)
    asym = float(np.max(np.abs(G - G.conj().T))) if m else 0.0
    scale = float(np.max(np.abs(G))) or 1.0
    return GramMatrix(0.5 * (G + G.conj().T), asym / scale, sector)


def os_gram_two_point(config: HalfPlaneConfig, params: ThirringParams,
                      norm: Normalization | None = None) -> GramMatrix:
    return os_gram(config, params, norm, sector=1)


def gram_tolerance(params: ThirringParams) -> float:
    return TOL_FREE if params.lam == 0 else TOL_INTERACTING


# -- batched property suite --------------------------------------------------

@dataclass
class PropertyResult:
    name: str
    worst: float
    tolerance: float
    passed: bool
    note: str = ""


@dataclass
class AxiomReport:
    params: dict
    trials: int
    seed: int
    properties: list = field(default_factory=list)
    convention: str = PAIRING_CONVENTION

    @property
    def all_passed(self) -> bool:
        return all(p.passed for p in self.properties)

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "trials": self.trials,
            "seed": self.seed,
            "all_passed": self.all_passed,
            "gram_pairing_convention": self.convention,
            "properties": {
                p.name: {"worst": p.worst, "tolerance": p.tolerance,
                         "passed": p.passed, "note": p.note}
                for p in self.properties
            },
        }


def _random_fields(rng, n, scale=3.0):
    pts = rng.uniform(-scale, scale, size=(2 * n, 2))
    om = rng.choice([1, -1], size=n)
    sg = rng.permutation(-om)
    xs = [(tuple(pts[i]), int(om[i])) for i in range(n)]
    ys = [(tuple(pts[n + i]), int(sg[i])) for i in range(n)]
    return xs, ys


def _rel(a, b):
    d = abs(b)
    return float(abs(a - b) / d if d else abs(a - b))


def _one_trial(seed_seq, params, norm, n_max, gram_points):
    rng = np.random.default_rng(seed_seq)
    n = int(rng.integers(1, n_max + 1))
    xs, ys = _random_fields(rng, n)
    out = {}
    val = n_point(xs, ys, params, norm)

    worst = 0.0
    if n >= 2:
        xs2 = list(xs)
        xs2[0], xs2[1] = xs2[1], xs2[0]
        worst = max(worst, _rel(n_point(xs2, ys, params, norm), -val))
        ys2 = list(ys)
        ys2[0], ys2[1] = ys2[1], ys2[0]
        worst = max(worst, _rel(n_point(xs, ys2, params, norm), -val))
    out["antisymmetry"] = worst

    an = compute_anomalies(params)
    deg = homogeneity_degree([c for _, c in xs], [c for _, c in ys], an)
    worst = 0.0
    for s in (0.5, 2.0, 10.0):
        sc = n_point([((s * p[0], s * p[1]), c) for p, c in xs],
                     [((s * p[0], s * p[1]), c) for p, c in ys], params, norm)
        worst = max(worst, _rel(sc, s ** deg * val))
    out["scaling_covariance"] = worst

    shift = rng.uniform(-5, 5, size=2)
    moved = n_point([((p[0] + shift[0], p[1] + shift[1]), c) for p, c in xs],
                    [((p[0] + shift[0], p[1] + shift[1]), c) for p, c in ys], params, norm)
    out["translation_invariance"] = _rel(moved, val)

    free = ThirringParams(lam=0.0, xi=params.xi, lambda_max=params.lambda_max)
    out["free_field_equivalence"] = _rel(n_point(xs, ys, free, norm),
                                         wick_determinant(xs, ys, free, norm))

    theta = rng.uniform(0, 2 * math.pi)
    x = rng.uniform(-3, 3, size=2)
    c, s_ = math.cos(theta), math.sin(theta)
    rx = Point(c * x[0] - s_ * x[1], s_ * x[0] + c * x[1])
    S, Sr = two_point(Point(*x), params, norm), two_point(rx, params, norm)
    out["rotation_covariance"] = max(_rel(Sr[0, 1], np.exp(-1j * theta) * S[0, 1]),
                                     _rel(Sr[1, 0], np.exp(1j * theta) * S[1, 0]))

    m = int(rng.integers(1, gram_points + 1))
    pts = [((float(rng.uniform(0.1, 3.0)), float(rng.uniform(-3, 3))), int(rng.choice([1, -1])))
           for _ in range(m)]
    coeffs = list(rng.normal(size=m) + 1j * rng.normal(size=m))
    gram = os_gram_two_point(HalfPlaneConfig(pts, coeffs), params, norm)
    out["reflection_positivity"] = gram.min_eigenvalue
    out["gram_asymmetry"] = gram.asymmetry
    return out


def run_axiom_suite(params: ThirringParams, norm: Normalization | None = None,
                    trials: int = 100, seed: int = 0, n_max: int = 4,
                    gram_points: int = 6, workers: int = 1) -> AxiomReport:
    """Batch the covariance/antisymmetry/positivity checks over random configs.

    Trial ``t`` draws from ``SeedSequence(seed).spawn(trials)[t]``, so the
    report does not depend on ``workers``.
    """
    if trials < 1:
        raise ContractViolation("trials must be >= 1")
    norm = norm or Normalization()
    seqs = np.random.SeedSequence(seed).spawn(trials)
    job = lambda sq: _one_trial(sq, params, norm, n_max, gram_points)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, seqs))
    else:
        results = [job(sq) for sq in seqs]

    report = AxiomReport(
        params={"lambda": params.lam, "xi": params.xi, "eta_plus": params.eta_plus,
                "lambda_max": params.lambda_max, "C": norm.C},
        trials=trials, seed=seed)
    limits = {
        "antisymmetry": 1e-12,
        "scaling_covariance": 1e-9,
        "translation_invariance": 1e-10,
        "free_field_equivalence": 1e-10,
        "rotation_covariance": 1e-10,
        "gram_asymmetry": 1e-12,
    }
    for name, tol in limits.items():
        worst = max(r[name] for r in results)
        report.properties.append(PropertyResult(name, worst, tol, bool(worst <= tol)))
    tol = gram_tolerance(params)
    worst = min(r["reflection_positivity"] for r in results)
    note = "" if worst >= tol else "negative Gram eigenvalue: suspect the pairing convention first"
    report.properties.append(PropertyResult("reflection_positivity", worst, tol, bool(worst >= tol), note))
    return report
