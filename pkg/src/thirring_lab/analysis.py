"""Power-law exponent extraction, resampling errors and the Kadanoff product."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractViolation, FitError

POOR_FIT_CHI2 = 5.0


class PoorFitWarning(UserWarning):
    pass


class StatisticsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FitResult:
    exponent: float          # log-log slope, i.e. -2 kappa for a decaying correlator
    amplitude: float
    stderr: float
    window: tuple
    chi2_per_dof: float
    n_points: int = 0

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ContractViolation("fit window must have r_min < r_max")
        if self.stderr < 0:
            raise ContractViolation("stderr must be non-negative")

    @property
    def kappa(self) -> float:
        return -0.5 * self.exponent

    @property
    def kappa_stderr(self) -> float:
        return 0.5 * self.stderr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["kappa"] = self.kappa
        d["kappa_stderr"] = self.kappa_stderr
        return d


@dataclass
class WindowPolicy:
    """Longest run of local slopes within ``tolerance`` noise units of their mean.

    ``r_min``/``r_max`` override the automatic choice when both are set.
    """

    r_min: float | None = None
    r_max: float | None = None
    tolerance: float = 2.0
    min_points: int = 4
    noise_floor: float = 1e-3  # relative; keeps exact data from giving zero-width bands
    r_floor: float = 0.0       # separations below this never enter an automatic window

    def overridden(self) -> bool:
        return self.r_min is not None and self.r_max is not None


# -- resampling -----------------------------------------------------------------

def jackknife(samples: np.ndarray, estimator=None):
    """Leave-one-out jackknife over the first axis.

    ``estimator`` maps an array of samples (or block means) to a value; the
    default is the mean.  Returns (estimate on the full set, stderr).
    """
    samples = np.asarray(samples, float)
    n = samples.shape[0]
    if n < 2:
        raise ContractViolation("jackknife needs at least 2 samples")
    est = estimator or (lambda s: s.mean(axis=0))
    full = np.asarray(est(samples))
    total = samples.sum(axis=0)
    if estimator is None:
        loo = (total[None] - samples) / (n - 1)
    else:
        loo = np.array([est(np.delete(samples, i, axis=0)) for i in range(n)])
    mean_loo = loo.mean(axis=0)
    err = np.sqrt((n - 1) / n * np.sum((loo - mean_loo) ** 2, axis=0))
    return full, err


def integrated_autocorr_time(x: np.ndarray, c: float = 6.0) -> float:
    """tau_int = 1/2 + sum_t rho(t) with Sokal's automatic window M >= c tau."""
    x = np.asarray(x, float)
    n = len(x)
    if n < 4:
        return 0.5
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0:
        return 0.5
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acf = np.fft.irfft(f * np.conj(f), m)[:n] / (n * var)
    tau = 0.5
    for t in range(1, n):
        tau += acf[t]
        if t >= c * tau:
            break
    return float(max(tau, 0.5))


# -- fitting --------------------------------------------------------------------

def _wls(lr, lv, w):
    W = np.sum(w)
    xm = np.sum(w * lr) / W
    ym = np.sum(w * lv) / W
    sxx = np.sum(w * (lr - xm) ** 2)
    slope = np.sum(w * (lr - xm) * (lv - ym)) / sxx
    icpt = ym - slope * xm
    return slope, icpt, sxx


def local_slopes(r, values):
    r = np.asarray(r, float)
    v = np.abs(np.asarray(values, float))
    return np.diff(np.log(v)) / np.diff(np.log(r))


def select_window(r, values, errors, policy: WindowPolicy):
    """Indices [i0, i1) of the fit window."""
    r = np.asarray(r, float)
    v = np.asarray(values, float)
    n = len(r)
    if policy.overridden():
        idx = np.flatnonzero((r >= policy.r_min) & (r <= policy.r_max))
        if len(idx) == 0:
            raise FitError("override window contains no points")
        i0, i1 = idx[0], idx[-1] + 1
        seg = v[i0:i1]
        if not (np.all(seg > 0) or np.all(seg < 0)):
            raise FitError("override window is not sign-definite")
        return i0, i1

    # sign changes terminate windows; points below r_floor are excluded
    first = int(np.searchsorted(r, policy.r_floor))
    runs, start = [], first
    for i in range(first + 1, n + 1):
        if i == n or v[i] == 0 or v[start] == 0 or np.sign(v[i]) != np.sign(v[start]):
            if v[start] != 0:
                runs.append((start, i))
            start = i
    runs = [(a, b) for a, b in runs if b - a >= policy.min_points]
    if not runs:
        raise FitError("no sign-definite window with enough points")

    e = np.asarray(errors, float) if errors is not None else np.zeros(n)
    rel = np.maximum(np.abs(e) / np.maximum(np.abs(v), 1e-300), policy.noise_floor)
    best = None
    for a, b in runs:
        ls = local_slopes(r[a:b], v[a:b])
        dlr = np.diff(np.log(r[a:b]))
        noise = np.sqrt(rel[a:b][1:] ** 2 + rel[a:b][:-1] ** 2) / dlr
        for i in range(len(ls)):
            for j in range(len(ls), i + policy.min_points - 2, -1):
                seg = ls[i:j]
                if np.all(np.abs(seg - seg.mean()) <= policy.tolerance * noise[i:j]):
                    cand = (j - i, -i, a + i, a + j + 1)
                    if best is None or cand[:2] > best[:2]:
                        best = cand
                    break
    if best is None:
        # no plateau: fall back to the longest sign-definite run
        a, b = max(runs, key=lambda ab: ab[1] - ab[0])
        return a, b
    return best[2], best[3]


def power_law_fit(r, values, errors=None, policy: WindowPolicy | None = None,
                  samples: np.ndarray | None = None) -> FitResult:
    """Weighted least squares of ln|C| on ln r inside the selected window.

    ``samples`` (jackknife block estimates of the whole series, shape
    (n_blocks, len(r))) switches the stderr to the jackknife spread of the
    slope; otherwise the weighted-fit covariance is used.
    """
    policy = policy or WindowPolicy()
    r = np.asarray(r, float)
    v = np.asarray(values, float)
    if r.shape != v.shape or r.ndim != 1:
        raise ContractViolation("r and values must be 1-d of equal length")
    if np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ContractViolation("separations must be positive and increasing")
    i0, i1 = select_window(r, v, errors, policy)
    if i1 - i0 < policy.min_points:
        raise FitError(f"window has {i1 - i0} points, need {policy.min_points}")
    rr, vv = r[i0:i1], v[i0:i1]
    lr, lv = np.log(rr), np.log(np.abs(vv))
    if errors is not None:
        ee = np.abs(np.asarray(errors, float)[i0:i1])
        sig = ee / np.abs(vv)
        sig = np.where(sig > 0, sig, np.min(sig[sig > 0]) if np.any(sig > 0) else 1.0)
        w = 1.0 / sig ** 2
    else:
        w = np.ones_like(lr)
    slope, icpt, sxx = _wls(lr, lv, w)
    resid = lv - (slope * lr + icpt)
    dof = len(lr) - 2
    chi2 = float(np.sum(w * resid ** 2) / dof) if dof > 0 else 0.0
    if errors is not None:
        stderr = math.sqrt(1.0 / sxx)
    else:
        stderr = math.sqrt(np.sum(resid ** 2) / max(dof, 1) / np.sum((lr - lr.mean()) ** 2))
    if samples is not None:
        S = np.asarray(samples, float)[:, i0:i1]
        if np.any(np.sign(S) != np.sign(vv)[None]):
            warnings.warn("jackknife samples cross zero in the window", StatisticsWarning, stacklevel=2)
        slopes = np.array([_wls(lr, np.log(np.abs(s)), w)[0] for s in S])
        nb = len(slopes)
        stderr = float(np.sqrt((nb - 1) / nb * np.sum((slopes - slopes.mean()) ** 2)))
    if errors is not None and chi2 > POOR_FIT_CHI2:
        warnings.warn(f"poor power-law fit: chi2/dof = {chi2:.3g}", PoorFitWarning, stacklevel=2)
    return FitResult(float(slope), float(math.exp(icpt)) * float(np.sign(vv[0])), float(stderr),
                     (float(rr[0]), float(rr[-1])), chi2, int(len(rr)))


def ratio_fit(r, values, reference, errors=None, policy=None, samples=None) -> FitResult:
    """Fit C / C_ref; the returned exponent is that of C with C_ref ~ r^-2 removed.

    The exponent reported is slope(C / C_ref) - 2, i.e. the reference is
    taken to carry the free-fermion decay r^-2 exactly, so finite-size and
    lattice distortions shared with the reference cancel.
    """
    ref = np.asarray(reference, float)
    v = np.asarray(values, float) / ref
    e = None if errors is None else np.asarray(errors, float) / np.abs(ref)
    s = None if samples is None else np.asarray(samples, float) / ref[None]
    f = power_law_fit(r, v, e, policy, s)
    return FitResult(f.exponent - 2.0, f.amplitude, f.stderr, f.window, f.chi2_per_dof, f.n_points)


def kadanoff_product(fit_plus: FitResult, fit_minus: FitResult) -> tuple[float, float]:
    """kappa_+ kappa_- with first-order error propagation."""
    kp, km = fit_plus.kappa, fit_minus.kappa
    val = kp * km
    err = math.hypot(km * fit_plus.kappa_stderr, kp * fit_minus.kappa_stderr)
    return float(val), float(err)
