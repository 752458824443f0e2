"""Monte Carlo for the n.n.n.-perturbed Ising model and the double Ising model.

Hamiltonians (open or periodic square lattice, each bond counted once):

    nnn_ising:  H = -J sum_<xy> s_x s_y - K sum_<<xy>> s_x s_y
    dim:        H = -J sum_b (ss)_b - J sum_b (tt)_b + K sum_{b,b'} (ss)_b v(b-b') (tt)_{b'}

where <<xy>> are diagonal pairs, b runs over nearest-neighbour bonds and
v is evaluated at the distance between bond midpoints.  The onsite kernel
v(b-b') = delta_{bb'} gives the Ashkin-Teller four-spin product.

Updates: checkerboard Metropolis (4 colours, so diagonal neighbours never
share a colour) optionally interleaved with embedded Swendsen-Wang moves.
For fixed tau the sigma layer is an Ising model with bond couplings
J - K h^tau_b, h^tau = V (tt); this holds for any K, so the cluster move is
exact in the coupled regime as well.

Random numbers: xoshiro256** (Blackman-Vigna); chain states are seeded by
SplitMix64, see ``chain_seed_state``.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .analysis import StatisticsWarning, integrated_autocorr_time
from .errors import ContractViolation, RangeError
from .lattice_ising import BETA_C_SELF_DUAL, bulk_pair_origins

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
VARIANTS = ("nnn_ising", "dim")
OBSERVABLES = ("energy_O", "plus_Oplus", "minus_Ominus", "cross_OplusOminus")
MAX_COUPLING_RATIO = 0.2


# -- random numbers ------------------------------------------------------------

def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: (new state, output)."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def chain_seed_state(master_seed: int, chain: int) -> np.ndarray:
    """xoshiro256** state of chain ``chain``.

    SplitMix64 is started at master_seed, advanced once, and its output XOR
    (chain + 1) * GOLDEN mod 2^64 restarts it; the next four outputs are the
    state words.  Distinct chains therefore start from hashed, unrelated
    SplitMix64 positions.
    """
    if chain < 0:
        raise ContractViolation("chain index must be non-negative")
    st, z = splitmix64(int(master_seed) & MASK64)
    st = z ^ (((chain + 1) * GOLDEN) & MASK64)
    words = []
    for _ in range(4):
        st, z = splitmix64(st)
        words.append(z)
    if not any(words):
        words[0] = 1
    return np.array(words, dtype=np.uint64)


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, inline="always")
def _next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def _uniform(s):
    return float(_next_u64(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _u64_stream(s, n):
    out = np.empty(n, dtype=np.uint64)
    for k in range(n):
        out[k] = _next_u64(s)
    return out


# -- model ----------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """Bond-bond kernel v: ``onsite`` (delta) or ``exponential`` C_v e^{-c d}.

    The exponential kernel is truncated at range R where e^{-c R} < cutoff.
    """

    kind: str = "onsite"
    rate: float = 1.0
    amplitude: float = 1.0
    cutoff: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("onsite", "exponential"):
            raise ContractViolation(f"unknown kernel kind {self.kind!r}")
        if not (self.rate > 0 and self.amplitude > 0 and 0 < self.cutoff < 1):
            raise ContractViolation("kernel rate, amplitude and cutoff must be positive")

    @property
    def range(self) -> float:
        return 0.0 if self.kind == "onsite" else math.log(1.0 / self.cutoff) / self.rate

    def __call__(self, d):
        d = np.asarray(d, float)
        if self.kind == "onsite":
            return np.where(d == 0, 1.0, 0.0)
        return np.where(d <= self.range, self.amplitude * np.exp(-self.rate * d), 0.0)


@dataclass(frozen=True)
class LatticeModel:
    variant: str = "dim"
    L: int = 16
    J: float = 1.0
    K: float = 0.0
    kernel: Kernel = field(default_factory=Kernel)
    beta_T: float = BETA_C_SELF_DUAL
    boundary: str = "open"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractViolation(f"variant must be one of {VARIANTS}")
        if self.boundary not in ("open", "periodic"):
            raise ContractViolation("boundary must be open or periodic")
        if self.L < 2:
            raise ContractViolation("L must be >= 2")
        if self.boundary == "periodic" and (self.L % 2 or self.L < 4):
            raise ContractViolation("periodic lattices need even L >= 4")
        if self.J == 0 or abs(self.K) > MAX_COUPLING_RATIO * abs(self.J):
            raise ContractViolation(f"need J != 0 and |K|/|J| <= {MAX_COUPLING_RATIO}")
        if not (math.isfinite(self.beta_T) and self.beta_T >= 0):
            raise ContractViolation("beta_T must be finite and non-negative")

    @property
    def lam(self) -> float:
        return self.K / self.J

    @property
    def n_sites(self) -> int:
        return self.L * self.L

    def with_beta(self, beta_T: float) -> "LatticeModel":
        return LatticeModel(self.variant, self.L, self.J, self.K, self.kernel, beta_T, self.boundary)

    def with_size(self, L: int, boundary: str | None = None) -> "LatticeModel":
        return LatticeModel(self.variant, L, self.J, self.K, self.kernel, self.beta_T,
                            boundary or self.boundary)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lam"] = self.lam
        return d


@dataclass
class SpinState:
    sigma: np.ndarray
    tau: np.ndarray | None = None

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.int8)
        if self.tau is not None:
            self.tau = np.asarray(self.tau, dtype=np.int8)
        for a in (self.sigma, self.tau):
            if a is None:
                continue
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ContractViolation("spin arrays must be L x L")
            if not np.all(np.abs(a) == 1):
                raise ContractViolation("spins must be exactly +-1")
        if self.tau is not None and self.tau.shape != self.sigma.shape:
            raise ContractViolation("sigma and tau shapes differ")

    @classmethod
    def random(cls, model: LatticeModel, rng: np.random.Generator) -> "SpinState":
        s = rng.choice(np.array([-1, 1], np.int8), size=(model.L, model.L))
        t = rng.choice(np.array([-1, 1], np.int8), size=(model.L, model.L)) if model.variant == "dim" else None
        return cls(s, t)

    def swapped(self) -> "SpinState":
        if self.tau is None:
            raise ContractViolation("swap needs both layers")
        return SpinState(self.tau.copy(), self.sigma.copy())


@dataclass(frozen=True)
class MCRun:
    sweeps: int = 20000
    thermalization: int = 2000
    seed: int = 12345
    chains: int = 4
    measurement_stride: int = 1
    cluster_every: int = 1      # embedded Swendsen-Wang move every n sweeps; 0 disables
    miniblock: int = 10         # measurements per stored accumulator

    def __post_init__(self):
        if not self.sweeps > self.thermalization >= 0:
            raise ContractViolation("need sweeps > thermalization >= 0")
        if self.chains < 2:
            raise ContractViolation("need at least 2 chains for error bars")
        if self.measurement_stride < 1 or self.miniblock < 1 or self.cluster_every < 0:
            raise ContractViolation("stride and miniblock must be >= 1, cluster_every >= 0")
        if not 0 <= self.seed <= MASK64:
            raise ContractViolation("seed must be a 64-bit unsigned integer")

    @property
    def n_measurements(self) -> int:
        return (self.sweeps - self.thermalization) // self.measurement_stride


# -- geometry -------------------------------------------------------------------

@dataclass
class Geometry:
    L: int
    periodic: bool
    bond_u: np.ndarray       # (nb,)
    bond_v: np.ndarray
    bond_mid: np.ndarray     # (nb, 2)
    site_bond: np.ndarray    # (N, 4), -1 padded
    nbr: np.ndarray          # (N, 4) neighbour across site_bond[x, q], -1 padded
    diag_u: np.ndarray       # diagonal pairs, each once
    diag_v: np.ndarray
    site_diag: np.ndarray    # (N, 4) diagonal neighbour sites, -1 padded
    colours: np.ndarray      # (4, N/4-ish) site lists, -1 padded
    v_ptr: np.ndarray        # CSR of the bond kernel
    v_idx: np.ndarray
    v_val: np.ndarray


def site_index(i, j, L):
    return i * L + j


def build_geometry(model: LatticeModel) -> Geometry:
    L, per = model.L, model.boundary == "periodic"
    N = L * L
    bu, bv, mid = [], [], []
    for i in range(L):
        for j in range(L):
            for di, dj in ((1, 0), (0, 1)):
                ii, jj = i + di, j + dj
                if ii >= L or jj >= L:
                    if not per:
                        continue
                    ii, jj = ii % L, jj % L
                bu.append(site_index(i, j, L))
                bv.append(site_index(ii, jj, L))
                mid.append((i + 0.5 * di, j + 0.5 * dj))
    bu, bv, mid = np.array(bu, np.int64), np.array(bv, np.int64), np.array(mid)
    site_bond = -np.ones((N, 4), np.int64)
    fill = np.zeros(N, np.int64)
    for b, (u, v) in enumerate(zip(bu, bv)):
        for s_ in (u, v):
            site_bond[s_, fill[s_]] = b
            fill[s_] += 1
    du, dv = [], []
    for i in range(L):
        for j in range(L):
            for di, dj in ((1, 1), (1, -1)):
                ii, jj = i + di, j + dj
                if not (0 <= ii < L and 0 <= jj < L):
                    if not per:
                        continue
                    ii, jj = ii % L, jj % L
                du.append(site_index(i, j, L))
                dv.append(site_index(ii, jj, L))
    du, dv = np.array(du, np.int64), np.array(dv, np.int64)
    site_diag = -np.ones((N, 4), np.int64)
    fill[:] = 0
    for u, v in zip(du, dv):
        for a, b in ((u, v), (v, u)):
            site_diag[a, fill[a]] = b
            fill[a] += 1
    groups = [[site_index(i, j, L) for i in range(L) for j in range(L) if (i % 2, j % 2) == c]
              for c in ((0, 0), (1, 1), (0, 1), (1, 0))]
    width = max(len(g) for g in groups)
    colours = -np.ones((4, width), np.int64)
    for c, g in enumerate(groups):
        colours[c, :len(g)] = g
    v_ptr, v_idx, v_val = _kernel_csr(model.kernel, mid, L, per)
    nbr = np.where(site_bond >= 0, np.where(bu[site_bond] == np.arange(N)[:, None], bv[site_bond],
                                            bu[site_bond]), -1)
    return Geometry(L, per, bu, bv, mid, site_bond, nbr, du, dv, site_diag, colours, v_ptr, v_idx, v_val)


def _kernel_csr(kernel: Kernel, mid, L, periodic):
    nb = len(mid)
    if kernel.kind == "onsite":
        return np.arange(nb + 1, dtype=np.int64), np.arange(nb, dtype=np.int64), np.ones(nb)
    ptr, idx, val = [0], [], []
    for b in range(nb):
        d = mid - mid[b]
        if periodic:
            d = (d + L / 2) % L - L / 2
        r = np.hypot(d[:, 0], d[:, 1])
        sel = np.flatnonzero(r <= kernel.range)
        w = kernel(r[sel])
        # truncation check: the stored kernel respects the stated envelope
        if np.any(np.abs(w) > kernel.amplitude * np.exp(-kernel.rate * r[sel]) * (1 + 1e-12)):
            raise ContractViolation("kernel exceeds its exponential envelope")
        idx.extend(sel.tolist())
        val.extend(w.tolist())
        ptr.append(len(idx))
    return np.array(ptr, np.int64), np.array(idx, np.int64), np.array(val)


# -- energy ---------------------------------------------------------------------

def _flat(state: SpinState, model: LatticeModel):
    if state.sigma.shape != (model.L, model.L):
        raise ContractViolation(f"state is {state.sigma.shape}, model wants {(model.L, model.L)}")
    if (state.tau is None) != (model.variant == "nnn_ising"):
        raise ContractViolation("tau layer must be present exactly for the dim variant")
    s = state.sigma.reshape(-1).astype(np.int64)
    t = state.tau.reshape(-1).astype(np.int64) if state.tau is not None else None
    return s, t


def hamiltonian(state: SpinState, model: LatticeModel, geom: Geometry | None = None) -> float:
    g = geom or build_geometry(model)
    s, t = _flat(state, model)
    ss = s[g.bond_u] * s[g.bond_v]
    if model.variant == "nnn_ising":
        dd = s[g.diag_u] * s[g.diag_v]
        return float(-model.J * ss.sum() - model.K * dd.sum())
    tt = t[g.bond_u] * t[g.bond_v]
    h = np.array([np.dot(g.v_val[g.v_ptr[b]:g.v_ptr[b + 1]], tt[g.v_idx[g.v_ptr[b]:g.v_ptr[b + 1]]])
                  for b in range(len(tt))])
    return float(-model.J * ss.sum() - model.J * tt.sum() + model.K * np.dot(ss, h))


@njit(cache=True, inline="always")
def _h_bond(b, spins, bu, bv, v_ptr, v_idx, v_val):
    acc = 0.0
    for k in range(v_ptr[b], v_ptr[b + 1]):
        c = v_idx[k]
        acc += v_val[k] * spins[bu[c]] * spins[bv[c]]
    return acc


@njit(cache=True, inline="always")
def _de_nnn(x, spins, J, K, nbr, site_diag):
    """Energy change of flipping spins[x], nnn_ising."""
    nn = 0
    for q in range(4):
        y = nbr[x, q]
        if y >= 0:
            nn += spins[y]
    dg = 0
    for q in range(4):
        y = site_diag[x, q]
        if y >= 0:
            dg += spins[y]
    return 2.0 * spins[x] * (J * nn + K * dg)


@njit(cache=True, inline="always")
def _de_dim(x, spins, other, J, K, nbr, site_bond, bu, bv, v_ptr, v_idx, v_val):
    """Energy change of flipping spins[x] with the other layer held fixed."""
    de = 0.0
    for q in range(4):
        b = site_bond[x, q]
        if b >= 0:
            h = 0.0
            for r in range(v_ptr[b], v_ptr[b + 1]):
                c = v_idx[r]
                h += v_val[r] * other[bu[c]] * other[bv[c]]
            de += 2.0 * (J - K * h) * spins[x] * spins[nbr[x, q]]
    return de


@njit(cache=True)
def _delta_e(x, spins, other, variant, J, K, nbr, bu, bv, site_bond, site_diag, v_ptr, v_idx, v_val):
    if variant == 0:
        return _de_nnn(x, spins, J, K, nbr, site_diag)
    return _de_dim(x, spins, other, J, K, nbr, site_bond, bu, bv, v_ptr, v_idx, v_val)


def local_energy_change(state: SpinState, model: LatticeModel, site, layer: str = "sigma",
                        geom: Geometry | None = None) -> float:
    """Metropolis energy difference for a single flip (same code path as the sampler)."""
    g = geom or build_geometry(model)
    s, t = _flat(state, model)
    x = site_index(site[0], site[1], model.L)
    if layer == "tau":
        s, t = t, s
    other = t if t is not None else s
    return float(_delta_e(x, s, other, VARIANTS.index(model.variant), model.J, model.K, g.nbr,
                          g.bond_u, g.bond_v, g.site_bond, g.site_diag, g.v_ptr, g.v_idx, g.v_val))


# -- updates ---------------------------------------------------------------------

@njit(cache=True)
def _metro_nnn(spins, J, K, beta, rng, nbr, site_diag, colours):
    acc = 0
    tried = 0
    for c in range(4):
        for k in range(colours.shape[1]):
            x = colours[c, k]
            if x < 0:
                break
            de = _de_nnn(x, spins, J, K, nbr, site_diag)
            u = _uniform(rng)
            tried += 1
            if de <= 0.0 or u < math.exp(-beta * de):
                spins[x] = -spins[x]
                acc += 1
    return acc, tried


@njit(cache=True)
def _metro_dim(spins, other, J, K, beta, rng, nbr, site_bond, bu, bv, v_ptr, v_idx, v_val, colours):
    acc = 0
    tried = 0
    for c in range(4):
        for k in range(colours.shape[1]):
            x = colours[c, k]
            if x < 0:
                break
            de = _de_dim(x, spins, other, J, K, nbr, site_bond, bu, bv, v_ptr, v_idx, v_val)
            u = _uniform(rng)
            tried += 1
            if de <= 0.0 or u < math.exp(-beta * de):
                spins[x] = -spins[x]
                acc += 1
    return acc, tried


@njit(cache=True, inline="always")
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _sw_layer(spins, eu, ev, coup, beta, rng, parent, flip):
    n = spins.shape[0]
    for x in range(n):
        parent[x] = x
    for e in range(eu.shape[0]):
        u = eu[e]
        v = ev[e]
        jc = coup[e]
        r = _uniform(rng)
        if jc * spins[u] * spins[v] > 0.0 and r < 1.0 - math.exp(-2.0 * beta * abs(jc)):
            a = _find(parent, u)
            b = _find(parent, v)
            if a != b:
                if a < b:
                    parent[b] = a
                else:
                    parent[a] = b
    for x in range(n):
        flip[x] = 0
    for x in range(n):
        if parent[x] == x:
            flip[x] = 1 if _uniform(rng) < 0.5 else -1
    for x in range(n):
        if flip[_find(parent, x)] == 1:
            spins[x] = -spins[x]


@njit(cache=True)
def _sweep(sig, tau, variant, J, K, beta, rng, do_cluster, nbr, bu, bv, site_bond, site_diag,
           colours, v_ptr, v_idx, v_val, eu, ev, ecoup, parent, flip, coup):
    """Metropolis on every layer, then (optionally) one embedded SW move per layer.

    ``eu, ev, ecoup`` is the n.n. + diagonal edge list of the nnn_ising layer.
    """
    if variant == 0:
        a, t = _metro_nnn(sig, J, K, beta, rng, nbr, site_diag, colours)
        if do_cluster:
            _sw_layer(sig, eu, ev, ecoup, beta, rng, parent, flip)
        return a, t
    a1, t1 = _metro_dim(sig, tau, J, K, beta, rng, nbr, site_bond, bu, bv, v_ptr, v_idx, v_val,
                        colours)
    a2, t2 = _metro_dim(tau, sig, J, K, beta, rng, nbr, site_bond, bu, bv, v_ptr, v_idx, v_val,
                        colours)
    if do_cluster:
        nb = bu.shape[0]
        for b in range(nb):
            coup[b] = J - K * _h_bond(b, tau, bu, bv, v_ptr, v_idx, v_val)
        _sw_layer(sig, bu, bv, coup, beta, rng, parent, flip)
        for b in range(nb):
            coup[b] = J - K * _h_bond(b, sig, bu, bv, v_ptr, v_idx, v_val)
        _sw_layer(tau, bu, bv, coup, beta, rng, parent, flip)
    return a1 + a2, t1 + t2


class Sampler:
    """Single chain: state, geometry, RNG and work arrays."""

    def __init__(self, model: LatticeModel, rng_state: np.ndarray, state: SpinState | None = None,
                 geom: Geometry | None = None):
        self.model = model
        self.g = geom or build_geometry(model)
        self.rng = np.array(rng_state, dtype=np.uint64)
        N = model.n_sites
        if state is None:
            s = np.where(_u64_stream(self.rng, N) >> np.uint64(63), 1, -1).astype(np.int8)
            t = (np.where(_u64_stream(self.rng, N) >> np.uint64(63), 1, -1).astype(np.int8)
                 if model.variant == "dim" else s)
        else:
            s, t = (a.astype(np.int8) for a in _flat(state, model)) if state.tau is not None else \
                (state.sigma.reshape(-1).astype(np.int8),) * 2
            s = s.copy()
            t = t.copy() if model.variant == "dim" else s
        self.sig, self.tau = s, t
        self.variant = VARIANTS.index(model.variant)
        self._parent = np.empty(N, np.int64)
        self._flip = np.empty(N, np.int8)
        self._coup = np.empty(len(self.g.bond_u))
        g = self.g
        self._eu = np.concatenate([g.bond_u, g.diag_u])
        self._ev = np.concatenate([g.bond_v, g.diag_v])
        self._ecoup = np.concatenate([np.full(len(g.bond_u), model.J), np.full(len(g.diag_u), model.K)])

    def args(self):
        g = self.g
        return (g.nbr, g.bond_u, g.bond_v, g.site_bond, g.site_diag, g.colours, g.v_ptr, g.v_idx, g.v_val,
                self._eu, self._ev, self._ecoup, self._parent, self._flip, self._coup)

    def sweep(self, beta: float, cluster: bool = False) -> float:
        m = self.model
        a, t = _sweep(self.sig, self.tau, self.variant, m.J, m.K, beta, self.rng, cluster, *self.args())
        return a / t

    def state(self) -> SpinState:
        L = self.model.L
        return SpinState(self.sig.reshape(L, L).copy(),
                         self.tau.reshape(L, L).copy() if self.variant == 1 else None)


def metropolis_sweep(state: SpinState, model: LatticeModel, beta_T: float, rng_state: np.ndarray):
    """One checkerboard Metropolis sweep; returns (new state, acceptance rate).

    ``rng_state`` (xoshiro256** words) is advanced in place.
    """
    smp = Sampler(model, rng_state, state)
    rate = smp.sweep(beta_T, cluster=False)
    rng_state[:] = smp.rng
    return smp.state(), rate


# -- state-distribution oracle -----------------------------------------------------

@njit(cache=True)
def _histogram_run(sig, tau, variant, J, K, beta, rng, n_sweeps, cluster_every, nbr, bu, bv, site_bond,
                   site_diag, colours, v_ptr, v_idx, v_val, eu, ev, ecoup, parent, flip, coup):
    n = sig.shape[0]
    nbits = n if variant == 0 else 2 * n
    hist = np.zeros(1 << nbits, np.int64)
    for it in range(n_sweeps):
        do_c = cluster_every > 0 and (it % cluster_every) == 0
        _sweep(sig, tau, variant, J, K, beta, rng, do_c, nbr, bu, bv, site_bond, site_diag, colours,
               v_ptr, v_idx, v_val, eu, ev, ecoup, parent, flip, coup)
        code = 0
        for x in range(n):
            if sig[x] > 0:
                code |= 1 << x
        if variant == 1:
            for x in range(n):
                if tau[x] > 0:
                    code |= 1 << (n + x)
        hist[code] += 1
    return hist


def state_histogram(model: LatticeModel, n_sweeps: int, seed: int = 1, cluster_every: int = 0,
                    thermalization: int = 1000) -> np.ndarray:
    """Empirical distribution over all 2^(layers*N) states, bit x = spin x is up."""
    bits = model.n_sites * (2 if model.variant == "dim" else 1)
    if bits > 20:
        raise ContractViolation("state histogram limited to 20 spins")
    smp = Sampler(model, chain_seed_state(seed, 0))
    for _ in range(thermalization):
        smp.sweep(model.beta_T)
    h = _histogram_run(smp.sig, smp.tau, smp.variant, model.J, model.K, model.beta_T, smp.rng,
                       n_sweeps, cluster_every, *smp.args())
    return h / h.sum()


def boltzmann_distribution(model: LatticeModel) -> np.ndarray:
    """Exact Boltzmann weights over the same state encoding as ``state_histogram``."""
    g = build_geometry(model)
    n = model.n_sites
    bits = n * (2 if model.variant == "dim" else 1)
    codes = np.arange(1 << bits)
    spins = ((codes[:, None] >> np.arange(bits)) & 1) * 2 - 1
    s = spins[:, :n]
    ss = s[:, g.bond_u] * s[:, g.bond_v]
    if model.variant == "nnn_ising":
        E = -model.J * ss.sum(1) - model.K * (s[:, g.diag_u] * s[:, g.diag_v]).sum(1)
    else:
        t = spins[:, n:]
        tt = t[:, g.bond_u] * t[:, g.bond_v]
        V = np.zeros((len(g.bond_u),) * 2)
        for b in range(len(g.bond_u)):
            V[b, g.v_idx[g.v_ptr[b]:g.v_ptr[b + 1]]] = g.v_val[g.v_ptr[b]:g.v_ptr[b + 1]]
        E = -model.J * ss.sum(1) - model.J * tt.sum(1) + model.K * np.einsum("nb,bc,nc->n", ss, V, tt)
    w = np.exp(-model.beta_T * (E - E.min()))
    return w / w.sum()


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# -- correlator measurement --------------------------------------------------------

@dataclass
class PairSet:
    L: int
    xs: np.ndarray
    origins: list            # per direction, flat site indices
    steps: tuple             # flat index step per direction
    bulk: np.ndarray         # flat indices of all sites touched


def make_pair_set(L: int, xs=None) -> PairSet:
    xs = np.arange(1, L // 4 + 1) if xs is None else np.asarray(xs, int)
    if np.any(np.diff(xs) <= 0) or xs[0] < 1 or xs[-1] > L // 4:
        raise ContractViolation(f"separations must be increasing within [1, L/4 = {L // 4}]")
    origins, touched = [], set()
    for d in ((1, 0), (0, 1)):
        o = bulk_pair_origins(L, int(xs[-1]), d)
        flat = np.array([site_index(i, j, L) for i, j in o], np.int64)
        origins.append(flat)
        for i, j in o:
            touched.add(site_index(i, j, L))
            for x in xs:
                touched.add(site_index(i + x * d[0], j + x * d[1], L))
    return PairSet(L, xs, origins, (L, 1), np.array(sorted(touched), np.int64))


@njit(cache=True)
def _site_energy(spins, site_bond, bu, bv, out):
    for x in range(spins.shape[0]):
        acc = 0
        for k in range(4):
            b = site_bond[x, k]
            if b >= 0:
                acc += spins[bu[b]] * spins[bv[b]]
        out[x] = acc


@njit(cache=True)
def _energy(sig, tau, variant, J, K, bu, bv, du, dv, v_ptr, v_idx, v_val):
    e = 0.0
    for b in range(bu.shape[0]):
        ss = sig[bu[b]] * sig[bv[b]]
        if variant == 0:
            e -= J * ss
        else:
            e += -J * ss - J * tau[bu[b]] * tau[bv[b]] + K * ss * _h_bond(b, tau, bu, bv, v_ptr,
                                                                          v_idx, v_val)
    if variant == 0:
        for q in range(du.shape[0]):
            e -= K * sig[du[q]] * sig[dv[q]]
    return e


@njit(cache=True, nogil=True)
def _measure_chain(sig, tau, variant, J, K, beta, rng, n_therm, n_meas, stride, cluster_every,
                   miniblock, xs, orig0, orig1, step0, step1, bulk, du, dv, nbr, bu, bv, site_bond,
                   site_diag, colours, v_ptr, v_idx, v_val, eu, ev, ecoup, parent, flip, coup):
    """Thermalize, then accumulate site and pair sums of the local energies.

    pair_acc[mb, c, d, ix] sums A_o B_{o + x e_d} over origins for the
    combinations c = (ss, tt, st, ts), A, B in {O^sigma, O^tau}.
    """
    n = sig.shape[0]
    ncomb = 1 if variant == 0 else 4
    nlay = 1 if variant == 0 else 2
    nmb = n_meas // miniblock
    site_acc = np.zeros((nmb, nlay, bulk.shape[0]))
    pair_acc = np.zeros((nmb, ncomb, 2, xs.shape[0]))
    energy = np.zeros(nmb * miniblock)
    acc = 0
    tried = 0
    sweep = 0
    for it in range(n_therm):
        do_c = cluster_every > 0 and (sweep % cluster_every) == 0
        _sweep(sig, tau, variant, J, K, beta, rng, do_c, nbr, bu, bv, site_bond, site_diag, colours,
               v_ptr, v_idx, v_val, eu, ev, ecoup, parent, flip, coup)
        sweep += 1
    Os = np.zeros(n)
    Ot = np.zeros(n)
    for m in range(nmb * miniblock):
        for r in range(stride):
            do_c = cluster_every > 0 and (sweep % cluster_every) == 0
            a, t = _sweep(sig, tau, variant, J, K, beta, rng, do_c, nbr, bu, bv, site_bond, site_diag,
                          colours, v_ptr, v_idx, v_val, eu, ev, ecoup, parent, flip, coup)
            acc += a
            tried += t
            sweep += 1
        mb = m // miniblock
        _site_energy(sig, site_bond, bu, bv, Os)
        if variant == 1:
            _site_energy(tau, site_bond, bu, bv, Ot)
        for k in range(bulk.shape[0]):
            site_acc[mb, 0, k] += Os[bulk[k]]
            if variant == 1:
                site_acc[mb, 1, k] += Ot[bulk[k]]
        for d in range(2):
            orig = orig0 if d == 0 else orig1
            step = step0 if d == 0 else step1
            for ix in range(xs.shape[0]):
                off = xs[ix] * step
                s_ss = 0.0
                s_tt = 0.0
                s_st = 0.0
                s_ts = 0.0
                for k in range(orig.shape[0]):
                    o = orig[k]
                    p = o + off
                    s_ss += Os[o] * Os[p]
                    if variant == 1:
                        s_tt += Ot[o] * Ot[p]
                        s_st += Os[o] * Ot[p]
                        s_ts += Ot[o] * Os[p]
                pair_acc[mb, 0, d, ix] += s_ss
                if variant == 1:
                    pair_acc[mb, 1, d, ix] += s_tt
                    pair_acc[mb, 2, d, ix] += s_st
                    pair_acc[mb, 3, d, ix] += s_ts
        energy[m] = _energy(sig, tau, variant, J, K, bu, bv, du, dv, v_ptr, v_idx, v_val)
    return site_acc, pair_acc, energy, acc / max(tried, 1)


@njit(cache=True, nogil=True)
def _series_chain(sig, tau, variant, J, K, beta, rng, n_therm, n_meas, stride, cluster_every,
                  du, dv, nbr, bu, bv, site_bond, site_diag, colours, v_ptr, v_idx, v_val, eu, ev, ecoup,
                  parent, flip, coup):
    """Energy and magnetization moments per measurement (layers averaged)."""
    n = sig.shape[0]
    E = np.zeros(n_meas)
    m2 = np.zeros(n_meas)
    m4 = np.zeros(n_meas)
    sweep = 0
    for it in range(n_therm + n_meas * stride):
        do_c = cluster_every > 0 and (sweep % cluster_every) == 0
        _sweep(sig, tau, variant, J, K, beta, rng, do_c, nbr, bu, bv, site_bond, site_diag, colours,
               v_ptr, v_idx, v_val, eu, ev, ecoup, parent, flip, coup)
        sweep += 1
        if it >= n_therm and (it - n_therm) % stride == stride - 1:
            m = (it - n_therm) // stride
            ms = 0.0
            mt = 0.0
            for x in range(n):
                ms += sig[x]
                mt += tau[x]
            ms /= n
            mt /= n
            if variant == 0:
                m2[m] = ms * ms
                m4[m] = ms ** 4
            else:
                m2[m] = 0.5 * (ms * ms + mt * mt)
                m4[m] = 0.5 * (ms ** 4 + mt ** 4)
            E[m] = _energy(sig, tau, variant, J, K, bu, bv, du, dv, v_ptr, v_idx, v_val)
    return E, m2, m4


# -- correlator driver ---------------------------------------------------------------

@dataclass
class ObservableSeries:
    observable: str
    separations: np.ndarray
    values: np.ndarray           # pooled connected correlator
    errors: np.ndarray           # jackknife standard errors
    per_chain: np.ndarray        # (chains, n_x) per-chain estimates
    jackknife: np.ndarray        # (n_blocks, n_x) leave-one-block-out estimates

    def __post_init__(self):
        if np.any(np.diff(self.separations) <= 0):
            raise ContractViolation("separations must be strictly increasing")

    @property
    def chain_count(self) -> int:
        return int(self.per_chain.shape[0])

    def rows(self):
        for x, m, e in zip(self.separations, self.values, self.errors):
            yield self.observable, int(x), float(m), float(e), self.chain_count


@dataclass
class CorrelatorRun:
    model: LatticeModel
    run: MCRun
    series: dict
    acceptance: list
    tau_int: list                # per chain, in measurements
    block_length: int            # measurements per jackknife block
    n_blocks: int
    chain_seeds: list
    wall_time: float = 0.0

    def manifest(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "run": asdict(self.run),
            "chain_seeds": [[int(w) for w in s] for s in self.chain_seeds],
            "acceptance_rates": [float(a) for a in self.acceptance],
            "tau_int_energy": [float(t) for t in self.tau_int],
            "block_length": int(self.block_length),
            "n_blocks": int(self.n_blocks),
        }


_COMBOS = {
    # coefficients of (ss, tt, st, ts) with A at the origin and B at the partner
    "energy_O": (1, 0, 0, 0),
    "plus_Oplus": (1, 1, 1, 1),
    "minus_Ominus": (1, 1, -1, -1),
    "cross_OplusOminus": (1, -1, 1, -1),   # O^-_o O^+_p
}


def _run_one_chain(model, run, pairs, geom, chain):
    smp = Sampler(model, chain_seed_state(run.seed, chain), geom=geom)
    seed_words = smp.rng.copy()
    out = _measure_chain(smp.sig, smp.tau, smp.variant, model.J, model.K, model.beta_T, smp.rng,
                         run.thermalization, run.n_measurements, run.measurement_stride,
                         run.cluster_every, run.miniblock, pairs.xs.astype(np.int64),
                         pairs.origins[0], pairs.origins[1], pairs.steps[0], pairs.steps[1],
                         pairs.bulk, geom.diag_u, geom.diag_v, *smp.args())
    return out, seed_words


def _connected(S, P, M, pairs, _unused, combo, nlay):
    """Connected correlator from site sums S (nlay, nbulk) and pair sums P (ncomb, 2, nx)."""
    N = pairs.L * pairs.L
    mean = np.zeros((nlay, N))
    mean[:, pairs.bulk] = S / M
    lay = (0, 1, 0, 1), (0, 1, 1, 0)   # (origin layer, partner layer) per combo
    val = np.zeros(len(pairs.xs))
    for c, w in enumerate(combo):
        if w == 0:
            continue
        la, lb = lay[0][c], lay[1][c]
        for d in range(2):
            o = pairs.origins[d]
            npair = len(o)
            for ix, x in enumerate(pairs.xs):
                prod = np.dot(mean[la, o], mean[lb, o + x * pairs.steps[d]])
                val[ix] += 0.5 * w * (P[c, d, ix] / M - prod) / npair
    return val


def measure_correlators(model: LatticeModel, run: MCRun, observables=None, xs=None,
                        threads: int | None = None) -> CorrelatorRun:
    """Connected bulk correlators of the local energies at model.beta_T.

    Each chain is an independent stream; jackknife blocks pool all chains
    and are at least 10 integrated autocorrelation times of the energy long.
    """
    if model.boundary != "open":
        raise ContractViolation("correlators are measured on open lattices (bulk insertions)")
    if model.L < 8:
        raise ContractViolation("need L >= 8 for bulk insertions")
    default = ("energy_O",) if model.variant == "nnn_ising" else ("plus_Oplus", "minus_Ominus")
    observables = tuple(observables or default)
    for ob in observables:
        if ob not in _COMBOS:
            raise ContractViolation(f"unknown observable {ob!r}")
        if model.variant == "nnn_ising" and ob != "energy_O":
            raise ContractViolation("nnn_ising has only the energy_O observable")
    pairs = make_pair_set(model.L, xs)
    geom = build_geometry(model)
    if run.n_measurements < run.miniblock * 2:
        raise ContractViolation("too few measurements for two mini-blocks")
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads or 1) as pool:
        results = list(pool.map(lambda c: _run_one_chain(model, run, pairs, geom, c),
                                range(run.chains)))
    wall = time.perf_counter() - t0
    nlay = 1 if model.variant == "nnn_ising" else 2
    taus = [integrated_autocorr_time(r[0][2]) for r in results]
    mb = run.miniblock
    bl = max(1, int(math.ceil(10 * max(taus) / mb)))
    blocks_S, blocks_P, chain_ids = [], [], []
    for c, ((S, P, _, _), _) in enumerate(results):
        nb = S.shape[0] // bl
        if nb == 0:
            continue
        blocks_S.append(S[:nb * bl].reshape(nb, bl, *S.shape[1:]).sum(1))
        blocks_P.append(P[:nb * bl].reshape(nb, bl, *P.shape[1:]).sum(1))
        chain_ids += [c] * nb
    if not blocks_S:
        raise ContractViolation("run too short for a single autocorrelation-sized block")
    BS, BP = np.concatenate(blocks_S), np.concatenate(blocks_P)
    chain_ids = np.array(chain_ids)
    nblk = len(BS)
    if nblk < 10:
        warnings.warn(f"only {nblk} jackknife blocks (tau_int = {max(taus):.3g})", StatisticsWarning,
                      stacklevel=2)
    Mb = bl * mb
    tot_S, tot_P = BS.sum(0), BP.sum(0)
    series = {}
    for ob in observables:
        combo = _COMBOS[ob]
        full = _connected(tot_S, tot_P, nblk * Mb, pairs, None, combo, nlay)
        loo = np.array([_connected(tot_S - BS[b], tot_P - BP[b], (nblk - 1) * Mb, pairs, None,
                                   combo, nlay) for b in range(nblk)]) if nblk > 1 else full[None]
        err = np.sqrt((nblk - 1) / nblk * ((loo - loo.mean(0)) ** 2).sum(0))
        per_chain = np.array([
            _connected(BS[chain_ids == c].sum(0), BP[chain_ids == c].sum(0),
                       int((chain_ids == c).sum()) * Mb, pairs, None, combo, nlay)
            for c in range(run.chains) if np.any(chain_ids == c)])
        if abs(err[-1]) > 0.5 * abs(full[-1]):
            warnings.warn(f"{ob}: relative error {abs(err[-1] / full[-1]):.2f} at x = {pairs.xs[-1]}",
                          StatisticsWarning, stacklevel=2)
        series[ob] = ObservableSeries(ob, pairs.xs.copy(), full, err, per_chain, loo)
    return CorrelatorRun(model, run, series, [r[0][3] for r in results], taus, Mb, nblk,
                         [r[1] for r in results], wall)


# -- critical temperature --------------------------------------------------------------

@dataclass
class TcEstimate:
    beta_c: float
    stderr: float
    crossings: dict              # "L1-L2" -> crossing beta
    sizes: tuple
    window: tuple
    beta_run: float              # simulation point of the reweighted runs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crossings"] = {k: float(v) for k, v in self.crossings.items()}
        return d


def _binder_series(model, run, chain, sweeps=None):
    geom = build_geometry(model)
    smp = Sampler(model, chain_seed_state(run.seed, chain), geom=geom)
    n_meas = (sweeps or run.sweeps) - run.thermalization
    return _series_chain(smp.sig, smp.tau, smp.variant, model.J, model.K, model.beta_T, smp.rng,
                         run.thermalization, n_meas, 1, max(run.cluster_every, 1),
                         geom.diag_u, geom.diag_v, *smp.args())


def binder_cumulant(m2, m4, E=None, dbeta: float = 0.0) -> float:
    """U = 1 - <m^4> / (3 <m^2>^2), optionally reweighted by exp(-dbeta E)."""
    if E is None or dbeta == 0.0:
        return float(1.0 - np.mean(m4) / (3 * np.mean(m2) ** 2))
    a = -dbeta * (E - E.mean())
    w = np.exp(a - a.max())
    return float(1.0 - np.dot(w, m4) * w.sum() / (3 * np.dot(w, m2) ** 2))


def _crossing(d1, d2, beta0, half_width):
    from scipy.optimize import brentq

    f = lambda b: binder_cumulant(d2[1], d2[2], d2[0], b - beta0) - binder_cumulant(  # noqa: E731
        d1[1], d1[2], d1[0], b - beta0)
    lo, hi = beta0 - half_width, beta0 + half_width
    if f(lo) * f(hi) > 0:
        return None
    return brentq(f, lo, hi, xtol=1e-10)


def locate_tc(model: LatticeModel, run: MCRun, sizes=(16, 32, 64), bracket=(0.38, 0.50),
              n_coarse: int = 7, coarse_sweeps: int | None = None, n_boot: int = 100,
              threads: int | None = None) -> TcEstimate:
    """Binder-cumulant crossing of the two largest sizes (periodic lattices).

    A coarse scan of the two smallest sizes over ``bracket`` locates a
    simulation point; every size is then simulated there and reweighted.
    The stderr is a block bootstrap over all runs.
    """
    sizes = tuple(sorted(int(L) for L in sizes))
    if len(sizes) < 2 or sizes[0] < 4:
        raise ContractViolation("need at least two sizes >= 4")
    lo, hi = bracket
    if not 0 < lo < hi:
        raise ContractViolation("bracket must satisfy 0 < lo < hi")
    fam = lambda L, b: LatticeModel(model.variant, L, model.J, model.K, model.kernel, b,  # noqa: E731
                                    "periodic")
    cs = coarse_sweeps or max(run.thermalization + 200, run.sweeps // 4)
    grid = np.linspace(lo, hi, n_coarse)
    pool = ThreadPoolExecutor(max_workers=threads or 1)
    try:
        def u_at(L, b):
            out = [_binder_series(fam(L, b), run, c, cs) for c in range(run.chains)]
            return binder_cumulant(np.concatenate([o[1] for o in out]),
                                   np.concatenate([o[2] for o in out]))
        diff = np.array([u_at(sizes[1], b) - u_at(sizes[0], b) for b in grid])
        idx = np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0)
        if len(idx) == 0:
            raise RangeError(f"no Binder crossing of L={sizes[0]},{sizes[1]} in beta window {tuple(bracket)}")
        k = idx[0]
        beta0 = float(grid[k] - diff[k] * (grid[k + 1] - grid[k]) / (diff[k + 1] - diff[k]))
        # refine by reweighting; its usable range is a few 1/sigma_E, so the
        # simulation point is moved (at most twice) if the crossing lands near
        # the edge of that range
        for attempt in range(3):
            data = {}
            for L in sizes:
                mdl = fam(L, beta0)
                data[L] = list(pool.map(lambda c, mdl=mdl: _binder_series(mdl, run, c),
                                        range(run.chains)))
            hw = 1.5 / np.std(np.concatenate([o[0] for o in data[sizes[-1]]]))
            cr = _all_crossings(data, sizes, beta0, hw)
            key = f"{sizes[-2]}-{sizes[-1]}"
            if (cr[key] is not None and abs(cr[key] - beta0) < 0.5 * hw) or attempt == 2:
                break
            if cr[key] is None:
                # below the crossing the larger lattice has the smaller cumulant
                beta0 += hw if _binder_gap(data, sizes, beta0, beta0 + hw) < 0 else -hw
            else:
                beta0 = float(cr[key])
    finally:
        pool.shutdown()
    if cr[key] is None:
        raise RangeError(f"no Binder crossing of L={sizes[-2]},{sizes[-1]} in beta window {tuple(bracket)}")
    blocks = {}
    for L in sizes:
        bl_list = []
        for c, o in enumerate(data[L]):
            tau = integrated_autocorr_time(o[0])
            bl = max(1, int(math.ceil(10 * tau)))
            bl_list += [(c, slice(i * bl, (i + 1) * bl)) for i in range(len(o[0]) // bl)]
        blocks[L] = bl_list
    # block bootstrap over the two largest sizes
    rng = np.random.default_rng(run.seed)
    boots = []
    for _ in range(n_boot):
        pick = [[blocks[L][i] for i in rng.integers(0, len(blocks[L]), len(blocks[L]))]
                for L in sizes[-2:]]
        val = _crossing(_pooled(data[sizes[-2]], pick[0]), _pooled(data[sizes[-1]], pick[1]), beta0, hw)
        if val is not None:
            boots.append(val)
    err = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    return TcEstimate(float(cr[key]), err,
                      {k: (float(v) if v is not None else float("nan")) for k, v in cr.items()},
                      sizes, (float(lo), float(hi)), beta0)


def _pooled(outs, idx_blocks=None):
    if idx_blocks is None:
        return tuple(np.concatenate([o[q] for o in outs]) for q in range(3))
    return tuple(np.concatenate([outs[c][q][sl] for c, sl in idx_blocks]) for q in range(3))


def _all_crossings(data, sizes, beta0, hw):
    return {f"{L1}-{L2}": _crossing(_pooled(data[L1]), _pooled(data[L2]), beta0, hw)
            for L1, L2 in zip(sizes[:-1], sizes[1:])}


def _binder_gap(data, sizes, beta0, beta):
    """U(L_max) - U(L_max-1) reweighted from beta0 to beta."""
    d1, d2 = _pooled(data[sizes[-2]]), _pooled(data[sizes[-1]])
    return (binder_cumulant(d2[1], d2[2], d2[0], beta - beta0)
            - binder_cumulant(d1[1], d1[2], d1[0], beta - beta0))


def ashkin_teller_self_dual_beta(J: float, K: float) -> float:
    """Self-dual inverse temperature of the onsite-kernel dim: sinh(2 beta J) = exp(2 beta K)."""
    from scipy.optimize import brentq

    return float(brentq(lambda b: math.sinh(2 * b * J) - math.exp(2 * b * K), 1e-6, 5.0, xtol=1e-14))
