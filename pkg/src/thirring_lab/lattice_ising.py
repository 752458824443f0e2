"""Nearest-neighbour Ising model on an open L x L square lattice via Pfaffians.

High-temperature expansion: Z = 2^N cosh(K)^E sum_G t^|G| over even subgraphs
G, t = tanh K.  Each site is decorated (Fisher) so that even subgraphs are in
bijection with dimer coverings: a degree-3 vertex becomes a triangle of
terminal nodes, a degree-4 vertex two triangles joined by a link edge, a
degree-2 corner a single edge.  A lattice bond edge is covered exactly when
the bond is *absent* from G, hence it carries weight 1/t and

    Z = 2^N sinh(K)^E |Pf K|.

K is the Kasteleyn matrix of a clockwise-odd orientation of the planar
decorated graph.  Bond-occupation correlations come from 2x2 minors of K^-1,
computed with a sparse LU and a handful of column solves.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from .errors import ContractViolation, NumericalFailure, OrientationError

BETA_C_SELF_DUAL = 0.5 * math.log(1 + math.sqrt(2))  # cross-check value only

# terminal offsets from the site centre
_TERM = {"W": (-0.25, 0.0), "E": (0.25, 0.0), "N": (0.0, 0.25), "S": (0.0, -0.25)}
_LINK = {"A": (-0.1, 0.1), "B": (0.1, -0.1)}
_STEP = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}


@dataclass(frozen=True)
class IsingExactSpec:
    L: int
    betaJ: float
    boundary: str = "open"
    min_side: int = 16

    def __post_init__(self):
        if self.boundary != "open":
            raise ContractViolation("only open boundary conditions are implemented")
        if self.L < self.min_side or self.L % 2:
            raise ContractViolation(f"L must be even and >= {self.min_side}, got {self.L}")
        if self.min_side < 2:
            raise ContractViolation("min_side must be >= 2")
        if not (math.isfinite(self.betaJ) and self.betaJ > 0):
            raise ContractViolation("betaJ must be finite and positive")

    @property
    def n_sites(self) -> int:
        return self.L * self.L

    @property
    def n_bonds(self) -> int:
        return 2 * self.L * (self.L - 1)


@dataclass(frozen=True)
class BondObservable:
    site: tuple
    direction: str  # "horizontal" (to site + e0) or "vertical" (to site + e1)

    def key(self):
        return ("E" if self.direction == "horizontal" else "N", int(self.site[0]), int(self.site[1]))


def site_bonds(site, L):
    """Bonds incident to a site, as (dir, i, j) keys of the bond's lower-left end."""
    i, j = site
    out = []
    if i + 1 < L:
        out.append(("E", i, j))
    if i - 1 >= 0:
        out.append(("E", i - 1, j))
    if j + 1 < L:
        out.append(("N", i, j))
    if j - 1 >= 0:
        out.append(("N", i, j - 1))
    return out


def boundary_distance(site, L) -> int:
    """Lattice steps from a site to the first site outside the L x L block."""
    return min(site[0] + 1, site[1] + 1, L - site[0], L - site[1])


def bulk_pair_origins(L: int, xmax: int | None = None, direction=(1, 0), stride: int = 1):
    """Origins o such that o and o + x e stay >= L/4 from the edge for all x <= xmax."""
    xmax = L // 4 if xmax is None else int(xmax)
    lo, hi = L // 4 - 1, L - L // 4
    d = tuple(int(c) for c in direction)
    if d not in ((1, 0), (0, 1)):
        raise ContractViolation("bulk pairs are defined for the +e0 and +e1 directions")
    if not 1 <= xmax <= L // 4:
        raise ContractViolation(f"need 1 <= xmax <= L/4 = {L // 4}")
    ri = range(lo, hi - xmax * d[0] + 1, stride)
    rj = range(lo, hi - xmax * d[1] + 1, stride)
    return [(i, j) for i in ri for j in rj]


# -- decorated graph ----------------------------------------------------------

@dataclass
class FisherGraph:
    L: int
    coords: np.ndarray          # (n_nodes, 2)
    edges: np.ndarray           # (n_edges, 2) node pairs
    is_bond: np.ndarray         # bool per edge
    bond_edge: dict             # (dir, i, j) -> edge index
    partner: np.ndarray         # mate in the all-bonds-absent dimer covering
    orientation: np.ndarray | None = None  # +1: u->v, -1: v->u


def build_fisher_graph(L: int) -> FisherGraph:
    coords, edges, is_bond = [], [], []
    term = {}
    links = []

    def node(xy):
        coords.append(xy)
        return len(coords) - 1

    def edge(u, v, bond=False):
        edges.append((u, v))
        is_bond.append(bond)
        return len(edges) - 1

    for i in range(L):
        for j in range(L):
            dirs = [d for d, (di, dj) in _STEP.items() if 0 <= i + di < L and 0 <= j + dj < L]
            t = {d: node((i + _TERM[d][0], j + _TERM[d][1])) for d in dirs}
            term.update({(i, j, d): n for d, n in t.items()})
            if len(dirs) == 2:
                edge(t[dirs[0]], t[dirs[1]])
            elif len(dirs) == 3:
                a, b, c = (t[d] for d in dirs)
                edge(a, b), edge(b, c), edge(a, c)
            else:
                la = node((i + _LINK["A"][0], j + _LINK["A"][1]))
                lb = node((i + _LINK["B"][0], j + _LINK["B"][1]))
                for a, b, c in ((t["W"], t["N"], la), (t["E"], t["S"], lb)):
                    edge(a, b), edge(b, c), edge(a, c)
                links.append(edge(la, lb))

    bond_edge = {}
    for i in range(L):
        for j in range(L):
            if i + 1 < L:
                bond_edge[("E", i, j)] = edge(term[(i, j, "E")], term[(i + 1, j, "W")], True)
            if j + 1 < L:
                bond_edge[("N", i, j)] = edge(term[(i, j, "N")], term[(i, j + 1, "S")], True)
    edges = np.array(edges, np.int64)
    is_bond = np.array(is_bond)
    # G = empty graph: every bond edge and every link edge is a dimer
    mate = is_bond.copy()
    mate[links] = True
    partner = np.full(len(coords), -1, np.int64)
    partner[edges[mate, 0]] = edges[mate, 1]
    partner[edges[mate, 1]] = edges[mate, 0]
    return FisherGraph(L, np.array(coords, float), edges, is_bond, bond_edge, partner)


def nested_dissection(coords: np.ndarray, edges: np.ndarray, leaf: int = 64) -> np.ndarray:
    """Geometric nested-dissection ordering: (left, right, separator), recursively."""
    n = len(coords)
    nu = np.concatenate([edges[:, 0], edges[:, 1]])
    nv = np.concatenate([edges[:, 1], edges[:, 0]])
    out = []
    inset = np.zeros(n, bool)
    left_mask = np.zeros(n, bool)

    def rec(idx):
        if len(idx) <= leaf:
            out.append(idx)
            return
        c = coords[idx]
        ax = int(np.ptp(c[:, 1]) > np.ptp(c[:, 0]))
        left = c[:, ax] < np.median(c[:, ax])
        if left.all() or not left.any():
            out.append(idx)
            return
        inset[idx] = True
        left_mask[idx[left]] = True
        cross = left_mask[nu] & inset[nv] & ~left_mask[nv]
        sep = np.zeros(n, bool)
        sep[nu[cross]] = True
        inset[idx] = False
        left_mask[idx] = False
        rec(idx[left & ~sep[idx]])
        rec(idx[~left])
        out.append(idx[sep[idx]])

    rec(np.arange(n))
    order = np.concatenate(out)
    assert len(order) == n
    return order


def _faces(coords, edges):
    """Faces of a straight-line planar embedding as lists of half-edges.

    Half-edge 2e is u->v and 2e+1 is v->u for edges[e] = (u, v).
    """
    n = len(coords)
    heads = np.concatenate([edges[:, 1], edges[:, 0]])
    tails = np.concatenate([edges[:, 0], edges[:, 1]])
    hid = np.concatenate([2 * np.arange(len(edges)), 2 * np.arange(len(edges)) + 1])
    ang = np.arctan2(coords[heads, 1] - coords[tails, 1], coords[heads, 0] - coords[tails, 0])
    order = np.lexsort((ang, tails))
    out_of = [[] for _ in range(n)]
    for k in order:
        out_of[tails[k]].append(int(hid[k]))
    pos = {}
    for v, hs in enumerate(out_of):
        for p, h in enumerate(hs):
            pos[h] = p

    def nxt(h):
        # h = u->v; continue from v along the edge just clockwise of v->u
        rev = h ^ 1
        hs = out_of[_tail(rev, edges)]
        return hs[(pos[rev] - 1) % len(hs)]

    seen = np.zeros(2 * len(edges), bool)
    faces = []
    for h0 in range(2 * len(edges)):
        if seen[h0]:
            continue
        face, h = [], h0
        while not seen[h]:
            seen[h] = True
            face.append(h)
            h = nxt(h)
        faces.append(face)
    return faces


def _tail(h, edges):
    e = h >> 1
    return int(edges[e, 0] if h % 2 == 0 else edges[e, 1])


def _head(h, edges):
    e = h >> 1
    return int(edges[e, 1] if h % 2 == 0 else edges[e, 0])


def _signed_area(face, coords, edges):
    a = 0.0
    for h in face:
        p, q = coords[_tail(h, edges)], coords[_head(h, edges)]
        a += p[0] * q[1] - q[0] * p[1]
    return 0.5 * a


def _along(h, orient):
    """+1 if the edge of half-edge h is oriented along h."""
    return orient[h >> 1] * (1 if h % 2 == 0 else -1)


def kasteleyn_orientation(g: FisherGraph) -> np.ndarray:
    """Clockwise-odd orientation via a spanning tree and the dual co-tree."""
    coords, edges = g.coords, g.edges
    n, m = len(coords), len(edges)
    faces = _faces(coords, edges)
    if n - m + len(faces) != 2:
        raise OrientationError("embedding is not planar and connected (Euler check failed)")
    areas = np.array([_signed_area(f, coords, edges) for f in faces])
    outer = int(np.argmax(np.abs(areas)))
    if np.sum(np.sign(areas) == np.sign(areas[outer])) != 1:
        raise OrientationError("could not identify a unique outer face")
    ccw = np.sign(-areas[outer])  # sign of interior faces

    face_of = np.empty(2 * m, np.int64)
    for fi, f in enumerate(faces):
        face_of[f] = fi

    # spanning tree, oriented parent -> child
    orient = np.zeros(m, np.int8)
    adj = [[] for _ in range(n)]
    for e, (u, v) in enumerate(edges):
        adj[u].append((v, e))
        adj[v].append((u, e))
    seen = np.zeros(n, bool)
    seen[0] = True
    dq = deque([0])
    while dq:
        u = dq.popleft()
        for v, e in adj[u]:
            if not seen[v]:
                seen[v] = True
                orient[e] = 1 if edges[e, 0] == u else -1
                dq.append(v)

    # dual tree over the remaining edges, rooted at the outer face
    dual = [[] for _ in faces]
    for e in np.flatnonzero(orient == 0):
        f1, f2 = face_of[2 * e], face_of[2 * e + 1]
        dual[f1].append((f2, e))
        dual[f2].append((f1, e))
    parent_edge = np.full(len(faces), -1)
    order = [outer]
    fseen = np.zeros(len(faces), bool)
    fseen[outer] = True
    k = 0
    while k < len(order):
        f = order[k]
        k += 1
        for f2, e in dual[f]:
            if not fseen[f2]:
                fseen[f2] = True
                parent_edge[f2] = e
                order.append(f2)
    if len(order) != len(faces):
        raise OrientationError("dual co-tree does not span the faces")

    for f in reversed(order[1:]):
        e = parent_edge[f]
        cw = 0
        for h in faces[f]:
            if h >> 1 != e:
                cw += _along(h, orient) * ccw < 0
        # choose e so that the clockwise count is odd
        h_e = next(h for h in faces[f] if h >> 1 == e)
        # e runs clockwise around f iff _along(h_e) * ccw < 0
        along = -ccw if cw % 2 == 0 else ccw
        orient[e] = along * (1 if h_e % 2 == 0 else -1)

    for fi, f in enumerate(faces):
        if fi == outer:
            continue
        cw = sum(_along(h, orient) * ccw < 0 for h in f)
        if cw % 2 != 1:
            raise OrientationError(f"face {fi} is not clockwise-odd")
    g.orientation = orient
    return orient


def build_kasteleyn(spec: IsingExactSpec, graph: FisherGraph | None = None) -> sp.csc_matrix:
    """Antisymmetric weighted Kasteleyn matrix of the decorated lattice."""
    g = graph or _graph(spec.L)
    t = math.tanh(spec.betaJ)
    w = np.where(g.is_bond, 1.0 / t, 1.0) * g.orientation
    u, v = g.edges[:, 0], g.edges[:, 1]
    n = len(g.coords)
    K = sp.coo_matrix((np.concatenate([w, -w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
                      shape=(n, n))
    return K.tocsc()


@lru_cache(maxsize=4)
def _graph(L: int) -> FisherGraph:
    g = build_fisher_graph(L)
    kasteleyn_orientation(g)
    return g


def pfaffian_dense(A: np.ndarray) -> tuple[float, float]:
    """(sign, log|Pf|) of a dense real antisymmetric matrix, Parlett-Reid."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if n % 2:
        return 0.0, -math.inf
    sign, logpf = 1.0, 0.0
    for k in range(0, n - 1, 2):
        p = k + 1 + int(np.argmax(np.abs(A[k + 1:, k])))
        if p != k + 1:
            A[[k + 1, p], :] = A[[p, k + 1], :]
            A[:, [k + 1, p]] = A[:, [p, k + 1]]
            sign = -sign
        piv = A[k + 1, k]
        if piv == 0:
            return 0.0, -math.inf
        sign *= math.copysign(1.0, -piv)  # Pf picks up A[k, k+1] = -A[k+1, k]
        logpf += math.log(abs(piv))
        if k + 2 < n:
            tau = A[k, k + 2:] / A[k, k + 1]
            # rank-2 update of the trailing block
            col = A[k + 2:, k + 1].copy()
            A[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return sign, logpf


# -- solver -------------------------------------------------------------------

class IsingPfaffianSolver:
    """Factorized Kasteleyn matrix plus inverse columns at a reference site."""

    def __init__(self, spec: IsingExactSpec, origin=None, ordering: str = "nd"):
        self.spec = spec
        self.graph = _graph(spec.L)
        self.K = build_kasteleyn(spec, self.graph)
        self.t = math.tanh(spec.betaJ)
        n = self.K.shape[0]
        if ordering == "nd":
            # rows in nested-dissection order, columns by matching partner so
            # that the permuted diagonal is structurally non-zero
            self.rows = nested_dissection(self.graph.coords, self.graph.edges)
            self.cols = self.graph.partner[self.rows]
            permc = "NATURAL"
        else:
            self.rows = self.cols = np.arange(n)
            permc = ordering
        Kp = self.K[self.rows][:, self.cols].tocsc()
        try:
            self.lu = splu(Kp, permc_spec=permc)
        except RuntimeError as exc:
            raise NumericalFailure(f"sparse LU of the Kasteleyn matrix failed: {exc}") from exc
        d = np.abs(self.lu.U.diagonal())
        if np.any(d == 0):
            raise NumericalFailure("Kasteleyn matrix is singular")
        self._logdet = float(np.sum(np.log(d)))
        self.cond_hint = float(d.max() / d.min())
        L = spec.L
        self.origin = tuple(origin) if origin is not None else (L // 2, L // 2)
        self._cols = {}
        self._col_err = {}
        self._bond_cache = {}

    # partition function
    def log_pfaffian(self) -> float:
        return 0.5 * self._logdet

    def log_partition(self) -> float:
        s = self.spec
        return (s.n_sites * math.log(2) + s.n_bonds * math.log(math.sinh(s.betaJ))
                + self.log_pfaffian())

    def free_energy_density(self) -> float:
        """ln Z / N."""
        return self.log_partition() / self.spec.n_sites

    # inverse entries
    def _column(self, j: int) -> np.ndarray:
        if j not in self._cols:
            e = np.zeros(self.K.shape[0])
            e[j] = 1.0
            x = self._solve(e)
            dx = self._solve(e - self.K @ x)
            if not np.all(np.isfinite(x)):
                raise NumericalFailure(f"inverse column solve failed (cond hint {self.cond_hint:.3g})")
            self._cols[j] = x + dx
            self._col_err[j] = float(np.max(np.abs(dx)))
        return self._cols[j]

    def _solve(self, b: np.ndarray) -> np.ndarray:
        x = np.empty_like(b)
        x[self.cols] = self.lu.solve(np.ascontiguousarray(b[self.rows]))
        return x

    def _kinv(self, a: int, b: int) -> float:
        """(K^-1)[a, b], using the cached column b or antisymmetry."""
        if b in self._cols:
            return self._cols[b][a]
        if a in self._cols:
            return -self._cols[a][b]
        return self._column(b)[a]

    def bond_nodes(self, key):
        """(u, v, K[u, v]) of the decorated edge carrying a lattice bond."""
        out = self._bond_cache.get(key)
        if out is None:
            e = self.graph.bond_edge[key]
            u, v = self.graph.edges[e]
            out = (int(u), int(v), float(self.graph.orientation[e] / self.t))
            self._bond_cache[key] = out
        return out

    def bond_probability_absent(self, key) -> float:
        """P(bond absent from the high-temperature graph) = <dimer on bond edge>."""
        u, v, kuv = self.bond_nodes(key)
        return kuv * self._kinv(v, u)

    def bond_energy_mean(self, key) -> float:
        t = self.t
        return t + (1 / t - t) * (1 - self.bond_probability_absent(key))

    def dimer_covariance(self, k1, k2) -> float:
        u1, v1, K1 = self.bond_nodes(k1)
        u2, v2, K2 = self.bond_nodes(k2)
        ki = self._kinv
        return K1 * K2 * (ki(v1, v2) * ki(u2, u1) - ki(v1, u2) * ki(v2, u1))

    def bond_energy_covariance(self, k1, k2) -> float:
        """Cov(sigma sigma on bond k1, sigma sigma on bond k2)."""
        if k1 == k2:
            m = self.bond_energy_mean(k1)
            return 1.0 - m * m
        f = 1 / self.t - self.t
        return f * f * self.dimer_covariance(k1, k2)

    def _prefetch(self, keys):
        for k in keys:
            u, v, _ = self.bond_nodes(k)
            self._column(u)
            self._column(v)

    def energy_correlator_sites(self, p, q) -> tuple[float, float]:
        """Connected <O_p O_q>, O = sum of the bonds incident to a site."""
        L = self.spec.L
        for s_ in (p, q):
            if not (0 <= s_[0] < L and 0 <= s_[1] < L):
                raise ContractViolation(f"site {s_} outside the lattice")
        bp = site_bonds(p, L)
        bq = site_bonds(q, L)
        self._prefetch(bq)
        val = sum(self.bond_energy_covariance(k1, k2) for k1 in bp for k2 in bq)
        return float(val), self._error_estimate(bq)

    def placement(self, x: int, direction=(1, 0), centered: bool = True):
        """Insertion sites for separation x along an axis.

        centered=True puts the pair symmetrically about the lattice centre,
        which keeps both points as far from the open boundary as possible;
        otherwise the second point is origin + x e.
        """
        L = self.spec.L
        d = tuple(int(c) for c in direction)
        if d not in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            raise ContractViolation("direction must be a lattice axis")
        if not 1 <= x <= L // 4:
            raise ContractViolation(f"need 1 <= x <= L/4 = {L // 4}")
        if centered:
            lo = (L - x) // 2  # centre at (L-1)/2 up to half a step
            p0 = (lo if d[0] else L // 2, lo if d[1] else L // 2)
            if d[0] < 0 or d[1] < 0:
                p0 = (p0[0] + x * (d[0] < 0), p0[1] + x * (d[1] < 0))
            o = p0
        else:
            o = self.origin
        p = (o[0] + x * d[0], o[1] + x * d[1])
        for s_ in (o, p):
            if boundary_distance(s_, L) < L // 4 and L >= 16:
                raise ContractViolation(f"site {s_} is closer than L/4 to the boundary")
        return o, p

    def energy_correlator(self, x: int, direction=(1, 0), centered: bool = True) -> tuple[float, float]:
        """Connected <O_{o + x e} O_o> and an error estimate from solve refinement."""
        o, p = self.placement(x, direction, centered)
        return self.energy_correlator_sites(p, o)

    def _error_estimate(self, keys) -> float:
        f = 1 / self.t - self.t
        worst = 0.0
        for k in keys:
            u, v, _ = self.bond_nodes(k)
            worst = max(worst, self._col_err.get(u, 0.0), self._col_err.get(v, 0.0))
        scale = max(np.max(np.abs(c)) for c in self._cols.values())
        # 16 bond pairs, each bilinear in inverse entries
        return float(16 * f * f * 2 * scale * worst + 16 * np.finfo(float).eps * f * f * scale ** 2)

    def correlator_series(self, xs, direction=(1, 0), centered: bool = True):
        vals, errs = zip(*(self.energy_correlator(int(x), direction, centered) for x in xs))
        return np.array(vals), np.array(errs)


    def bulk_correlator(self, xs, origins, direction=(1, 0), batch: int = 64) -> np.ndarray:
        """Connected <O_{o + x e} O_o> averaged over ``origins``, one value per x.

        Only the inverse columns at the origin bonds are needed (rows at the
        partner bonds, antisymmetry for the transposed entries); they are
        solved in batches and not cached.
        """
        L = self.spec.L
        d = np.asarray(direction, int)
        xs = [int(x) for x in xs]
        f = 1 / self.t - self.t
        total = np.zeros(len(xs))
        origins = [tuple(int(c) for c in o) for o in origins]
        for s_ in origins + [tuple(np.asarray(o) + max(xs) * d) for o in origins]:
            if not (0 <= s_[0] < L and 0 <= s_[1] < L):
                raise ContractViolation(f"site {s_} outside the lattice")
        n = self.K.shape[0]
        for b0 in range(0, len(origins), batch):
            chunk = origins[b0:b0 + batch]
            bonds = [[self.bond_nodes(k) for k in site_bonds(o, L)] for o in chunk]
            nodes = sorted({a for bl in bonds for (u, v, _) in bl for a in (u, v)})
            col = {a: c for c, a in enumerate(nodes)}
            rhs = np.zeros((n, len(nodes)))
            rhs[nodes, np.arange(len(nodes))] = 1.0
            X = self._solve(rhs)
            R = rhs - self.K @ X
            if np.max(np.abs(R)) > 1e-13:
                X += self._solve(R)
            if not np.all(np.isfinite(X)):
                raise NumericalFailure(f"inverse column solve failed (cond hint {self.cond_hint:.3g})")
            for o, b2s in zip(chunk, bonds):
                for ix, x in enumerate(xs):
                    p = tuple(np.asarray(o) + x * d)
                    acc = 0.0
                    for k1 in site_bonds(p, L):
                        u1, v1, K1 = self.bond_nodes(k1)
                        for (u2, v2, K2), k2 in zip(b2s, site_bonds(o, L)):
                            if k1 == k2:
                                m = self.t + f * (1 - K2 * X[v2, col[u2]])
                                acc += 1.0 - m * m
                                continue
                            cu, cv = X[:, col[u2]], X[:, col[v2]]
                            # (K^-1)[v1,v2] (K^-1)[u2,u1] - (K^-1)[v1,u2] (K^-1)[v2,u1]
                            acc += f * f * K1 * K2 * (cv[v1] * (-cu[u1]) - cu[v1] * (-cv[u1]))
                    total[ix] += acc
        return total / len(origins)

@lru_cache(maxsize=2)
def _solver(spec: IsingExactSpec) -> IsingPfaffianSolver:
    return IsingPfaffianSolver(spec)


def energy_correlator_exact(spec: IsingExactSpec, x: int, direction=(1, 0)) -> float:
    return _solver(spec).energy_correlator(x, direction)[0]


def bulk_energy_correlator(spec: IsingExactSpec, xs, stride: int = 1) -> np.ndarray:
    """Exact connected <O O> at separations xs, averaged over the bulk pair set
    along both lattice axes (the same pairs the Monte Carlo estimator uses)."""
    xs = np.asarray(xs, int)
    s = _solver(spec)
    out = [s.bulk_correlator(xs, bulk_pair_origins(spec.L, int(xs.max()), d, stride), d)
           for d in ((1, 0), (0, 1))]
    return 0.5 * (out[0] + out[1])


def log_partition_exact(spec: IsingExactSpec) -> float:
    return _solver(spec).log_partition()


# -- infinite volume ------------------------------------------------------------

def _onsager_integrand(theta, K):
    s = math.sinh(2 * K)
    A = math.cosh(2 * K) ** 2 - s * math.cos(theta)
    return math.log(0.5 * (A + math.sqrt(max(A * A - s * s, 0.0))))


def onsager_free_energy_density(betaJ: float, tol: float = 1e-10) -> float:
    """Infinite-volume ln Z / N of the square-lattice Ising model.

    ln 2 + (1/2pi) int_0^pi ln[(A + sqrt(A^2 - B^2))/2] dtheta with
    A = cosh^2 2K - sinh 2K cos theta, B = sinh 2K (the inner angular integral
    of the double-integral form done in closed form).
    """
    if not betaJ > 0:
        raise ContractViolation("betaJ must be positive")
    val, err = quad(_onsager_integrand, 0.0, math.pi, args=(betaJ,), epsabs=tol, epsrel=tol, limit=200)
    if err > tol:
        warnings.warn(f"Onsager quadrature reached only {err:.2g}", RuntimeWarning, stacklevel=2)
    return math.log(2) + val / (2 * math.pi)


def _energy_integrand(theta, K):
    s, c2 = math.sinh(2 * K), math.cosh(2 * K)
    A = c2 * c2 - s * math.cos(theta)
    dA = 4 * c2 * s - 2 * c2 * math.cos(theta)
    dB = 2 * c2
    root = math.sqrt(max(A * A - s * s, 1e-300))
    return (dA + (A * dA - s * dB) / root) / (A + root)


def onsager_energy(betaJ: float, tol: float = 1e-12) -> float:
    """d(ln Z/N)/d(betaJ), i.e. minus the energy per site in units of J."""
    with warnings.catch_warnings():
        # the integrand is sharply peaked at theta=0 near criticality; the
        # requested tolerance sits at the roundoff floor there
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(_energy_integrand, 0.0, math.pi, args=(betaJ,), epsabs=tol, epsrel=tol,
                        limit=400, points=[1e-6, 1e-3])
    return val / (2 * math.pi)


def specific_heat(betaJ: float, h: float = 1e-6) -> float:
    """(betaJ)^2 d^2(ln Z/N)/d(betaJ)^2 by a central difference of the energy."""
    return betaJ ** 2 * (onsager_energy(betaJ + h) - onsager_energy(betaJ - h)) / (2 * h)


def locate_critical_coupling(bracket=(0.35, 0.55), xtol: float = 1e-8) -> float:
    """betaJ of the specific-heat maximum (bounded golden-section search)."""
    res = minimize_scalar(lambda k: -specific_heat(k), bounds=bracket, method="bounded",
                          options={"xatol": xtol})
    if not res.success:
        raise NumericalFailure("specific-heat peak search did not converge")
    return float(res.x)
