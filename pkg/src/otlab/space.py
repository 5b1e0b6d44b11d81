"""Finite metric measure spaces, domain pairs and admissible densities."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial.distance import cdist

__all__ = [
    "Space",
    "DomainPair",
    "ProbMeasure",
    "SpaceError",
    "DensityError",
    "build_space",
    "space_from_points",
    "ball",
    "make_domain",
    "make_density",
    "point_mass",
    "uniform_measure",
    "read_space_spec",
    "save_space",
    "load_space",
]

CACHE_VERSION = 1
_BALL_RTOL = 1e-12


class SpaceError(ValueError):
    """Invalid space specification."""


class DensityError(ValueError):
    """Density bounds cannot be met."""


@dataclass(eq=False)
class Space:
    """Finite metric measure space.

    Parameters
    ----------
    edges : ndarray of int, shape (E, 2)
        Undirected edges ``i < j``.
    lengths : ndarray, shape (E,)
        Positive edge lengths.
    m : ndarray, shape (n,)
        Reference measure.
    curvature : tuple
        Declarative ``(K, N)``; never estimated.
    coords : ndarray, optional
        Embedding used by fixtures; with ``metric="euclidean"`` it defines
        ``dist`` directly.
    mesh : float, optional
        Mesh size of a fixture family level.
    metric : {"graph", "euclidean"}
        ``"graph"`` uses all-pairs shortest paths over ``edges``.
        ``"euclidean"`` is the shortest-path metric of the complete graph with
        Euclidean lengths, which by the triangle inequality is the Euclidean
        distance itself; ``edges`` then only carries the local stencil used by
        Laplacians and discrete gradients.
    """

    edges: np.ndarray
    lengths: np.ndarray
    m: np.ndarray
    curvature: tuple = (0.0, 1.0)
    coords: np.ndarray = None
    mesh: float = None
    metric: str = "graph"
    _dist: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.m)

    @property
    def dist(self):
        if self._dist is None:
            if self.metric == "euclidean":
                self._dist = cdist(self.coords, self.coords)
            else:
                self._dist = _apsp(self.n, self.edges, self.lengths)
        return self._dist

    def dist_block(self, rows, cols):
        """Distances between two index sets without forming the full matrix."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self.metric == "euclidean" and self._dist is None:
            return cdist(self.coords[rows], self.coords[cols])
        return self.dist[np.ix_(rows, cols)]

    @cached_property
    def csr(self):
        """``(indptr, indices, lengths)`` of the symmetric adjacency."""
        n = self.n
        i, j = self.edges[:, 0], self.edges[:, 1]
        a = coo_matrix(
            (np.concatenate([self.lengths, self.lengths]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(n, n),
        ).tocsr()
        a.sort_indices()
        return a.indptr.astype(np.int64), a.indices.astype(np.int64), a.data.astype(np.float64)

    def neighbors(self, i):
        indptr, indices, _ = self.csr
        return indices[indptr[i] : indptr[i + 1]]

    def adjacent(self, i, j):
        return bool(np.any(self.neighbors(i) == j))

    def nearest(self, point, tol=1e-9):
        """Index whose coordinates equal ``point``; ``KeyError`` if absent."""
        if self.coords is None:
            raise KeyError("space has no coordinates")
        c = self.coords.reshape(self.n, -1)
        p = np.atleast_1d(np.asarray(point, dtype=float))
        err = np.max(np.abs(c - p[None, :]), axis=1)
        k = int(np.argmin(err))
        if err[k] > tol:
            raise KeyError(f"point {tuple(p)} not on this level")
        return k


def _apsp(n, edges, lengths):
    g = coo_matrix((lengths, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    d = shortest_path(g, method="D", directed=False)
    return 0.5 * (d + d.T)


def _clean_edges(n, edges, lengths):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lengths = np.asarray(lengths, dtype=np.float64).reshape(-1)
    if len(edges) != len(lengths):
        raise SpaceError("edges and lengths differ in size")
    if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
        raise SpaceError("edge lengths must be positive")
    if np.any(edges < 0) or np.any(edges >= n):
        raise SpaceError("edge endpoint out of range")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise SpaceError("self loops are not allowed")
    edges = np.sort(edges, axis=1)
    # keep the shortest copy of parallel edges, deterministic order
    order = np.lexsort((lengths, edges[:, 1], edges[:, 0]))
    edges, lengths = edges[order], lengths[order]
    keep = np.ones(len(edges), dtype=bool)
    keep[1:] = np.any(edges[1:] != edges[:-1], axis=1)
    return edges[keep], lengths[keep]


def _check_connected(n, edges):
    if n == 1:
        return
    g = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    ncomp, _ = connected_components(g, directed=False)
    if ncomp != 1:
        raise SpaceError("metric undefined: graph is disconnected")


def build_space(edges, lengths, m, curvature=(0.0, 1.0), coords=None, mesh=None):
    """Space with the shortest-path metric of a weighted graph.

    Raises
    ------
    SpaceError
        Nonpositive lengths or masses, or a disconnected graph
        ("metric undefined").
    """
    m = np.asarray(m, dtype=np.float64).reshape(-1)
    n = len(m)
    if n == 0:
        raise SpaceError("empty space")
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise SpaceError("reference weights must be positive")
    edges, lengths = _clean_edges(n, edges, lengths)
    _check_connected(n, edges)
    K, N = (float(curvature[0]), float(curvature[1]))
    if N < 1:
        raise SpaceError("curvature dimension N must be >= 1")
    sp = Space(edges, lengths, m, (K, N), coords, mesh, "graph")
    sp.dist  # noqa: B018 - eager metric for graph spaces
    return sp


def space_from_points(coords, edges, m, curvature=(0.0, 2.0), mesh=None):
    """Euclidean-metric space on a point cloud with a local stencil ``edges``."""
    coords = np.asarray(coords, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64).reshape(-1)
    if np.any(m <= 0):
        raise SpaceError("reference weights must be positive")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lengths = np.linalg.norm(coords[edges[:, 0]] - coords[edges[:, 1]], axis=1)
    edges, lengths = _clean_edges(len(m), edges, lengths)
    _check_connected(len(m), edges)
    return Space(edges, lengths, m, (float(curvature[0]), float(curvature[1])), coords, mesh, "euclidean")


def ball(space, center, r):
    """Closed ball ``{i : d(center, i) <= r}`` as a sorted index array."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    d = space.dist_block([center], np.arange(space.n))[0]
    return np.flatnonzero(d <= r * (1.0 + _BALL_RTOL))


@dataclass(frozen=True, eq=False)
class DomainPair:
    """Source domain ``S``, target set ``Y`` and derived quantities."""

    S: np.ndarray
    Y: np.ndarray
    D: float
    S1: np.ndarray
    john_center: int = None
    eta: float = None


def make_domain(space, S, Y, john_center=None, eta=None):
    S = np.unique(np.asarray(S, dtype=np.int64))
    Y = np.unique(np.asarray(Y, dtype=np.int64))
    if len(S) == 0 or len(Y) == 0:
        raise ValueError("S and Y must be nonempty")
    U = np.union1d(S, Y)
    D = float(np.max(space.dist_block(U, U)))
    dS = np.min(space.dist_block(S, np.arange(space.n)), axis=0)
    S1 = np.flatnonzero(dS <= 1.0 * (1.0 + _BALL_RTOL))
    if john_center is not None and john_center not in set(S.tolist()):
        raise ValueError("john_center must lie in S")
    return DomainPair(S, Y, D, S1, john_center, eta)


@dataclass(frozen=True, eq=False)
class ProbMeasure:
    """Probability weights on a sorted support."""

    support: np.ndarray
    weights: np.ndarray
    density_bounds: tuple = None

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if s.shape != w.shape or s.ndim != 1:
            raise ValueError("support and weights must be matching 1-d arrays")
        if len(s) == 0:
            raise ValueError("empty support")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        order = np.argsort(s, kind="stable")
        s, w = s[order], w[order]
        if np.any(s[1:] == s[:-1]):
            raise ValueError("duplicate support points")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    def dense(self, n):
        out = np.zeros(n)
        out[self.support] = self.weights
        return out

    def on(self, index):
        """Weights re-expressed on the sorted index set ``index``."""
        index = np.asarray(index, dtype=np.int64)
        pos = np.searchsorted(index, self.support)
        if np.any(pos >= len(index)) or np.any(index[np.minimum(pos, len(index) - 1)] != self.support):
            raise ValueError("measure support is not contained in the index set")
        out = np.zeros(len(index))
        out[pos] = self.weights
        return out

    def positive(self):
        """Same measure with zero-weight atoms dropped."""
        k = self.weights > 0
        return ProbMeasure(self.support[k], self.weights[k] / self.weights[k].sum(), None)

    def check_density(self, m, rtol=1e-12):
        """Raise ``DensityError`` if the density bounds are violated."""
        if self.density_bounds is None:
            return
        a1, a2 = self.density_bounds
        mm = np.asarray(m)[self.support]
        lo = self.weights < a1 * mm * (1 - rtol)
        hi = self.weights > a2 * mm * (1 + rtol)
        if np.any(lo):
            raise DensityError(f"lower bound a1 violated at {self.support[lo][:5].tolist()}")
        if np.any(hi):
            raise DensityError(f"upper bound a2 violated at {self.support[hi][:5].tolist()}")


def point_mass(i):
    return ProbMeasure(np.array([i]), np.array([1.0]))


def uniform_measure(space, index):
    """Measure proportional to ``m`` on ``index``."""
    index = np.unique(np.asarray(index, dtype=np.int64))
    w = space.m[index] / space.m[index].sum()
    w /= w.sum()
    return ProbMeasure(index, w)


def make_density(space, S, a1, a2, seed):
    """Random density on ``S`` with ``a1 m <= rho <= a2 m``.

    The density is ``m_i (a1 + s u_i (a2 - a1))`` with ``u_i`` drawn from
    ``[1/2, 1]`` and ``s`` fixed by the mass constraint, or the mirrored form
    anchored at ``a2``. With ``u`` in ``[1/2, 1]`` at least one of the two is
    feasible whenever ``a1 m(S) <= 1 <= a2 m(S)``.
    """
    S = np.unique(np.asarray(S, dtype=np.int64))
    if a1 > a2:
        raise DensityError("a1 must not exceed a2")
    mS = space.m[S]
    M = mS.sum()
    if a1 * M > 1 + 1e-12:
        raise DensityError(f"lower bound infeasible: a1*m(S) = {a1 * M:.6g} > 1")
    if a2 * M < 1 - 1e-12:
        raise DensityError(f"upper bound infeasible: a2*m(S) = {a2 * M:.6g} < 1")
    if len(S) == 1:
        return ProbMeasure(S, np.array([1.0]), (a1, a2))
    if a2 - a1 <= 1e-15 * max(abs(a2), 1.0):
        w = mS / M
        return ProbMeasure(S, w / w.sum(), (a1, a2))
    rng = np.random.default_rng(seed)
    u = 0.5 + 0.5 * rng.random(len(S))
    A = float(np.dot(mS, u))
    span = a2 - a1
    s_lo = (1.0 - a1 * M) / (span * A)
    if s_lo * u.max() <= 1.0:
        w = mS * (a1 + s_lo * u * span)
    else:
        s_hi = (a2 * M - 1.0) / (span * A)
        w = mS * (a2 - s_hi * u * span)
    w = np.clip(w, a1 * mS, a2 * mS)
    w /= w.sum()
    rho = ProbMeasure(S, w, (a1, a2))
    rho.check_density(space.m, rtol=1e-12)
    return rho


# --------------------------------------------------------------------------
# text specification and binary cache


def read_space_spec(path):
    """Parse the line format ``n n_edges`` / ``edge i j len`` / ``mass i v`` / ``meta K N``.

    Masses default to 1 for points without a ``mass`` line.
    """
    with open(path) as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise SpaceError("empty specification")
    head = lines[0].split()
    n, n_edges = int(head[0]), int(head[1])
    edges, lengths = [], []
    m = np.ones(n)
    meta = (0.0, 1.0)
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "edge":
            edges.append((int(tok[1]), int(tok[2])))
            lengths.append(float(tok[3]))
        elif tok[0] == "mass":
            m[int(tok[1])] = float(tok[2])
        elif tok[0] == "meta":
            meta = (float(tok[1]), float(tok[2]))
        else:
            raise SpaceError(f"unknown record {tok[0]!r}")
    if len(edges) != n_edges:
        raise SpaceError(f"header announces {n_edges} edges, found {len(edges)}")
    return build_space(np.array(edges).reshape(-1, 2), np.array(lengths), m, meta)


def save_space(space, path):
    np.savez(
        path,
        version=CACHE_VERSION,
        edges=space.edges,
        lengths=space.lengths,
        m=space.m,
        curvature=np.array(space.curvature),
        coords=np.array([]) if space.coords is None else space.coords,
        mesh=np.nan if space.mesh is None else space.mesh,
        metric=space.metric,
    )


def load_space(path):
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CACHE_VERSION:
            raise SpaceError("cache version mismatch; rebuild from the specification")
        coords = z["coords"] if z["coords"].size else None
        mesh = None if np.isnan(z["mesh"]) else float(z["mesh"])
        metric = str(z["metric"])
        if metric == "euclidean":
            return space_from_points(coords, z["edges"], z["m"], tuple(z["curvature"]), mesh)
        return build_space(z["edges"], z["lengths"], z["m"], tuple(z["curvature"]), coords, mesh)
