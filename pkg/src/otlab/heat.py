"""Measured graph Laplacians, heat kernels and short-time diagnostics."""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from . import kernels

__all__ = [
    "Generator",
    "HeatKernel",
    "LiYauReport",
    "build_generator",
    "heat_kernel",
    "kernel_residuals",
    "varadhan_gap",
    "varadhan_fixed_graph",
    "li_yau_diagnostic",
]

RULES = ("unit", "invlen2")
_TAYLOR_TERMS = 40
_TINY = 1e-280


@dataclass(eq=False)
class Generator:
    """``L_ij = w_ij / m_i`` off the diagonal and zero row sums.

    Attributes
    ----------
    L : ndarray, shape (n, n)
    m : ndarray, shape (n,)
    rule : str
    hop_diameter : int
        Upper bound on the number of edges on a shortest hop path; used to
        make sure the truncated Taylor block reaches every pair.
    """

    L: np.ndarray
    m: np.ndarray
    rule: str
    hop_diameter: int
    _eig: tuple = None

    @property
    def n(self):
        return len(self.m)

    def eig(self):
        """Eigenpairs of the symmetrized generator ``M^{1/2} L M^{-1/2}``."""
        if self._eig is None:
            s = np.sqrt(self.m)
            A = s[:, None] * self.L / s[None, :]
            lam, U = np.linalg.eigh(0.5 * (A + A.T))
            self._eig = (np.minimum(lam, 0.0), U)
        return self._eig


def build_generator(space, rule="invlen2"):
    """Generator of the heat semigroup on ``space``.

    ``rule="unit"`` uses conductance 1 on every edge. ``rule="invlen2"`` uses
    ``w_ij = max(m_i, m_j) / len_ij**2`` so that interior rows of a uniform grid
    carry ``1/h**2`` and half-cells at a boundary get the Neumann stencil.
    """
    if rule not in RULES:
        raise ValueError(f"unknown conductance rule {rule!r}; use one of {RULES}")
    n = space.n
    i, j = space.edges[:, 0], space.edges[:, 1]
    m = space.m
    if rule == "unit":
        w = np.ones(len(i))
    else:
        w = np.maximum(m[i], m[j]) / space.lengths**2
    L = np.zeros((n, n))
    L[i, j] = w / m[i]
    L[j, i] = w / m[j]
    L[np.arange(n), np.arange(n)] = -L.sum(axis=1)
    g = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    ecc = shortest_path(g, directed=False, unweighted=True, indices=[0])[0]
    hop = int(2 * np.max(ecc)) if n > 1 else 0
    return Generator(L, m.copy(), rule, hop)


@dataclass(frozen=True, eq=False)
class HeatKernel:
    """Heat kernel ``p_t`` relative to ``m``: ``(e^{tL})_{xy} = p_t(x, y) m_y``."""

    t: float
    P: np.ndarray
    logP: np.ndarray
    m: np.ndarray
    method: str

    @property
    def n(self):
        return len(self.m)


def _expm_squaring(L, t, hop):
    """``e^{tL}`` for a generator with nonnegative off-diagonal entries.

    Uniformization keeps every partial sum nonnegative, so entries keep
    relative accuracy and cannot cancel to zero. Returns ``(E, logE)`` with
    ``E`` possibly ``None`` if the linear-domain result underflows.
    """
    n = len(L)
    q = float(np.max(-np.diag(L))) if n else 0.0
    k = 0
    if q * t > 0.5:
        k = int(np.ceil(np.log2(q * t / 0.5)))
    while _TAYLOR_TERMS * 2**k < hop:
        k += 1
    tau = t / 2.0**k
    B = tau * (L + q * np.eye(n))
    E = np.eye(n)
    term = np.eye(n)
    for j in range(1, _TAYLOR_TERMS):
        term = term @ B / j
        E += term
        if not np.any(term > 1e-18 * E):
            break
    E *= np.exp(-q * tau)
    E0 = E
    for _ in range(k):
        E = E @ E
    if np.all(E > _TINY):
        with np.errstate(divide="ignore"):
            return E, np.log(E)
    # log-domain squaring for entries beyond double precision range
    with np.errstate(divide="ignore"):
        lE = np.log(E0)
    for _ in range(k):
        lE = kernels.log_matmul(lE, lE)
    return None, lE


def heat_kernel(gen, t, method="auto"):
    """Heat kernel at time ``t``.

    Parameters
    ----------
    gen : Generator
    t : float
        Positive time.
    method : {"auto", "squaring", "spectral"}
        ``"auto"`` is the positivity-preserving scaling-and-squaring
        exponential. ``"spectral"`` reuses one eigendecomposition and is kept
        for cross-checks; small entries there lose relative accuracy.

    Raises
    ------
    ValueError
        If ``t <= 0``.
    """
    if not t > 0:
        raise ValueError("heat kernel time must be positive")
    m = gen.m
    logm = np.log(m)
    if method in ("auto", "squaring"):
        E, lE = _expm_squaring(gen.L, t, gen.hop_diameter)
        logP = lE - logm[None, :]
        logP = 0.5 * (logP + logP.T)
        P = np.exp(logP)
        method = "squaring"
    elif method == "spectral":
        lam, U = gen.eig()
        s = np.sqrt(m)
        A = (U * np.exp(t * lam)[None, :]) @ U.T
        P = A / (s[:, None] * s[None, :])
        P = 0.5 * (P + P.T)
        with np.errstate(divide="ignore", invalid="ignore"):
            logP = np.log(P)
    else:
        raise ValueError(f"unknown method {method!r}")
    return HeatKernel(float(t), P, logP, m, method)


def kernel_residuals(kernel, other=None, composed=None):
    """Invariant residuals of a kernel.

    Returns a dict with ``symmetry``, ``mass`` and ``min_entry``; when
    ``other`` and ``composed`` are given (kernels at ``s`` and ``t`` and at
    ``s + t``) also ``semigroup``.
    """
    P, m = kernel.P, kernel.m
    out = {
        "symmetry": float(np.max(np.abs(P - P.T))),
        "mass": float(np.max(np.abs(P @ m - 1.0))),
        "min_entry": float(np.min(P)),
    }
    if other is not None and composed is not None:
        comp = (P * m[None, :]) @ other.P
        out["semigroup"] = float(np.max(np.abs(comp - composed.P)))
    return out


def _t_of(rule, h):
    if callable(rule):
        return float(rule(h))
    if rule in (None, "h"):
        return float(h)
    if isinstance(rule, str) and rule.endswith("h"):
        return float(rule[:-1]) * h
    return float(rule)


def varadhan_gap(levels, x, y, t_rule="h", rule="invlen2"):
    """Table of ``|-t log p_{t/2}(x, y) - d(x, y)^2 / 2|`` along a refinement.

    Parameters
    ----------
    levels : sequence of Space
        Each level carries ``coords`` and ``mesh``.
    x, y : float or array_like
        Coordinates of the two points; must be grid points of every level.
    t_rule : str or callable
        ``"h"``, ``"2h"``, a constant, or a function of the mesh.

    Returns
    -------
    rows : list of dict
        Keys ``h, t, x, y, gap`` sorted by ``h`` descending.

    Raises
    ------
    KeyError
        If ``x`` or ``y`` is missing from a level.
    """
    rows = []
    for sp in levels:
        ix, iy = sp.nearest(x), sp.nearest(y)
        h = float(sp.mesh)
        t = _t_of(t_rule, h)
        gen = build_generator(sp, rule)
        ker = heat_kernel(gen, t / 2)
        d = sp.dist[ix, iy]
        gap = abs(-t * ker.logP[ix, iy] - 0.5 * d * d)
        rows.append({"h": h, "t": t, "x": ix, "y": iy, "gap": float(gap)})
    rows.sort(key=lambda r: -r["h"])
    return rows


def varadhan_fixed_graph(space, ix, iy, ts, rule="invlen2"):
    """Gap at fixed mesh for decreasing ``t`` (the discrete-limit caveat)."""
    gen = build_generator(space, rule)
    d = space.dist[ix, iy]
    rows = []
    for t in ts:
        ker = heat_kernel(gen, t / 2)
        rows.append({"t": float(t), "gap": float(abs(-t * ker.logP[ix, iy] - 0.5 * d * d))})
    return rows


@dataclass(frozen=True)
class LiYauReport:
    """Per-target Li-Yau comparison at a fixed source point.

    ``lhs[y]`` is the squared discrete gradient in ``x`` of ``log p_{t/2}(., y)``,
    ``rhs[y]`` the displayed bound with ``t = 2 * kernel.t``.
    """

    t: float
    lhs: np.ndarray
    rhs: np.ndarray
    margin: np.ndarray

    @property
    def min_margin(self):
        return float(np.min(self.margin))


def li_yau_diagnostic(gen, kernel, x, space):
    """Report-only Li-Yau comparison; no pass/fail is attached."""
    K, N = space.curvature
    t = 2.0 * kernel.t
    indptr, indices, lengths = space.csr
    nb = indices[indptr[x] : indptr[x + 1]]
    ln = lengths[indptr[x] : indptr[x + 1]]
    logp = kernel.logP
    slopes = np.abs(logp[nb, :] - logp[x, :][None, :]) / ln[:, None]
    lhs = np.max(slopes, axis=0) ** 2
    lap = gen.L[x] @ kernel.P
    ratio = lap / kernel.P[x]
    if K == 0:
        rhs = ratio + N / t
    else:
        e = np.exp(-K * t / 3.0)
        rhs = e * ratio + (N * K / 3.0) * e * e / (1.0 - e)
    return LiYauReport(t, lhs, rhs, rhs - lhs)
