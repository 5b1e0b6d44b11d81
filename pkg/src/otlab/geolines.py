"""Straight-line traces on flat worlds: crossings, semiconcavity, derivative stability."""

from dataclasses import dataclass

import numpy as np
from shapely import affinity
from shapely.geometry import Polygon, box
from shapely.ops import unary_union

from . import kernels

__all__ = [
    "CN",
    "FlatDomain",
    "LineTrace",
    "make_flat_domain",
    "sample_liouville",
    "make_trace",
    "count_components",
    "crossing_count",
    "crossing_counts",
    "crossing_average",
    "semiconcavity_check",
    "deriv_stability_1d",
    "grad_potential_discrepancy",
    "read_polygon",
]

CN = 2.0 * np.pi
WORLDS = ("torus", "square")


@dataclass(frozen=True, eq=False)
class FlatDomain:
    """Polygon ``S`` (counterclockwise vertices) in the unit torus or square."""

    world: str
    vertices: np.ndarray
    perimeter: float
    area_S1: float

    @property
    def torus(self):
        return self.world == "torus"


def make_flat_domain(world, vertices):
    """Domain with exact polygon perimeter and the area of the clipped 1-neighbourhood.

    An empty vertex list gives the empty set.
    """
    if world not in WORLDS:
        raise ValueError(f"world must be one of {WORLDS}")
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    if len(v) == 0:
        return FlatDomain(world, v, 0.0, 0.0)
    if len(v) < 3:
        raise ValueError("polygon needs at least three vertices")
    per = float(np.sum(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)))
    poly = Polygon(v)
    unit = box(0.0, 0.0, 1.0, 1.0)
    if world == "torus":
        shifted = [affinity.translate(poly, dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
        grown = unary_union(shifted).buffer(1.0, quad_segs=64)
    else:
        grown = poly.buffer(1.0, quad_segs=64)
    area = float(min(1.0, grown.intersection(unit).area))
    return FlatDomain(world, v, per, area)


def read_polygon(path):
    """Vertices from a text file of ``x y`` lines."""
    return np.loadtxt(path, ndmin=2)


def sample_liouville(domain, count, seed):
    """Positions uniform on the world and directions uniform on the circle.

    Returns
    -------
    xs, vs : ndarray, shape (count, 2)
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    xs = rng.random((count, 2))
    ang = rng.random(count) * 2 * np.pi
    return xs, np.column_stack([np.cos(ang), np.sin(ang)])


@dataclass(frozen=True, eq=False)
class LineTrace:
    """Samples of ``u`` and of membership along ``s -> x + s v``, ``s`` in ``[0, 1]``."""

    x: np.ndarray
    v: np.ndarray
    s: np.ndarray
    u: np.ndarray
    inside: np.ndarray


def _pip(domain, pts):
    px, py = pts[..., 0], pts[..., 1]
    if domain.torus:
        px, py = np.mod(px, 1.0), np.mod(py, 1.0)
        ins = kernels._pip_numpy(px, py, domain.vertices) if len(domain.vertices) else np.zeros(px.shape, bool)
        return ins
    inworld = (px >= 0) & (px <= 1) & (py >= 0) & (py <= 1)
    if not len(domain.vertices):
        return np.zeros(px.shape, bool)
    return inworld & kernels._pip_numpy(px, py, domain.vertices)


def make_trace(domain, x, v, num=1001, u_fn=None):
    """Uniform ``s``-grid trace; ``u_fn`` maps points ``(k, 2)`` to values."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    s = np.linspace(0.0, 1.0, num)
    pts = x[None, :] + s[:, None] * v[None, :]
    u = np.asarray(u_fn(pts), dtype=np.float64) if u_fn is not None else np.zeros(num)
    return LineTrace(x, v, s, u, _pip(domain, pts))


def count_components(inside):
    """``(#components, #jumps)`` of a sampled membership sequence."""
    inside = np.asarray(inside, dtype=bool)
    if inside.size == 0:
        return 0, 0
    jumps = int(np.count_nonzero(inside[1:] != inside[:-1]))
    starts = int(inside[0]) + int(np.count_nonzero(inside[1:] & ~inside[:-1]))
    return starts, jumps


@dataclass(frozen=True)
class CrossingResult:
    components: int
    total_variation: int
    bound_ok: bool
    flagged: bool = False


def crossing_count(trace_or_domain, x=None, v=None):
    """Components of ``I_S``, jump count and the bound ``#I_S <= 1 + TV/2``.

    Given a ``LineTrace`` the sampled membership is used; given a domain with
    ``x`` and ``v`` the count is exact against the polygon edges.
    """
    if isinstance(trace_or_domain, LineTrace):
        c, tv = count_components(trace_or_domain.inside)
        return CrossingResult(c, tv, c <= 1 + 0.5 * tv, False)
    nc, tv, fl = crossing_counts(trace_or_domain, np.atleast_2d(x), np.atleast_2d(v))
    return CrossingResult(int(nc[0]), int(tv[0]), bool(nc[0] <= 1 + 0.5 * tv[0]), bool(fl[0]))


def crossing_counts(domain, xs, vs):
    """Exact per-trace ``(#I_S, TV, flagged)`` arrays for many traces."""
    return kernels.trace_crossings(xs, vs, domain.vertices, domain.torus)


def crossing_average(domain, count=10_000, seed=0):
    """Monte Carlo ``c_n E[#I_S]`` against ``c_n (area_S1 + Per(S)/2)``."""
    if count < 10_000:
        raise ValueError("at least 10^4 samples are required")
    xs, vs = sample_liouville(domain, count, seed)
    nc, tv, fl = crossing_counts(domain, xs, vs)
    vals = CN * nc
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(count))
    bound = float(CN * (domain.area_S1 + 0.5 * domain.perimeter))
    violations = int(np.count_nonzero(nc > 1 + 0.5 * tv))
    return {
        "mc_mean": mean,
        "se": se,
        "bound": bound,
        "pass": mean + 3 * se <= bound,
        "violations": violations,
        "flagged": int(fl.sum()),
    }


def semiconcavity_check(u, s=None, zeta=0.5, tol=1e-8):
    """Largest centred second difference of ``u(s) - zeta s^2``.

    ``tol`` is absolute; ``pass`` means the value does not exceed it.
    """
    u = np.asarray(u, dtype=np.float64)
    s = np.linspace(0.0, 1.0, len(u)) if s is None else np.asarray(s, dtype=np.float64)
    ds = np.diff(s)
    if len(u) < 3:
        return {"value": -np.inf, "argmax": None, "pass": True}
    if np.ptp(ds) > 1e-9 * ds.mean():
        raise ValueError("s-grid must be uniform")
    w = u - zeta * s * s
    dd = (w[2:] - 2 * w[1:-1] + w[:-2]) / ds.mean() ** 2
    k = int(np.argmax(dd))
    return {"value": float(dd[k]), "argmax": float(s[k + 1]), "pass": bool(dd[k] <= tol)}


def _trap(y, h):
    return h * (y.sum() - 0.5 * (y[0] + y[-1]))


def deriv_stability_1d(u, v, grid, convex_tol=1e-12):
    """``||u' - v'||^2`` against ``8 (||u'||_inf + ||v'||_inf)^{4/3} ||u - v||^{2/3}``.

    Samples are read as piecewise-linear functions: derivatives are one-sided
    cell slopes, so the derivative terms are exact for the interpolant, while
    ``||u - v||`` uses trapezoid quadrature, which never underestimates the
    interpolant's norm.

    Raises
    ------
    ValueError
        If ``u`` or ``v`` has a second difference below ``-convex_tol``
        (relative to ``max(1, max |u|)``).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    h = np.diff(grid)
    if np.ptp(h) > 1e-9 * h.mean():
        raise ValueError("grid must be uniform")
    h = float(h.mean())
    du, dv = np.diff(u) / h, np.diff(v) / h
    for name, f in (("u", u), ("v", v)):
        scale = max(1.0, float(np.abs(f).max()))
        if len(f) > 2 and np.any(f[2:] - 2 * f[1:-1] + f[:-2] < -convex_tol * scale):
            raise ValueError(f"{name} is not convex on the grid")
    lhs = float(h * np.sum((du - dv) ** 2))
    sup = float(np.abs(du).max() + np.abs(dv).max())
    l2 = float(np.sqrt(max(_trap((u - v) ** 2, h), 0.0)))
    rhs = 8.0 * sup ** (4.0 / 3.0) * l2 ** (2.0 / 3.0)
    return {"lhs": lhs, "rhs": rhs, "pass": lhs <= rhs * (1 + 1e-12), "slack": rhs - lhs}


def _masked_gradient(f, mask, h):
    """Central differences inside ``mask``, one-sided where one neighbour is missing."""
    g = np.zeros(f.shape + (2,))
    for ax in (0, 1):
        fp = np.roll(f, -1, axis=ax)
        fm = np.roll(f, 1, axis=ax)
        mp = np.roll(mask, -1, axis=ax)
        mm = np.roll(mask, 1, axis=ax)
        idx = np.arange(f.shape[ax])
        last = np.expand_dims(idx == f.shape[ax] - 1, 1 - ax)
        first = np.expand_dims(idx == 0, 1 - ax)
        mp = mp & ~last
        mm = mm & ~first
        both = mp & mm
        only_p = mp & ~mm
        only_m = mm & ~mp
        d = np.zeros(f.shape)
        d[both] = (fp - fm)[both] / (2 * h)
        d[only_p] = (fp - f)[only_p] / h
        d[only_m] = (f - fm)[only_m] / h
        g[..., ax] = np.where(mask, d, 0.0)
    return g


def grad_potential_discrepancy(shape, h, S_flat, phi_mu, phi_nu, rho):
    """``int_S |grad phi_mu - grad phi_nu|^2 drho`` and ``(int_S |phi_mu - phi_nu|^2 drho)^{1/3}``.

    Parameters
    ----------
    shape : tuple
        Grid shape ``(nx, ny)`` with row-major flattening.
    h : float
        Grid spacing.
    S_flat : ndarray of int
        Flat indices of ``S`` (sorted); ``phi_mu``, ``phi_nu`` and ``rho``
        are given on these points in the same order.
    """
    S_flat = np.asarray(S_flat, dtype=np.int64)
    mask = np.zeros(shape, dtype=bool).ravel()
    mask[S_flat] = True
    mask = mask.reshape(shape)
    diff = np.zeros(int(np.prod(shape)))
    diff[S_flat] = np.asarray(phi_mu) - np.asarray(phi_nu)
    g = _masked_gradient(diff.reshape(shape), mask, h).reshape(-1, 2)[S_flat]
    r = np.asarray(rho, dtype=np.float64)
    lhs = float(np.dot(r, np.sum(g * g, axis=1)))
    l2sq = float(np.dot(r, diff[S_flat] ** 2))
    return {"lhs": lhs, "rhs_base": l2sq ** (1.0 / 3.0), "l2_gap": np.sqrt(l2sq)}
