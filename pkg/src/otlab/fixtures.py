"""Fixture families shared by tests, experiments and the CLI."""

from dataclasses import dataclass

import numpy as np

from .space import build_space, space_from_points

__all__ = [
    "Level",
    "interval_space",
    "interval_level",
    "interval_family",
    "cycle_space",
    "grid_graph",
    "grid2d",
    "grid_square_domain",
    "cusp_domain",
    "regular_polygon",
]


@dataclass(frozen=True, eq=False)
class Level:
    """One refinement level: space, sorted ``S`` and ``Y``, mesh ``h``."""

    space: object
    S: np.ndarray
    Y: np.ndarray
    h: float


def interval_space(n):
    """``[0, 1]`` with ``n`` cells: nodes ``i/n`` and trapezoid masses."""
    h = 1.0 / n
    x = np.arange(n + 1) * h
    m = np.full(n + 1, h)
    m[0] = m[-1] = 0.5 * h
    edges = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return build_space(edges, np.full(n, h), m, (0.0, 1.0), coords=x[:, None], mesh=h)


def interval_level(n, s_max=0.375, y_min=0.625):
    sp = interval_space(n)
    x = sp.coords[:, 0]
    tol = 1e-12
    S = np.flatnonzero(x <= s_max + tol)
    Y = np.flatnonzero(x >= y_min - tol)
    return Level(sp, S, Y, sp.mesh)


def interval_family(ns=(32, 64, 128, 256), s_max=0.375, y_min=0.625):
    return [interval_level(n, s_max, y_min) for n in ns]


def cycle_space(n, length=1.0):
    edges = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    return build_space(edges, np.full(n, length), np.ones(n), (0.0, 1.0))


def _grid_edges(nx, ny):
    idx = np.arange(nx * ny).reshape(nx, ny)
    e1 = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    e2 = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    return np.vstack([e1, e2])


def grid_graph(nx, ny=None, spacing=1.0, masses="unit"):
    """4-neighbour grid with the graph (L1) metric; point ``(i, j)`` is ``i*ny + j``."""
    ny = nx if ny is None else ny
    edges = _grid_edges(nx, ny)
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    coords = np.column_stack([ii.ravel(), jj.ravel()]) * spacing
    m = np.ones(nx * ny) if masses == "unit" else np.full(nx * ny, spacing**2)
    return build_space(edges, np.full(len(edges), spacing), m, (0.0, 2.0), coords=coords, mesh=spacing)


def grid2d(n):
    """Uniform ``n x n`` grid on ``[0, 1]^2`` with the Euclidean metric.

    Masses are trapezoid weights; the stencil is 4-neighbour.
    """
    h = 1.0 / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    m = np.outer(w, w).ravel()
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    coords = np.column_stack([ii.ravel(), jj.ravel()]) * h
    return space_from_points(coords, _grid_edges(n, n), m, (0.0, 2.0), mesh=h)


def grid_square_domain(k=16, pad=2):
    """``k x k`` block ``S`` inside a padded grid graph of spacing ``1/(k-1)``.

    Returns ``(space, S, center)`` with ``center`` the block point nearest the
    middle.
    """
    n = k + 2 * pad
    h = 1.0 / (k - 1)
    sp = grid_graph(n, n, spacing=h, masses="area")
    ii, jj = np.divmod(np.arange(n * n), n)
    inside = (ii >= pad) & (ii < pad + k) & (jj >= pad) & (jj < pad + k)
    S = np.flatnonzero(inside)
    c = pad + (k - 1) // 2
    return sp, S, c * n + c


def cusp_domain(depth, body=8, pad=2, power=2.0):
    """Square body with a tapering tail of ``depth`` cells on a grid graph.

    The tail's half-width at distance ``s`` from its tip is proportional to
    ``s**power`` (a discrete cusp) and at least zero cells, so the tail narrows
    to a single-cell corridor. Returns ``(space, S, center)``.
    """
    h = 1.0 / (body - 1)
    nx = body + depth + 2 * pad
    ny = body + 2 * pad
    sp = grid_graph(nx, ny, spacing=h, masses="area")
    ii, jj = np.divmod(np.arange(nx * ny), ny)
    bi, bj = ii - pad, jj - pad
    in_body = (bi >= 0) & (bi < body) & (bj >= 0) & (bj < body)
    mid = (body - 1) / 2.0
    s = (body + depth - 1) - bi  # distance from tail tip in cells
    halfw = np.floor(mid * (s / max(depth, 1)) ** power)
    in_tail = (bi >= body) & (bi < body + depth) & (np.abs(bj - mid) <= np.maximum(halfw, 0.5))
    S = np.flatnonzero(in_body | in_tail)
    c = int(pad + (body - 1) // 2)
    return sp, S, c * ny + c


def regular_polygon(center, radius, k=256):
    ang = 2 * np.pi * np.arange(k) / k
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
