"""Exact discrete optimal transport by linear programming."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, vstack

from .space import ProbMeasure

__all__ = [
    "CostMatrix",
    "PotentialPair",
    "TransportMap",
    "CTransform",
    "TransportError",
    "cost_matrix",
    "solve_kantorovich",
    "c_transform",
    "cbar_transform",
    "wasserstein1",
    "extract_map",
    "map_discrepancy",
    "MAX_LP_ENTRIES",
]

MAX_LP_ENTRIES = 250_000
KINDS = ("halfsq", "dist")


class TransportError(RuntimeError):
    """LP failure or a plan that is not a map."""


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """``C[i, j] = c(S[i], Y[j])`` for ``kind`` in ``{"halfsq", "dist"}``."""

    S: np.ndarray
    Y: np.ndarray
    C: np.ndarray
    kind: str


def cost_matrix(space, S, Y, kind="halfsq"):
    if kind not in KINDS:
        raise ValueError(f"unknown cost kind {kind!r}")
    S = np.unique(np.asarray(S, dtype=np.int64))
    Y = np.unique(np.asarray(Y, dtype=np.int64))
    d = space.dist_block(S, Y)
    C = 0.5 * d * d if kind == "halfsq" else d.copy()
    return CostMatrix(S, Y, C, kind)


@dataclass(frozen=True)
class CTransform:
    """Values of ``psi^c`` on the rows of a cost and the argmin set per row."""

    values: np.ndarray
    argmin: list


def _ctrans(psi, C):
    return np.min(C - psi[None, :], axis=1)


def c_transform(psi, cost, tol=1e-12):
    """``psi^c(x) = min_y c(x, y) - psi(y)`` with argmin sets (column positions)."""
    psi = np.asarray(psi, dtype=np.float64)
    Z = cost.C - psi[None, :]
    vals = np.min(Z, axis=1)
    scale = tol * np.maximum(1.0, np.abs(vals))
    arg = [np.flatnonzero(Z[i] <= vals[i] + scale[i]) for i in range(len(vals))]
    return CTransform(vals, arg)


def cbar_transform(phi, cost):
    """``phi^cbar(y) = min_x c(x, y) - phi(x)`` over the rows of ``cost``."""
    phi = np.asarray(phi, dtype=np.float64)
    return np.min(cost.C - phi[:, None], axis=0)


@dataclass(frozen=True, eq=False)
class PotentialPair:
    """Normalized Kantorovich potentials with the optimal plan.

    ``phi`` lives on ``cost.S`` and ``psi`` on ``cost.Y``; ``plan`` is dense
    over ``cost.S x cost.Y``. ``value`` is the primal optimum and
    ``dual_value`` the dual objective of ``(phi, psi)``.
    """

    phi: np.ndarray
    psi: np.ndarray
    plan: np.ndarray
    value: float
    dual_value: float
    rho: ProbMeasure
    target: ProbMeasure
    cost: CostMatrix
    w1: float = None

    def residuals(self):
        """Feasibility, tightness, marginal and normalization residuals."""
        C = self.cost.C
        slack = C - self.phi[:, None] - self.psi[None, :]
        tight = self.plan > 0
        r = self.rho.on(self.cost.S)
        mu = self.target.on(self.cost.Y)
        return {
            "feasibility": float(max(0.0, -slack.min())),
            "tightness": float(np.max(np.abs(slack[tight]))) if tight.any() else 0.0,
            "marginal": float(
                max(np.abs(self.plan.sum(1) - r).max(), np.abs(self.plan.sum(0) - mu).max())
            ),
            "normalization": float(abs(np.dot(r, self.phi))),
            "duality_gap": float(abs(self.value - self.dual_value)),
        }


def _lp(a, b, C):
    """Balanced transport LP with duals; rows ``a``, columns ``b`` positive."""
    ns, ny = C.shape
    rows = np.repeat(np.arange(ns), ny)
    cols = np.arange(ns * ny)
    A_row = coo_matrix((np.ones(ns * ny), (rows, cols)), shape=(ns, ns * ny))
    rows = np.tile(np.arange(ny), ns)
    A_col = coo_matrix((np.ones(ns * ny), (rows, cols)), shape=(ny, ns * ny))
    A = vstack([A_row, A_col]).tocsr()
    # one redundant constraint: rescale b so both marginals carry equal mass
    b = b * (a.sum() / b.sum())
    res = linprog(
        C.ravel(),
        A_eq=A,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10, "presolve": True},
    )
    if res.status != 0:
        raise TransportError(f"LP failed: {res.message}")
    duals = res.eqlin.marginals
    plan = np.maximum(res.x.reshape(ns, ny), 0.0)
    return plan, duals[:ns], duals[ns:]


def solve_kantorovich(rho, target, cost):
    """Exact optimal plan and normalized potentials.

    The LP runs on ``supp(rho) x supp(target)``. Its column duals give ``psi``
    on the target support; then ``phi = psi^c``, shifted so that
    ``E_rho(phi) = 0``, ``psi = phi^cbar`` on all of ``Y`` (over the rows in
    ``supp(rho)``) and finally ``phi = psi^c`` on all of ``S``. On
    ``supp(rho)`` this reproduces the LP potentials.

    Raises
    ------
    ValueError
        Supports outside ``cost.S`` / ``cost.Y`` or too many LP entries.
    TransportError
        LP failure.
    """
    rho_p, tgt_p = rho.positive(), target.positive()
    r_full = rho.on(cost.S)
    t_full = target.on(cost.Y)
    R = np.flatnonzero(r_full > 0)
    Q = np.flatnonzero(t_full > 0)
    if len(R) * len(Q) > MAX_LP_ENTRIES:
        raise ValueError(
            f"LP has {len(R)}x{len(Q)} entries, above the cap of {MAX_LP_ENTRIES}; "
            "coarsen the fixture or shrink the supports"
        )
    C = cost.C
    Csub = C[np.ix_(R, Q)]
    plan_sub, _, v = _lp(r_full[R], t_full[Q], Csub)
    phi_R = np.min(Csub - v[None, :], axis=1)
    shift = np.dot(r_full[R], phi_R)
    phi_R -= shift
    psi = np.min(C[R, :] - phi_R[:, None], axis=0)
    phi = _ctrans(psi, C)
    phi -= np.dot(r_full, phi)
    plan = np.zeros(C.shape)
    plan[np.ix_(R, Q)] = plan_sub
    value = float(np.sum(plan_sub * Csub))
    dual = float(np.dot(r_full, phi) + np.dot(t_full, psi))
    return PotentialPair(phi, psi, plan, value, dual, rho_p, tgt_p, cost)


def wasserstein1(mu, nu, space):
    """Exact ``W_1`` with the distance cost on the union of supports."""
    U = np.union1d(mu.support, nu.support)
    C = space.dist_block(U, U)
    a, b = mu.on(U), nu.on(U)
    R, Q = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    if len(R) * len(Q) > MAX_LP_ENTRIES:
        raise ValueError("W1 problem above the LP size cap")
    plan, _, _ = _lp(a[R], b[Q], C[np.ix_(R, Q)])
    return float(np.sum(plan * C[np.ix_(R, Q)]))


@dataclass(frozen=True, eq=False)
class TransportMap:
    """``assignment[i]`` is the global target index of ``S[i]``."""

    S: np.ndarray
    assignment: np.ndarray
    split_mass: float


def extract_map(pair, tolerance=0.01, strict=False):
    """Row-wise argmax of the plan; rows outside ``supp(rho)`` use ``psi^c`` argmins.

    Raises
    ------
    TransportError
        ``strict`` and ``split_mass > tolerance`` ("plan not deterministic").
    """
    plan = pair.plan
    rowmax = plan.max(axis=1)
    split = float(min(1.0, max(0.0, 1.0 - rowmax.sum())))
    if strict and split > tolerance:
        raise TransportError(f"plan not deterministic: split mass {split:.3g} > {tolerance}")
    arg = np.argmax(plan, axis=1)
    empty = rowmax <= 0
    if empty.any():
        Z = pair.cost.C[empty] - pair.psi[None, :]
        arg[empty] = np.argmin(Z, axis=1)
    return TransportMap(pair.cost.S, pair.cost.Y[arg], split)


def map_discrepancy(pair_mu, pair_nu, rho, space, tolerance=0.01):
    """``sum_x rho_x d(T_mu(x), T_nu(x))^2`` over ``supp(rho)``."""
    Tm = pair_mu if isinstance(pair_mu, TransportMap) else extract_map(pair_mu, tolerance, strict=True)
    Tn = pair_nu if isinstance(pair_nu, TransportMap) else extract_map(pair_nu, tolerance, strict=True)
    if not np.array_equal(Tm.S, Tn.S):
        raise ValueError("maps live on different source sets")
    r = rho.on(Tm.S)
    k = r > 0
    a, b = Tm.assignment[k], Tn.assignment[k]
    if space.metric == "euclidean" and space._dist is None:
        d = np.linalg.norm(space.coords[a] - space.coords[b], axis=1)
    else:
        d = space.dist[a, b]
    return float(np.dot(r[k], d * d))
