"""Heat-kernel regularized c-transform, its functional and Gibbs conditionals."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .heat import _t_of, build_generator, heat_kernel
from .space import make_density
from .transport import c_transform, cost_matrix, solve_kantorovich

__all__ = [
    "ExtendedPotential",
    "GibbsSystem",
    "KernelTimeError",
    "mcshane_extend",
    "lipschitz_constant",
    "phi_t",
    "k_t",
    "gibbs",
    "first_variation",
    "second_variation",
    "covariance_identity_check",
    "ctransform_limit",
    "marginal_limit",
    "gradient_energy_curve",
]


class KernelTimeError(ValueError):
    """The kernel is not evaluated at half the temperature."""


@dataclass(frozen=True, eq=False)
class ExtendedPotential:
    """``psi`` on ``Y``, its McShane extension and the penalized ``psi_star``."""

    Y: np.ndarray
    psi: np.ndarray
    psi_bar: np.ndarray
    psi_star: np.ndarray
    lip: float
    lam: float


def lipschitz_constant(values, d):
    """``max |f(i) - f(j)| / d(i, j)`` over distinct pairs."""
    diff = np.abs(values[:, None] - values[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(d > 0, diff / d, 0.0)
    return float(np.max(q)) if len(values) > 1 else 0.0


def mcshane_extend(psi, Y, space, D=None):
    """Lipschitz extension of ``psi`` from ``Y`` and ``psi_star = psi_bar - lam d(., Y)``.

    Parameters
    ----------
    psi : array_like
        Values on ``Y`` (same order as ``np.unique(Y)``).
    Y : array_like of int
    space : Space
    D : float, optional
        Diameter entering ``lam = D + lip + 1``; defaults to ``diam(Y)``.
        Pass ``diam(S u Y)`` for the full construction.
    """
    Y = np.asarray(Y, dtype=np.int64)
    order = np.argsort(Y, kind="stable")
    Y = Y[order]
    psi = np.asarray(psi, dtype=np.float64)[order]
    if len(Y) == 0:
        raise ValueError("Y must be nonempty")
    dYY = space.dist_block(Y, Y)
    lip = lipschitz_constant(psi, dYY)
    dYX = space.dist_block(Y, np.arange(space.n))
    psi_bar = kernels.maxplus_extend(psi, lip, np.ascontiguousarray(dYX))
    psi_bar[Y] = psi
    if D is None:
        D = float(dYY.max())
    lam = D + lip + 1.0
    dist_Y = dYX.min(axis=0)
    dist_Y[Y] = 0.0
    return ExtendedPotential(Y, psi, psi_bar, psi_bar - lam * dist_Y, lip, lam)


def _potential(phi):
    if isinstance(phi, ExtendedPotential):
        return phi.psi_star
    return np.asarray(phi, dtype=np.float64)


def _check_time(t, kernel):
    if not t > 0:
        raise ValueError("t must be positive")
    if abs(kernel.t - 0.5 * t) > 1e-12 * t:
        raise KernelTimeError(f"kernel time {kernel.t} differs from t/2 = {0.5 * t}")


def _exponent(phi, t, kernel):
    return np.log(kernel.m) + phi / t


def phi_t(phi, t, kernel, x=None):
    """``Phi_t[phi](x) = -t log sum_y exp(phi(y)/t) p_{t/2}(x, y) m_y``.

    Parameters
    ----------
    phi : ndarray or ExtendedPotential
        Values on all points (``psi_star`` is used for an extension).
    t : float
    kernel : HeatKernel
        Must be evaluated at ``t / 2``.
    x : int or array_like, optional
        Evaluation points; all points by default.
    """
    _check_time(t, kernel)
    f = _potential(phi)
    rows = np.arange(kernel.n) if x is None else np.atleast_1d(np.asarray(x, dtype=np.int64))
    logk = np.ascontiguousarray(kernel.logP[rows])
    out = -t * kernels.lse_rows(logk, _exponent(f, t, kernel))
    return float(out[0]) if np.isscalar(x) or (x is not None and np.ndim(x) == 0) else out


def k_t(phi, t, kernel, rho):
    """``K_t[phi] = sum_x rho_x Phi_t[phi](x)``."""
    vals = phi_t(phi, t, kernel, rho.support)
    return float(np.dot(rho.weights, vals))


@dataclass(frozen=True, eq=False)
class GibbsSystem:
    """Gibbs conditionals ``mu_x`` (rows over ``rho.support``) and their mixture.

    ``Phi`` holds ``Phi_t[phi]`` on the same rows, computed from the same
    log-normalizers as ``mu_x``.
    """

    t: float
    phi: np.ndarray
    kernel: object
    rows: np.ndarray
    rho_weights: np.ndarray
    mu_x: np.ndarray
    marginal: np.ndarray
    Phi: np.ndarray

    def mean(self, v):
        """``E_{mu_x}(v)`` for every row."""
        return self.mu_x @ v

    def var(self, v):
        """``Var_{mu_x}(v)`` for every row, centred before squaring."""
        return _row_var(self.mu_x, v, self.mu_x @ v)


def _row_var(mu, v, e):
    dv = v[None, :] - e[:, None]
    return np.einsum("ij,ij->i", mu, dv * dv)


def gibbs(phi, t, kernel, rho):
    _check_time(t, kernel)
    f = _potential(phi)
    rows = rho.support
    lse, mu = kernels.gibbs_rows(np.ascontiguousarray(kernel.logP[rows]), _exponent(f, t, kernel))
    marginal = rho.weights @ mu
    return GibbsSystem(t, f, kernel, rows, rho.weights, mu, marginal, -t * lse)


def first_variation(phi, t, kernel, rho, v):
    """``d/ds K_t[phi + s v] = -E_{mu^t[phi]}(v)``."""
    g = gibbs(phi, t, kernel, rho)
    return -float(g.marginal @ np.asarray(v, dtype=np.float64))


def second_variation(phi, t, kernel, rho, v):
    """``d^2/ds^2 K_t[phi + s v] = -(1/t) sum_x rho_x Var_{mu_x}(v)``."""
    g = gibbs(phi, t, kernel, rho)
    v = np.asarray(v, dtype=np.float64)
    return -float(np.dot(g.rho_weights, g.var(v))) / t


def covariance_identity_check(phi, t, kernel, v, edge, space):
    """Residual of the edge-difference covariance identity.

    For ``w(y) = log p(x', y) - log p(x, y)`` one has
    ``E_{mu_x'} v - E_{mu_x} v = Cov_{mu_x}(v, e^w) / E_{mu_x} e^w`` exactly.

    Returns
    -------
    residual, lhs, rhs : float

    Raises
    ------
    ValueError
        If ``x`` and ``x'`` are distinct and not adjacent.
    """
    x, xp = int(edge[0]), int(edge[1])
    if x != xp and not space.adjacent(x, xp):
        raise ValueError(f"points {x} and {xp} are not adjacent")
    _check_time(t, kernel)
    f = _potential(phi)
    v = np.asarray(v, dtype=np.float64)
    a = _exponent(f, t, kernel)
    _, mu = kernels.gibbs_rows(np.ascontiguousarray(kernel.logP[[x, xp]]), a)
    lhs = mu[1] @ v - mu[0] @ v
    w = kernel.logP[xp] - kernel.logP[x]
    ew = np.exp(w - w.max())
    Ev, Eew = mu[0] @ v, mu[0] @ ew
    cov = mu[0] @ ((v - Ev) * (ew - Eew))
    rhs = cov / Eew
    return float(abs(lhs - rhs)), float(lhs), float(rhs)


# --------------------------------------------------------------------------
# limits along a refinement family


def ctransform_limit(psi_fn, levels, t_rule="h", rule="invlen2"):
    """Sup gap ``max_{x in S} |Phi_t[psi_star](x) - psi^c(x)|`` per level.

    Parameters
    ----------
    psi_fn : callable
        Maps coordinates of ``Y`` points to ``psi`` values.
    levels : sequence of Level
        Objects with ``space``, ``S``, ``Y`` and ``h`` (see ``otlab.fixtures``).

    Returns
    -------
    list of dict
        Keys ``h, t, sup_gap, osc`` (``osc`` is the oscillation of ``psi^c``
        over ``S``), sorted by ``h`` descending.
    """
    rows = []
    for lev in levels:
        sp = lev.space
        t = _t_of(t_rule, lev.h)
        psi = np.asarray(psi_fn(sp.coords[lev.Y]), dtype=np.float64)
        cost = cost_matrix(sp, lev.S, lev.Y)
        target = c_transform(psi, cost).values
        D = float(sp.dist_block(np.union1d(lev.S, lev.Y), np.union1d(lev.S, lev.Y)).max())
        ext = mcshane_extend(psi, lev.Y, sp, D)
        ker = heat_kernel(build_generator(sp, rule), t / 2)
        vals = phi_t(ext, t, ker, cost.S)
        gap = float(np.max(np.abs(vals - target)))
        rows.append({"h": lev.h, "t": t, "sup_gap": gap, "osc": float(np.ptp(target))})
    rows.sort(key=lambda r: -r["h"])
    return rows


def marginal_limit(nu_fn, levels, v_fn, t_rule="h", rule="invlen2", rho_fn=None):
    """``|E_{mu^t[psi_star]}(v) - E_nu(v)|`` per level.

    ``nu_fn(level)`` returns the target measure on ``Y``; the Kantorovich pair
    between ``rho`` (uniform density on ``S`` unless ``rho_fn`` is given) and
    ``nu`` is solved exactly, its ``Y``-potential is starred by
    ``mcshane_extend`` and the Gibbs mixture is compared with ``nu``.
    """
    rows = []
    for lev in levels:
        sp = lev.space
        t = _t_of(t_rule, lev.h)
        nu = nu_fn(lev)
        if rho_fn is None:
            mS = sp.m[lev.S].sum()
            rho = make_density(sp, lev.S, 1.0 / mS, 1.0 / mS, 0)
        else:
            rho = rho_fn(lev)
        cost = cost_matrix(sp, lev.S, lev.Y)
        pair = solve_kantorovich(rho, nu, cost)
        U = np.union1d(lev.S, lev.Y)
        D = float(sp.dist_block(U, U).max())
        ext = mcshane_extend(pair.psi, cost.Y, sp, D)
        ker = heat_kernel(build_generator(sp, rule), t / 2)
        g = gibbs(ext, t, ker, rho)
        v = np.asarray(v_fn(sp.coords), dtype=np.float64)
        e_nu = float(nu.weights @ v[nu.support])
        gap = abs(float(g.marginal @ v) - e_nu)
        rows.append({"h": lev.h, "t": t, "gap": gap})
    rows.sort(key=lambda r: -r["h"])
    return rows



def gradient_energy_curve(phi, space, x, ts, rule="invlen2"):
    """Report-only curve ``t -> t^2 J_t(x)``.

    ``J_t(x)`` is the ``mu_x^t[phi]`` expectation of the squared discrete
    gradient in ``x`` of ``log p_{t/2}(., y)`` (largest edge slope at ``x``).
    No bound is asserted; on a fixed graph ``t^2 J_t`` need not stay bounded.

    Returns
    -------
    list of dict
        Keys ``t, J, t2J`` in the order of ``ts``.
    """
    from .space import point_mass

    gen = build_generator(space, rule)
    indptr, indices, lengths = space.csr
    nb = indices[indptr[x] : indptr[x + 1]]
    ln = lengths[indptr[x] : indptr[x + 1]]
    rows = []
    for t in ts:
        ker = heat_kernel(gen, t / 2)
        g = gibbs(phi, t, ker, point_mass(x))
        logp = ker.logP
        grad2 = np.max(np.abs(logp[nb, :] - logp[x, :][None, :]) / ln[:, None], axis=0) ** 2
        J = float(g.mu_x[0] @ grad2)
        rows.append({"t": float(t), "J": J, "t2J": float(t * t * J)})
    return rows
