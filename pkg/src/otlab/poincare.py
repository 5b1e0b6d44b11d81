"""Local Poincare constants, Boman chain covers and the gluing inequality."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .space import ball

__all__ = [
    "PoincareResult",
    "BomanCover",
    "CoverError",
    "local_poincare_constant",
    "discrete_gradient",
    "boman_cover",
    "verify_cover",
    "gluing_check",
    "global_concavity_probe",
    "cover_to_text",
    "cover_from_text",
]


class CoverError(RuntimeError):
    """A Boman condition failed; carries the condition name and a witness."""

    def __init__(self, condition, witness):
        super().__init__(f"{condition} violated: {witness}")
        self.condition = condition
        self.witness = witness


def _sub_edges(space, idx):
    """Directed edges ``(a, b, len)`` of the subgraph induced on ``idx`` (local indices)."""
    indptr, indices, lengths = space.csr
    pos = -np.ones(space.n, dtype=np.int64)
    pos[idx] = np.arange(len(idx))
    src, dst, ln = [], [], []
    for a, i in enumerate(idx):
        nb = indices[indptr[i] : indptr[i + 1]]
        ll = lengths[indptr[i] : indptr[i + 1]]
        k = pos[nb] >= 0
        src.extend([a] * int(k.sum()))
        dst.extend(pos[nb[k]].tolist())
        ln.extend(ll[k].tolist())
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(ln)


def discrete_gradient(f, src, dst, ln, n):
    """Max incident edge slope ``|f(j) - f(i)| / len`` per point."""
    out = np.zeros(n)
    if len(src):
        np.maximum.at(out, src, np.abs(f[dst] - f[src]) / ln)
    return out


@dataclass(frozen=True)
class PoincareResult:
    C: float
    witness: np.ndarray
    ball: np.ndarray
    mip_gap: float


def local_poincare_constant(space, rho, B, r0):
    """Smallest ``C`` with ``int_B |f - f_B| drho_B <= C r0 int_B |grad f| drho_B``.

    The maximization of the convex objective is solved exactly as a
    mixed-integer program: ``|f_i| = p_i + q_i`` with a binary sign per point
    and big-M switching, the gauge ``E_{rho_B} f = 0`` and the constraint
    ``int |grad f| drho_B <= 1``. ``grad`` is the max edge slope over edges
    inside ``B``.

    Parameters
    ----------
    space : Space
    rho : ndarray
        Dense weights on all points.
    B : array_like of int
        Ball points.
    r0 : float
        Scale.

    Raises
    ------
    ValueError
        Fewer than two points with positive weight ("Poincare undefined").
    """
    B = np.unique(np.asarray(B, dtype=np.int64))
    w = np.asarray(rho, dtype=np.float64)[B]
    keep = w > 0
    B, w = B[keep], w[keep]
    if len(B) < 2:
        raise ValueError("Poincare undefined: ball needs at least two points")
    w = w / w.sum()
    n = len(B)
    src, dst, ln = _sub_edges(space, B)
    # variables: f (n), g (n), p (n), q (n), z (n)
    nv = 5 * n
    F, G, P, Q, Z = (np.arange(n) + k * n for k in range(5))
    rows, cols, vals, lo, hi = [], [], [], [], []
    r = 0
    for e in range(len(src)):
        a, b, le = src[e], dst[e], ln[e]
        for sgn in (1.0, -1.0):
            # g_a - sgn (f_b - f_a)/le >= 0
            rows += [r, r, r]
            cols += [G[a], F[b], F[a]]
            vals += [1.0, -sgn / le, sgn / le]
            lo.append(0.0)
            hi.append(np.inf)
            r += 1
    rows += [r] * n
    cols += list(G)
    vals += list(w)
    lo.append(-np.inf)
    hi.append(1.0)
    r += 1
    rows += [r] * n
    cols += list(F)
    vals += list(w)
    lo.append(0.0)
    hi.append(0.0)
    r += 1
    M = float(ln.sum() / w.min()) if len(ln) else 1.0
    for i in range(n):
        rows += [r, r, r]
        cols += [F[i], P[i], Q[i]]
        vals += [1.0, -1.0, 1.0]
        lo.append(0.0)
        hi.append(0.0)
        r += 1
        rows += [r, r]
        cols += [P[i], Z[i]]
        vals += [1.0, -M]
        lo.append(-np.inf)
        hi.append(0.0)
        r += 1
        rows += [r, r]
        cols += [Q[i], Z[i]]
        vals += [1.0, M]
        lo.append(-np.inf)
        hi.append(M)
        r += 1
    A = coo_matrix((vals, (rows, cols)), shape=(r, nv)).tocsr()
    c = np.zeros(nv)
    c[P] = -w
    c[Q] = -w
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    lb[F] = -np.inf
    ub[Z] = 1.0
    integrality = np.zeros(nv)
    integrality[Z] = 1
    res = milp(
        c,
        constraints=LinearConstraint(A, lo, hi),
        integrality=integrality,
        bounds=Bounds(lb, ub),
        options={"mip_rel_gap": 0.0, "presolve": True},
    )
    if res.status != 0:
        raise RuntimeError(f"Poincare program failed: {res.message}")
    f = res.x[F]
    num = float(np.dot(w, np.abs(f - np.dot(w, f))))
    den = float(np.dot(w, discrete_gradient(f, src, dst, ln, n)))
    C = num / (r0 * den)
    gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
    return PoincareResult(C, f, B, gap)


# --------------------------------------------------------------------------
# Boman covers


@dataclass(eq=False)
class BomanCover:
    """Ball cover of ``S`` with chains to the central ball and certified constants.

    ``points[k]`` is ball ``k`` intersected with ``S``; ``chains[k]`` lists
    ball positions from the central ball to ``k``.
    """

    centers: np.ndarray
    radii: np.ndarray
    points: list
    central_index: int
    chains: list
    S: np.ndarray
    E: float = 1.0
    F: float = 1.0
    G: float = 1.0
    beta: float = 1.0
    witnesses: dict = field(default_factory=dict)

    @property
    def C5(self):
        return c5(self.E, self.F, self.G, self.beta)


def c5(E, F, G, beta):
    """``2 (1 + 2 beta^2 E F^{log beta / log 2} G)``."""
    return 2.0 * (1.0 + 2.0 * beta**2 * E * F ** (np.log(beta) / np.log(2.0)) * G)


def _in_S(space, S, center, r):
    return np.intersect1d(ball(space, center, r), S, assume_unique=True)


def _mass(rho, idx):
    return float(rho[idx].sum())


def boman_cover(space, S, rho, john_center, eta=None, mesh=None, shrink=10.0, cap=1.0):
    """Whitney-type cover of ``S`` with certified Boman constants.

    Radii are ``min(cap, max(h, d(x, S^c) / shrink))``. Balls are added greedily
    (John center first, then ``S`` in index order) whenever their center is not
    yet covered. Chains follow shortest paths in the overlap graph of the
    balls, weighted by center distances, with lowest-index predecessors on
    ties. The constants are the certified maxima, and ``verify_cover`` is run
    before returning.

    Parameters
    ----------
    rho : ndarray
        Dense density on all points, positive on ``S``.
    eta : float, optional
        John constant annotation; recorded only.
    """
    S = np.unique(np.asarray(S, dtype=np.int64))
    rho = np.asarray(rho, dtype=np.float64)
    if john_center not in set(S.tolist()):
        raise ValueError("john_center must lie in S")
    h = float(mesh if mesh is not None else (space.mesh or space.lengths.min()))
    Sc = np.setdiff1d(np.arange(space.n), S)
    if len(Sc):
        dSc = space.dist_block(S, Sc).min(axis=1)
    else:
        dSc = np.full(len(S), np.inf)
    radius = np.minimum(cap, np.maximum(h, dSc / shrink))
    pos = {int(p): k for k, p in enumerate(S)}
    order = [john_center] + [int(p) for p in S if p != john_center]
    covered = np.zeros(space.n, dtype=bool)
    centers, radii, points = [], [], []
    for p in order:
        if covered[p]:
            continue
        r = float(radius[pos[p]])
        pts = _in_S(space, S, p, r)
        centers.append(p)
        radii.append(r)
        points.append(pts)
        covered[pts] = True
    centers = np.array(centers, dtype=np.int64)
    radii = np.array(radii)
    chains = _chains(space, centers, points, rho)
    cover = BomanCover(centers, radii, points, 0, chains, S, witnesses={"eta": eta})
    _certify(space, cover, rho)
    verify_cover(space, cover, rho)
    return cover


def _chains(space, centers, points, rho):
    nb = len(centers)
    ii, jj, ww = [], [], []
    member = [set(p.tolist()) for p in points]
    dcc = space.dist_block(centers, centers)
    for i in range(nb):
        for j in range(i + 1, nb):
            common = np.fromiter(member[i] & member[j], dtype=np.int64)
            if len(common) and rho[common].sum() > 0:
                ii += [i, j]
                jj += [j, i]
                ww += [dcc[i, j]] * 2
    g = coo_matrix((ww, (ii, jj)), shape=(nb, nb)).tocsr()
    dist = dijkstra(g, directed=True, indices=0)
    if not np.all(np.isfinite(dist)):
        bad = int(np.flatnonzero(~np.isfinite(dist))[0])
        raise CoverError("chain connectivity", {"ball": bad})
    adj = [[] for _ in range(nb)]
    for a, b, w in zip(ii, jj, ww):
        adj[b].append((a, w))
    pred = -np.ones(nb, dtype=np.int64)
    for k in range(1, nb):
        tol = 1e-12 * max(1.0, dist[k])
        cands = sorted(a for a, w in adj[k] if dist[a] < dist[k] and abs(dist[a] + w - dist[k]) <= tol)
        pred[k] = cands[0]
    chains = []
    for k in range(nb):
        ch = [k]
        while ch[-1] != 0:
            ch.append(int(pred[ch[-1]]))
        chains.append(ch[::-1])
    return chains


def _needed(space, cover, rho):
    """Smallest constants for which conditions 1-3 and doubling hold, with witnesses."""
    S = cover.S
    cnt = np.zeros(space.n, dtype=np.int64)
    for c, r in zip(cover.centers, cover.radii):
        cnt[_in_S(space, S, c, 2 * r)] += 1
    E = int(cnt[S].max())
    wE = int(S[np.argmax(cnt[S])])
    F, wF = 1.0, None
    for k, ch in enumerate(cover.chains):
        pts = cover.points[k]
        for j in ch[:-1]:
            need = float(space.dist_block([cover.centers[j]], pts).max() / cover.radii[j])
            if need > F:
                F, wF = need, (k, j)
    G, wG = 1.0, None
    seen = set()
    for ch in cover.chains:
        for a, b in zip(ch[:-1], ch[1:]):
            if (a, b) in seen:
                continue
            seen.add((a, b))
            common = np.intersect1d(cover.points[a], cover.points[b], assume_unique=True)
            num = max(_mass(rho, cover.points[a]), _mass(rho, cover.points[b]))
            den = _mass(rho, common)
            need = np.inf if den <= 0 else num / den
            if need > G:
                G, wG = float(need), (a, b)
    beta, wB = 1.0, None
    for k, (c, r) in enumerate(zip(cover.centers, cover.radii)):
        rr = r
        while True:
            inner = _mass(rho, _in_S(space, S, c, rr))
            outer = _mass(rho, _in_S(space, S, c, 2 * rr))
            q = outer / inner
            if q > beta:
                beta, wB = q, (k, rr)
            if rr >= F * r:
                break
            rr *= 2.0
    return (float(E), F, G, beta), {"E": wE, "F": wF, "G": wG, "beta": wB}


def _certify(space, cover, rho):
    (E, F, G, beta), wit = _needed(space, cover, rho)
    cover.E, cover.F, cover.G, cover.beta = E, F, G, beta
    cover.witnesses.update(wit)


def verify_cover(space, cover, rho, rtol=1e-12):
    """Re-check conditions 1-3 and the doubling bound; raise ``CoverError`` on failure.

    Doubling is checked on every ball used, over the dilation ladder
    ``r, 2r, 4r, ...`` up to ``F r``.
    """
    S = cover.S
    covered = np.zeros(space.n, dtype=bool)
    for pts in cover.points:
        covered[pts] = True
    if not covered[S].all():
        raise CoverError("covering", {"point": int(S[~covered[S]][0])})
    if np.any(cover.radii > 1.0 + rtol):
        raise CoverError("radius cap", {"ball": int(np.argmax(cover.radii))})
    for k, ch in enumerate(cover.chains):
        if ch[0] != cover.central_index or ch[-1] != k:
            raise CoverError("chain endpoints", {"ball": k})
    (E, F, G, beta), wit = _needed(space, cover, rho)
    for name, need, have in (("condition 1 (E)", E, cover.E), ("condition 2 (F)", F, cover.F),
                             ("condition 3 (G)", G, cover.G), ("doubling (beta)", beta, cover.beta)):
        if need > have * (1 + rtol):
            raise CoverError(name, {"needed": need, "certified": have, "at": wit[name.split("(")[1][:-1]]})
    return True


def gluing_check(cover, rho, f):
    """Compare ``int_S |f - E_rho f| drho`` with ``C5 sum_B rho(B) int_B |f - f_B| drho_B``.

    ``rho`` and ``f`` are dense over all points; ``rho`` is normalized on ``S``.
    """
    rho = np.asarray(rho, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    S = cover.S
    w = rho[S] / rho[S].sum()
    lhs = float(np.dot(w, np.abs(f[S] - np.dot(w, f[S]))))
    total = rho[S].sum()
    rhs_sum = 0.0
    for pts in cover.points:
        wb = rho[pts]
        mb = wb.sum()
        if mb <= 0:
            continue
        wb = wb / mb
        rhs_sum += (mb / total) * float(np.dot(wb, np.abs(f[pts] - np.dot(wb, f[pts]))))
    C5 = cover.C5
    bound = C5 * rhs_sum
    ok = lhs <= bound + 1e-12 * max(1.0, abs(bound))
    slack = np.inf if lhs == 0 else bound / lhs
    return {"lhs": lhs, "rhs_sum": rhs_sum, "C5": C5, "pass": bool(ok), "slack": float(slack)}


def global_concavity_probe(gibbs_system, vs, cover=None):
    """Empirical constant in ``lhs <= (kappa / sqrt t) (sum rho Var_{mu_x} v)^{1/2}``.

    Parameters
    ----------
    gibbs_system : GibbsSystem
    vs : ndarray, shape (k, n) or (n,)
        Observables on all points.
    cover : BomanCover, optional
        Only recorded (its ``C5``) for comparison.

    Returns
    -------
    dict
        ``lhs``, ``rhs_base`` (without kappa), ``ratio`` arrays and ``kappa``
        (max finite ratio).
    """
    g = gibbs_system
    vs = np.atleast_2d(np.asarray(vs, dtype=np.float64))
    w = g.rho_weights
    lhs, rhs = [], []
    for v in vs:
        e = g.mu_x @ v
        lhs.append(float(np.dot(w, np.abs(e - g.marginal @ v))))
        var = g.var(v)
        rhs.append(float(np.sqrt(max(np.dot(w, var), 0.0)) / np.sqrt(g.t)))
    lhs, rhs = np.array(lhs), np.array(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, 0.0)
    out = {"lhs": lhs, "rhs_base": rhs, "ratio": ratio, "kappa": float(ratio.max()) if len(ratio) else 0.0}
    if cover is not None:
        out["C5"] = cover.C5
    return out


# --------------------------------------------------------------------------
# text form


def cover_to_text(cover):
    lines = []
    for k, (c, r) in enumerate(zip(cover.centers, cover.radii)):
        chain = " ".join(str(int(cover.centers[j])) for j in cover.chains[k])
        lines.append(f"{int(c)} {float(r)!r} chain: {chain}")
    lines.append("constants " + " ".join(repr(float(v)) for v in (cover.E, cover.F, cover.G, cover.beta)))
    return "\n".join(lines) + "\n"


def cover_from_text(text, space, S):
    """Rebuild a cover from its text form; constants are taken as stored."""
    S = np.unique(np.asarray(S, dtype=np.int64))
    centers, radii, chains_c = [], [], []
    consts = None
    for ln in text.strip().splitlines():
        if ln.startswith("constants"):
            consts = [float(x) for x in ln.split()[1:]]
            continue
        head, chain = ln.split("chain:")
        c, r = head.split()
        centers.append(int(c))
        radii.append(float(r))
        chains_c.append([int(x) for x in chain.split()])
    idx = {c: k for k, c in enumerate(centers)}
    chains = [[idx[c] for c in ch] for ch in chains_c]
    points = [_in_S(space, S, c, r) for c, r in zip(centers, radii)]
    cov = BomanCover(np.array(centers), np.array(radii), points, 0, chains, S)
    if consts is not None:
        cov.E, cov.F, cov.G, cov.beta = consts
    return cov
