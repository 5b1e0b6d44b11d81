"""Stability experiments, exponent fits and report output."""

import configparser
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from . import __version__, kernels
from .fixtures import grid2d, interval_space
from .geolines import grad_potential_discrepancy
from .heat import _t_of, build_generator, heat_kernel
from .regularize import gibbs, k_t, mcshane_extend, phi_t
from .space import ProbMeasure, make_density
from .transport import (
    TransportError,
    cost_matrix,
    extract_map,
    map_discrepancy,
    solve_kantorovich,
    wasserstein1,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "run_potential_stability",
    "run_functional_stability",
    "run_map_stability",
    "run_experiment",
    "fit_exponent",
    "bounded_ratio",
    "COLUMNS",
]

FIXTURES = ("interval", "grid2d", "torus-disk", "cusp")
GENERATORS = ("slide", "split", "random")
KINDS = ("potential", "functional", "map")

COLUMNS = {
    "potential": ["size", "h", "eps", "W1", "l1_gap", "l2_gap", "ratio_half"],
    "functional": ["size", "h", "t", "eps", "lhs", "rhs_base", "ratio", "flagged"],
    "map": [
        "size", "h", "eps", "W1", "map_gap", "grad_gap", "l2_gap", "rhs_base",
        "split_mu", "split_nu", "ratio_sixth", "ratio_third", "skipped",
    ],
}


@dataclass
class ExperimentConfig:
    """Experiment description; see ``load_config`` for the file format."""

    kind: str = "potential"
    fixture: str = "grid2d"
    sizes: tuple = (17, 33, 65)
    t_rule: tuple = ("h",)
    generator: str = "slide"
    params: dict = field(default_factory=dict)
    seed: int = 7
    outputs: str = "out"
    tolerances: dict = field(default_factory=lambda: {"split_mass": 0.01, "flag": 1e-9})

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.fixture not in FIXTURES:
            raise ValueError(f"fixture must be one of {FIXTURES}")
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")
        s = tuple(int(v) for v in self.sizes)
        if len(s) == 0 or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("sizes must be strictly increasing")
        self.sizes = s
        if self.seed is None:
            raise ValueError("a seed is required")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def load_config(path):
    """Read an INI file.

    Sections and keys::

        [experiment]  kind, fixture, sizes, t_rule
        [measures]    generator, seed, eps, block, atoms, weights
        [output]      directory
        [tolerances]  split_mass, flag
    """
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    me = cp["measures"] if cp.has_section("measures") else {}
    params = {}
    for key in ("eps", "block", "atoms", "weights"):
        if key in me:
            params[key] = _floats(me[key])
    seed = me.get("seed")
    tol = {"split_mass": 0.01, "flag": 1e-9}
    if cp.has_section("tolerances"):
        tol.update({k: float(v) for k, v in cp["tolerances"].items()})
    return ExperimentConfig(
        kind=ex.get("kind", "potential"),
        fixture=ex.get("fixture", "grid2d"),
        sizes=tuple(int(float(v)) for v in ex.get("sizes", "17, 33, 65").replace(",", " ").split()),
        t_rule=tuple(v.strip() for v in ex.get("t_rule", "h").split(",")),
        generator=me.get("generator", "slide"),
        params=params,
        seed=None if seed is None else int(seed),
        outputs=cp.get("output", "directory", fallback="out"),
        tolerances=tol,
    )


@dataclass
class ExperimentReport:
    """Rows, fitted quantities and an environment stamp."""

    kind: str
    columns: list
    rows: list
    fitted: dict
    env: dict

    def column(self, name, size=None):
        rows = self.rows if size is None else [r for r in self.rows if r["size"] == size]
        return np.array([r[name] for r in rows], dtype=float)

    def to_csv(self):
        lines = [",".join(self.columns)]
        for r in self.rows:
            lines.append(",".join(_fmt(r[c]) for c in self.columns))
        return "\n".join(lines) + "\n"

    def write(self, directory):
        """Write ``report.csv``, ``report.svg`` and ``env.txt``."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.csv"), "w", newline="\n") as fh:
            fh.write(self.to_csv())
        with open(os.path.join(directory, "env.txt"), "w") as fh:
            for k in sorted(self.env):
                fh.write(f"{k}={self.env[k]}\n")
            for k in sorted(self.fitted):
                fh.write(f"fit.{k}={_fmt(self.fitted[k])}\n")
        _plot(self, os.path.join(directory, "report.svg"))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _env(config):
    import numba
    import scipy

    return {
        "otlab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "backend": kernels.BACKEND,
        "seed": config.seed,
        "kind": config.kind,
        "fixture": config.fixture,
        "sizes": " ".join(map(str, config.sizes)),
    }


# --------------------------------------------------------------------------
# fitting


def fit_exponent(rows, x_col, y_col):
    """Least squares line through ``(log x, log y)``.

    Returns
    -------
    slope, intercept, r2 : float

    Raises
    ------
    ValueError
        Fewer than three rows with positive ``x`` and ``y``.
    """
    x = np.array([r[x_col] for r in rows], dtype=float)
    y = np.array([r[y_col] for r in rows], dtype=float)
    k = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if k.sum() < 3:
        raise ValueError("need at least three rows with positive values")
    lx, ly = np.log(x[k]), np.log(y[k])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def bounded_ratio(values_by_size):
    """``max/min`` of the per-level maxima at the two finest levels."""
    sizes = sorted(values_by_size)
    a, b = values_by_size[sizes[-2]], values_by_size[sizes[-1]]
    return float(max(a, b) / min(a, b))


# --------------------------------------------------------------------------
# fixtures for the planar experiments


@dataclass(frozen=True, eq=False)
class _PlanarLevel:
    size: int
    space: object
    S: np.ndarray
    Y: np.ndarray
    h: float
    rho: ProbMeasure


def _planar_level(n, seed, s_max=0.25, y_min=0.375):
    sp = grid2d(n)
    x1 = sp.coords[:, 0]
    tol = 1e-12
    S = np.flatnonzero(x1 <= s_max + tol)
    Y = np.flatnonzero(x1 >= y_min - tol)
    mS = sp.m[S].sum()
    rho = make_density(sp, S, 0.5 / mS, 2.0 / mS, seed)
    return _PlanarLevel(n, sp, S, Y, sp.mesh, rho)


def _block_measure(lev, block):
    x0, x1, y0, y1 = block
    c = lev.space.coords
    tol = 1e-12
    k = (c[:, 0] >= x0 - tol) & (c[:, 0] <= x1 + tol) & (c[:, 1] >= y0 - tol) & (c[:, 1] <= y1 + tol)
    idx = np.flatnonzero(k)
    w = lev.space.m[idx] / lev.space.m[idx].sum()
    return ProbMeasure(idx, w / w.sum())


def _atom_measure(lev, atoms, weights):
    pts = np.asarray(atoms, dtype=float).reshape(-1, 2)
    idx = np.array([lev.space.nearest(p) for p in pts])
    w = np.asarray(weights, dtype=float)
    return ProbMeasure(idx, w / w.sum())


def _slide(lev, mu, eps, n):
    """``mu`` translated by ``eps`` along the first axis, interpolated off-grid."""
    steps = eps / lev.h
    k0 = int(np.floor(steps + 1e-9))
    frac = steps - k0
    if frac < 1e-9:
        frac = 0.0
    idx = [mu.support + k0 * n]
    w = [mu.weights * (1.0 - frac)]
    if frac > 0:
        idx.append(mu.support + (k0 + 1) * n)
        w.append(mu.weights * frac)
    idx = np.concatenate(idx)
    w = np.concatenate(w)
    order = np.argsort(idx)
    idx, w = idx[order], w[order]
    uniq, inv = np.unique(idx, return_inverse=True)
    ww = np.zeros(len(uniq))
    np.add.at(ww, inv, w)
    k = ww > 0
    if np.any(lev.space.coords[uniq[k], 0] > 1.0 + 1e-12):
        raise ValueError("slide leaves the grid")
    return ProbMeasure(uniq[k], ww[k] / ww[k].sum())


def _pair_measures(config, lev, n):
    p = config.params
    eps = p.get("eps", tuple(2.0**-j for j in range(1, 7)))
    rng = np.random.default_rng(config.seed)
    if "atoms" in p:
        mu = _atom_measure(lev, p["atoms"], p.get("weights", np.ones(len(p["atoms"]) // 2)))
    else:
        mu = _block_measure(lev, p.get("block", (0.375, 0.4375, 0.375, 0.625)))
    out = [(0.0, mu, mu)]
    for e in eps:
        if config.generator == "slide":
            nu = _slide(lev, mu, e, n)
        elif config.generator == "split":
            # half of mu stays, half slides
            sl = _slide(lev, mu, e, n)
            U = np.union1d(mu.support, sl.support)
            w = 0.5 * mu.on(U) + 0.5 * sl.on(U)
            nu = ProbMeasure(U, w / w.sum())
        else:
            w = mu.weights * np.exp(e * rng.normal(size=len(mu.weights)))
            nu = ProbMeasure(mu.support, w / w.sum())
        out.append((float(e), mu, nu))
    return out


def _check_fixture(config, allowed):
    if config.fixture not in allowed:
        raise ValueError(f"{config.kind} experiments support fixtures {allowed}, not {config.fixture!r}")


def run_potential_stability(config):
    """Rows ``(W1, ||phi_mu - phi_nu||_{L1(rho)}, ...)`` on planar grid levels."""
    _check_fixture(config, ("grid2d",))
    rows = []
    for n in config.sizes:
        lev = _planar_level(n, config.seed)
        cost = cost_matrix(lev.space, lev.S, lev.Y)
        r = lev.rho.on(cost.S)
        base = None
        for eps, mu, nu in _pair_measures(config, lev, n):
            try:
                if base is None:
                    base = solve_kantorovich(lev.rho, mu, cost)
                pn = base if eps == 0 else solve_kantorovich(lev.rho, nu, cost)
            except Exception as exc:  # noqa: BLE001 - add row context
                raise RuntimeError(f"size {n}, eps {eps}: {exc}") from exc
            diff = base.phi - pn.phi
            W1 = 0.0 if eps == 0 else wasserstein1(mu, nu, lev.space)
            l1 = float(np.dot(r, np.abs(diff)))
            l2 = float(np.sqrt(np.dot(r, diff * diff)))
            ratio = l1 / np.sqrt(W1) if W1 > 0 else 0.0
            rows.append({"size": n, "h": lev.h, "eps": eps, "W1": W1, "l1_gap": l1, "l2_gap": l2, "ratio_half": ratio})
    fitted = {}
    for n in config.sizes:
        sub = [q for q in rows if q["size"] == n and q["W1"] > 0]
        fitted[f"C_hat.{n}"] = max((q["ratio_half"] for q in sub), default=0.0)
        try:
            fitted[f"slope.{n}"] = fit_exponent(sub, "W1", "l1_gap")[0]
        except ValueError:
            fitted[f"slope.{n}"] = float("nan")
    return ExperimentReport("potential", COLUMNS["potential"], _sorted(rows), fitted, _env(config))


def run_map_stability(config):
    """Rows ``(W1, map_gap, grad_gap, l2_gap)``; non-map rows are kept and marked skipped."""
    _check_fixture(config, ("grid2d",))
    tol = config.tolerances.get("split_mass", 0.01)
    rows = []
    for n in config.sizes:
        lev = _planar_level(n, config.seed)
        cost = cost_matrix(lev.space, lev.S, lev.Y)
        r = lev.rho.on(cost.S)
        base = None
        for eps, mu, nu in _pair_measures(config, lev, n):
            if base is None:
                base = solve_kantorovich(lev.rho, mu, cost)
            pn = base if eps == 0 else solve_kantorovich(lev.rho, nu, cost)
            W1 = 0.0 if eps == 0 else wasserstein1(mu, nu, lev.space)
            Tm, Tn = extract_map(base, tol), extract_map(pn, tol)
            row = {"size": n, "h": lev.h, "eps": eps, "W1": W1, "split_mu": Tm.split_mass, "split_nu": Tn.split_mass}
            gp = grad_potential_discrepancy((n, n), lev.h, cost.S, base.phi, pn.phi, r)
            row.update(grad_gap=gp["lhs"], l2_gap=gp["l2_gap"], rhs_base=gp["rhs_base"])
            if pn is base:
                # identical plans give identical maps whatever the selection
                row["map_gap"], row["skipped"] = 0.0, 0
            else:
                try:
                    row["map_gap"] = map_discrepancy(
                        Tm if Tm.split_mass <= tol else base,
                        Tn if Tn.split_mass <= tol else pn,
                        lev.rho, lev.space, tol,
                    )
                    row["skipped"] = 0
                except TransportError:
                    row["map_gap"] = float("nan")
                    row["skipped"] = 1
            row["ratio_sixth"] = row["map_gap"] / W1 ** (1 / 6) if W1 > 0 else 0.0
            row["ratio_third"] = row["grad_gap"] / row["rhs_base"] if row["rhs_base"] > 0 else 0.0
            rows.append(row)
    fitted = {}
    for n in config.sizes:
        sub = [q for q in rows if q["size"] == n and q["W1"] > 0 and not q["skipped"]]
        fitted[f"C_hat.{n}"] = max((q["ratio_sixth"] for q in sub), default=0.0)
        fitted[f"Cbar_hat.{n}"] = max((q["ratio_third"] for q in rows if q["size"] == n and q["W1"] > 0), default=0.0)
        try:
            fitted[f"slope.{n}"] = fit_exponent(sub, "W1", "map_gap")[0]
        except ValueError:
            fitted[f"slope.{n}"] = float("nan")
    return ExperimentReport("map", COLUMNS["map"], _sorted(rows), fitted, _env(config))


def run_functional_stability(config):
    """Regularized functional gaps against the square-root rate on the interval.

    For each level, ``t`` in ``config.t_rule`` and measure pair ``(mu, nu)``
    on ``Y``, the ``Y``-potentials are starred and compared through
    ``int |(Phi_t[a] - K_t[a]) - (Phi_t[b] - K_t[b])| drho`` and
    ``|E_{mu^t[a] - mu^t[b]}(a - b)|^{1/2}``.
    """
    _check_fixture(config, ("interval",))
    rows = []
    p = config.params
    atoms = p.get("atoms", (0.75, 0.875))
    weights = p.get("weights", (0.5, 0.5))
    eps_list = p.get("eps", (0.125, 0.0625, 0.03125))
    flag_tol = config.tolerances.get("flag", 1e-9)
    for n in config.sizes:
        sp = interval_space(n)
        x = sp.coords[:, 0]
        S = np.flatnonzero(x <= 0.375 + 1e-12)
        Y = np.flatnonzero(x >= 0.625 - 1e-12)
        mS = sp.m[S].sum()
        rho = make_density(sp, S, 0.5 / mS, 2.0 / mS, config.seed)
        cost = cost_matrix(sp, S, Y)
        U = np.union1d(S, Y)
        D = float(sp.dist_block(U, U).max())
        gen = build_generator(sp)
        idx = np.array([sp.nearest(a) for a in atoms])
        mu = ProbMeasure(idx, np.asarray(weights) / np.sum(weights))
        ext_mu = mcshane_extend(solve_kantorovich(rho, mu, cost).psi, cost.Y, sp, D)
        pairs = [(0.0, ext_mu)]
        for e in eps_list:
            k = int(round(e * n))
            nu = ProbMeasure(idx + k, mu.weights)
            pairs.append((float(e), mcshane_extend(solve_kantorovich(rho, nu, cost).psi, cost.Y, sp, D)))
        for rule in config.t_rule:
            t = _t_of(rule, sp.mesh)
            ker = heat_kernel(gen, t / 2)
            Pa = phi_t(ext_mu, t, ker, rho.support)
            Ka = k_t(ext_mu, t, ker, rho)
            ga = gibbs(ext_mu, t, ker, rho)
            for e, ext in pairs:
                Pb = phi_t(ext, t, ker, rho.support)
                Kb = k_t(ext, t, ker, rho)
                gb = gibbs(ext, t, ker, rho)
                lhs = float(np.dot(rho.weights, np.abs((Pa - Ka) - (Pb - Kb))))
                dv = ext_mu.psi_star - ext.psi_star
                rhs = float(np.sqrt(abs((ga.marginal - gb.marginal) @ dv)))
                flagged = int(rhs == 0 and lhs > flag_tol)
                rows.append({"size": n, "h": sp.mesh, "t": t, "eps": e, "lhs": lhs, "rhs_base": rhs,
                             "ratio": lhs / rhs if rhs > 0 else 0.0, "flagged": flagged})
    fitted = {}
    for n in config.sizes:
        fitted[f"C6_hat.{n}"] = max((q["ratio"] for q in rows if q["size"] == n), default=0.0)
    return ExperimentReport("functional", COLUMNS["functional"], _sorted(rows), fitted, _env(config))


def _sorted(rows):
    return sorted(rows, key=lambda r: (r["size"], r.get("t", 0.0), r["eps"]))


def run_experiment(config):
    fn = {"potential": run_potential_stability, "map": run_map_stability, "functional": run_functional_stability}
    return fn[config.kind](config)


# --------------------------------------------------------------------------
# plots


def _plot(report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "otlab"
    fig, ax = plt.subplots(figsize=(5, 4))
    if report.kind in ("potential", "map"):
        ycol, ref = ("l1_gap", 0.5) if report.kind == "potential" else ("map_gap", 1.0 / 6.0)
        for size in sorted({r["size"] for r in report.rows}):
            sub = [r for r in report.rows if r["size"] == size and r["W1"] > 0 and np.isfinite(r[ycol]) and r[ycol] > 0]
            if sub:
                ax.loglog([r["W1"] for r in sub], [r[ycol] for r in sub], "o-", label=f"n={size}")
        xs = np.array([r["W1"] for r in report.rows if r["W1"] > 0])
        if len(xs):
            xx = np.array([xs.min(), xs.max()])
            ys = [r[ycol] for r in report.rows if r["W1"] > 0 and np.isfinite(r[ycol]) and r[ycol] > 0]
            if ys:
                c = max(ys) / xx.max() ** ref
                ax.loglog(xx, c * xx**ref, "k--", label=f"slope {ref:.3g}")
        ax.set_xlabel("W1")
        ax.set_ylabel(ycol)
    else:
        for size in sorted({r["size"] for r in report.rows}):
            sub = [r for r in report.rows if r["size"] == size and r["rhs_base"] > 0]
            ax.plot([r["rhs_base"] for r in sub], [r["lhs"] for r in sub], "o", label=f"n={size}")
        ax.set_xlabel("rhs_base")
        ax.set_ylabel("lhs")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
