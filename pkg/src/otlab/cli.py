"""Command line entry point ``otlab``."""

import argparse
import sys

import numpy as np

from .harness import COLUMNS

_RUN_HELP = "report.csv columns by kind:\n" + "\n".join(
    f"  {k}: {','.join(v)}" for k, v in COLUMNS.items()
)


def _read_measure(path):
    from .space import ProbMeasure

    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    w = a[:, 1]
    return ProbMeasure(a[:, 0].astype(np.int64), w / w.sum())


def _read_values(path):
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return a[:, 0].astype(np.int64), a[:, 1]


def _read_index(path):
    a = np.loadtxt(path, delimiter=",", ndmin=1, dtype=np.float64, comments="#")
    return np.unique(a.astype(np.int64).ravel())


def _write_csv(path, header, cols):
    cols = [np.asarray(c) for c in cols]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(str(int(v)) if np.issubdtype(type(v), np.integer) else "%.17g" % v for v in row) + "\n")


def _write_rows(path, rows, header):
    _write_csv(path, header, [[r[h] for r in rows] for h in header])


def cmd_space_build(a):
    from .space import read_space_spec, save_space

    sp = read_space_spec(a.spec)
    save_space(sp, a.out)
    print(f"n={sp.n} edges={len(sp.edges)}")


def cmd_heat(a):
    from .heat import build_generator, heat_kernel, kernel_residuals, varadhan_gap

    if a.varadhan:
        from .fixtures import interval_space

        levels = [interval_space(n) for n in a.sizes]
        rows = varadhan_gap(levels, a.x, a.y, rule=a.rule)
        _write_rows(a.out, rows, ["h", "t", "x", "y", "gap"])
        return
    from .space import load_space

    sp = load_space(a.space)
    ker = heat_kernel(build_generator(sp, a.rule), a.t)
    res = kernel_residuals(ker)
    n = sp.n
    ii, jj = np.divmod(np.arange(n * n), n)
    _write_csv(a.out, ["x", "y", "p"], [ii, jj, ker.P.ravel()])
    print(" ".join(f"{k}={v:.3g}" for k, v in res.items()))


def cmd_ot_solve(a):
    from .space import load_space
    from .transport import cost_matrix, solve_kantorovich

    sp = load_space(a.space)
    rho, mu = _read_measure(a.rho), _read_measure(a.mu)
    S = rho.support if a.S is None else _read_index(a.S)
    Y = mu.support if a.Y is None else _read_index(a.Y)
    pair = solve_kantorovich(rho, mu, cost_matrix(sp, S, Y, a.cost))
    _write_csv(a.out, ["index", "phi"], [pair.cost.S, pair.phi])
    print(f"value={pair.value:.12g} dual={pair.dual_value:.12g}")


def cmd_reg(a):
    from .fixtures import interval_family
    from .heat import build_generator, heat_kernel
    from .regularize import ctransform_limit, mcshane_extend, phi_t
    from .space import load_space

    if a.mode == "limits":
        levels = interval_family(tuple(a.sizes))
        rows = ctransform_limit(lambda y: y[:, 0], levels, a.t if a.t != "coupled" else "h")
        _write_rows(a.out, rows, ["h", "t", "sup_gap"])
        return
    sp = load_space(a.space)
    Y, psi = _read_values(a.psi)
    ext = mcshane_extend(psi, Y, sp)
    t = float(a.t)
    ker = heat_kernel(build_generator(sp), t / 2)
    vals = phi_t(ext, t, ker)
    if a.mode == "kt":
        rho = _read_measure(a.rho)
        print("%.17g" % float(np.dot(rho.weights, vals[rho.support])))
    _write_csv(a.out, ["index", "phi_t"], [np.arange(sp.n), vals])


def cmd_poincare(a):
    from .poincare import boman_cover, cover_from_text, cover_to_text, gluing_check, local_poincare_constant
    from .space import ball, load_space

    sp = load_space(a.space)
    S = _read_index(a.S)
    rho = _read_measure(a.rho) if a.rho else None
    dense = rho.dense(sp.n) if rho else np.where(np.isin(np.arange(sp.n), S), 1.0, 0.0) / len(S)
    if a.mode == "local":
        B = np.intersect1d(ball(sp, a.center, a.r), S)
        res = local_poincare_constant(sp, dense, B, a.r)
        print("C=%.12g" % res.C)
        return
    if a.mode == "cover":
        cov = boman_cover(sp, S, dense, a.center)
        text = cover_to_text(cov)
        if a.out:
            with open(a.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return
    with open(a.cover) as fh:
        cov = cover_from_text(fh.read(), sp, S)
    rng = np.random.default_rng(a.seed)
    fails = 0
    for _ in range(a.trials):
        res = gluing_check(cov, dense, rng.normal(size=sp.n))
        fails += not res["pass"]
    print(f"trials={a.trials} failures={fails} C5={cov.C5:.6g}")


def cmd_lines(a):
    from .geolines import crossing_average, crossing_counts, deriv_stability_1d, make_flat_domain, read_polygon, sample_liouville

    dom = make_flat_domain(a.domain, read_polygon(a.S) if a.S else np.zeros((0, 2)))
    if a.mode == "sample":
        xs, vs = sample_liouville(dom, a.samples, a.seed)
        _write_csv(a.out, ["x1", "x2", "v1", "v2"], [xs[:, 0], xs[:, 1], vs[:, 0], vs[:, 1]])
    elif a.mode == "cross":
        xs, vs = sample_liouville(dom, a.samples, a.seed)
        nc, tv, fl = crossing_counts(dom, xs, vs)
        _write_csv(a.out, ["components", "tv", "flagged"], [nc, tv, fl])
        if a.samples >= 10_000:
            r = crossing_average(dom, a.samples, a.seed)
            print(" ".join(f"{k}={v}" for k, v in r.items()))
    else:
        rng = np.random.default_rng(a.seed)
        grid = np.linspace(0.0, 1.0, 1025)
        rows = []
        for _ in range(a.samples):
            c = rng.uniform(0, 1, size=(2, 2))
            u = c[0, 0] * (grid - c[0, 1]) ** 2
            v = c[1, 0] * (grid - c[1, 1]) ** 2
            r = deriv_stability_1d(u, v, grid)
            rows.append((r["lhs"], r["rhs"], int(r["pass"])))
        rows = np.array(rows)
        _write_csv(a.out, ["lhs", "rhs", "pass"], [rows[:, 0], rows[:, 1], rows[:, 2].astype(np.int64)])


def cmd_run(a):
    from .harness import load_config, run_experiment

    cfg = load_config(a.config)
    rep = run_experiment(cfg)
    rep.write(a.out or cfg.outputs)


def build_parser():
    p = argparse.ArgumentParser(prog="otlab", description="Discrete optimal transport stability lab.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("space").add_subparsers(dest="action", required=True)
    b = sp.add_parser("build", help="parse a space file into a binary cache")
    b.add_argument("--spec", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_space_build)

    h = sub.add_parser("heat", help="heat kernel table, or a refinement table with --varadhan")
    h.add_argument("--space")
    h.add_argument("--t", type=float, default=0.1)
    h.add_argument("--rule", choices=("unit", "invlen2"), default="invlen2")
    h.add_argument("--varadhan", action="store_true")
    h.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    h.add_argument("--x", type=float, default=0.25)
    h.add_argument("--y", type=float, default=0.75)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_heat)

    ot = sub.add_parser("ot").add_subparsers(dest="action", required=True)
    s = ot.add_parser("solve", help="exact Kantorovich potentials (CSV index,weight inputs)")
    s.add_argument("--space", required=True)
    s.add_argument("--rho", required=True)
    s.add_argument("--mu", required=True)
    s.add_argument("--S")
    s.add_argument("--Y")
    s.add_argument("--cost", choices=("halfsq", "dist"), default="halfsq")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ot_solve)

    r = sub.add_parser("reg", help="regularized c-transform tables")
    r.add_argument("mode", choices=("phi-t", "kt", "limits"))
    r.add_argument("--space")
    r.add_argument("--psi", help="CSV index,psi on Y")
    r.add_argument("--rho")
    r.add_argument("--t", default="coupled")
    r.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reg)

    pc = sub.add_parser("poincare", help="local constants, Boman covers and gluing checks")
    pc.add_argument("mode", choices=("local", "cover", "glue"))
    pc.add_argument("--space", required=True)
    pc.add_argument("--S", required=True)
    pc.add_argument("--rho")
    pc.add_argument("--center", type=int, default=0)
    pc.add_argument("--r", type=float, default=1.0)
    pc.add_argument("--cover")
    pc.add_argument("--trials", type=int, default=200)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--out")
    pc.set_defaults(func=cmd_poincare)

    ln = sub.add_parser("lines", help="line sampling, crossing counts, derivative stability")
    ln.add_argument("mode", choices=("sample", "cross", "stab"))
    ln.add_argument("--domain", choices=("torus", "square"), default="torus")
    ln.add_argument("--S")
    ln.add_argument("--samples", type=int, default=10_000)
    ln.add_argument("--seed", type=int, default=0)
    ln.add_argument("--out", required=True)
    ln.set_defaults(func=cmd_lines)

    rn = sub.add_parser("run", help="run a stability experiment", epilog=_RUN_HELP,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    rn.add_argument("--config", required=True)
    rn.add_argument("--out")
    rn.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"otlab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
