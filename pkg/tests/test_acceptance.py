"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import time

import numpy as np
import pytest

from otlab.cli import main
from otlab.fixtures import (
    cusp_domain,
    cycle_space,
    grid2d,
    grid_square_domain,
    interval_family,
    interval_space,
    regular_polygon,
)
from otlab.geolines import crossing_average, crossing_counts, deriv_stability_1d, make_flat_domain, sample_liouville
from otlab.harness import ExperimentConfig, bounded_ratio, run_map_stability, run_potential_stability
from otlab.heat import build_generator, heat_kernel, kernel_residuals, varadhan_fixed_graph, varadhan_gap
from otlab.poincare import boman_cover, c5, gluing_check
from otlab.regularize import (
    covariance_identity_check,
    ctransform_limit,
    first_variation,
    k_t,
    marginal_limit,
    second_variation,
)
from otlab.space import ProbMeasure, build_space, make_density

SIZES = (17, 33, 65)
MAP_PARAMS = {"atoms": (0.375, 0.375, 0.375, 0.5, 0.4375, 0.625), "weights": (0.3, 0.3, 0.4)}


@pytest.fixture
def verdict(capsys):
    t0 = time.perf_counter()

    def emit(name, ok, detail, budget):
        dt = time.perf_counter() - t0
        ok = bool(ok) and dt <= budget
        with capsys.disabled():
            print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail}; {dt:.1f}s of {budget:.0f}s)")
        return ok

    return emit


def strictly_decreasing(xs):
    return all(a > b for a, b in zip(xs, xs[1:]))


@pytest.fixture(scope="module")
def map_report():
    return run_map_stability(ExperimentConfig(kind="map", sizes=SIZES, params=dict(MAP_PARAMS)))


def test_heat_kernel_validity(verdict):
    fixtures = {
        "interval255": interval_space(255),
        "cycle64": cycle_space(64),
        "grid2d16": grid2d(16),
        "square12": grid_square_domain(12)[0],
        "cusp4": cusp_domain(4)[0],
    }
    worst = 0.0
    for sp in fixtures.values():
        assert sp.n <= 256
        gen = build_generator(sp)
        for t in (1e-3, 0.05, 0.5):
            a, c = heat_kernel(gen, t), heat_kernel(gen, 2 * t)
            res = kernel_residuals(a, a, c)
            worst = max(worst, res["symmetry"], res["mass"], res["semigroup"])
    two = build_space([[0, 1]], [1.0], [1.0, 1.0])
    err2 = 0.0
    for t in (1e-3, 0.1, 1.0, 10.0):
        P = heat_kernel(build_generator(two, "unit"), t).P
        e = np.exp(-2 * t)
        err2 = max(err2, np.abs(P - 0.5 * np.array([[1 + e, 1 - e], [1 - e, 1 + e]])).max())
    ok = verdict("heat-kernel validity", worst <= 1e-8 and err2 <= 1e-10,
                 f"worst residual {worst:.2e}, two-point error {err2:.2e}", 10)
    assert ok


def test_varadhan_refinement(verdict):
    rows = varadhan_gap([interval_space(n) for n in (32, 64, 128, 256)], 0.25, 0.75)
    gaps = [r["gap"] for r in rows]
    sp = interval_space(8)
    ctrl = varadhan_fixed_graph(sp, sp.nearest(0.25), sp.nearest(0.75), [1e-2, 1e-3, 1e-4])
    control_ok = ctrl[-1]["gap"] > 0.05
    ok = verdict("Varadhan refinement", strictly_decreasing(gaps) and gaps[-1] <= 0.05 * 0.125 and control_ok,
                 f"gaps {np.round(gaps, 5).tolist()} vs {0.05 * 0.125:.5f}; fixed-graph gap {ctrl[-1]['gap']:.4f}", 30)
    assert ok


def test_variation_identities(verdict):
    rng = np.random.default_rng(2024)
    sp = interval_space(16)
    gen = build_generator(sp)
    # central-difference truncation is O(eps^2); first variations near zero need the smaller step
    e1, e2 = 1e-5, 1e-4
    worst1 = worst2 = 0.0
    sign_ok = True
    for _ in range(100):
        t = float(rng.uniform(0.05, 1.0))
        ker = heat_kernel(gen, t / 2)
        idx = np.sort(rng.choice(sp.n, 8, replace=False))
        w = rng.uniform(0.1, 1, 8)
        rho = ProbMeasure(idx, w / w.sum())
        phi, v = rng.uniform(-1, 1, sp.n), rng.uniform(-1, 1, sp.n)
        K = lambda s: k_t(phi + s * v, t, ker, rho)  # noqa: E731
        fv = first_variation(phi, t, ker, rho, v)
        sv = second_variation(phi, t, ker, rho, v)
        worst1 = max(worst1, abs(fv - (K(e1) - K(-e1)) / (2 * e1)) / abs(fv))
        worst2 = max(worst2, abs(sv - (K(e2) - 2 * K(0) + K(-e2)) / e2**2))
        sign_ok &= sv <= 0
    ok = verdict("variation identities", worst1 <= 1e-6 and worst2 <= 1e-5 and sign_ok,
                 f"first rel {worst1:.1e}, second abs {worst2:.1e}, concave {sign_ok}", 60)
    assert ok


def test_covariance_identity(verdict):
    rng = np.random.default_rng(11)
    spaces = [interval_space(32), grid2d(8), cycle_space(12)]
    worst = 0.0
    for k in range(100):
        sp = spaces[k % 3]
        t = float(rng.uniform(0.05, 1.0))
        ker = heat_kernel(build_generator(sp), t / 2)
        e = sp.edges[rng.integers(len(sp.edges))]
        r, _, _ = covariance_identity_check(rng.normal(size=sp.n), t, ker, rng.normal(size=sp.n), e, sp)
        worst = max(worst, r)
    ok = verdict("covariance identity", worst <= 1e-10, f"worst residual {worst:.1e}", 10)
    assert ok


def test_ctransform_limit(verdict):
    rows = ctransform_limit(lambda y: y[:, 0], interval_family())
    gaps = [r["sup_gap"] for r in rows]
    bound = 0.05 * rows[-1]["osc"]
    ok = verdict("c-transform limit", strictly_decreasing(gaps) and gaps[-1] <= bound,
                 f"gaps {np.round(gaps, 4).tolist()} vs {bound:.4f}", 60)
    assert ok


def test_marginal_limit(verdict):
    def nu(L):
        return ProbMeasure(np.array([L.space.nearest(0.75), L.space.nearest(1.0)]), np.array([0.5, 0.5]))

    def rho(L):
        mS = L.space.m[L.S].sum()
        return make_density(L.space, L.S, 0.5 / mS, 2 / mS, 7)

    rows = marginal_limit(nu, interval_family(), lambda c: c[:, 0], t_rule=lambda h: 0.5 * np.sqrt(h), rho_fn=rho)
    gaps = [r["gap"] for r in rows]
    ok = verdict("marginal limit", strictly_decreasing(gaps) and gaps[-1] <= 0.05 * 1.0,
                 f"gaps {np.round(gaps, 5).tolist()} vs 0.05", 60)
    assert ok


def test_gluing(verdict):
    sp, S, c = grid_square_domain(16)
    mS = sp.m[S].sum()
    rho = make_density(sp, S, 0.5 / mS, 2 / mS, 3).dense(sp.n)
    cov = boman_cover(sp, S, rho, c)
    rng = np.random.default_rng(0)
    fails = sum(not gluing_check(cov, rho, rng.normal(size=sp.n))["pass"] for _ in range(200))
    formula = np.isclose(cov.C5, c5(cov.E, cov.F, cov.G, cov.beta), rtol=1e-12)
    ok = verdict("cover gluing", fails == 0 and formula, f"{fails} failures of 200, C5 {cov.C5:.3g}", 60)
    assert ok


def test_potential_bounded_ratio(verdict):
    rep = run_potential_stability(ExperimentConfig(kind="potential", sizes=SIZES))
    C = {n: rep.fitted[f"C_hat.{n}"] for n in SIZES}
    ratio = bounded_ratio(C)
    slope = rep.fitted[f"slope.{SIZES[-1]}"]
    ok = verdict("potential stability ratio", ratio <= 2.0 and slope >= 0.4,
                 f"C_hat {[round(float(v), 4) for v in C.values()]}, ratio {ratio:.3f}, slope {slope:.3f}", 300)
    assert ok


def test_gradient_bounded_ratio(verdict, map_report):
    C = {n: map_report.fitted[f"Cbar_hat.{n}"] for n in SIZES}
    ratio = bounded_ratio(C)
    ok = verdict("gradient stability ratio", ratio <= 2.0,
                 f"Cbar_hat {[round(float(v), 4) for v in C.values()]}, ratio {ratio:.3f}", 300)
    assert ok


def test_map_bounded_ratio(verdict, map_report):
    C = {n: map_report.fitted[f"C_hat.{n}"] for n in SIZES}
    strict = sum(1 for r in map_report.rows if r["W1"] > 0 and not r["skipped"])
    ratio = bounded_ratio(C) if min(C[SIZES[-2]], C[SIZES[-1]]) > 0 else np.inf
    ok = verdict("map stability ratio", strict > 0 and ratio <= 2.0,
                 f"C_hat {[round(float(v), 4) for v in C.values()]}, ratio {ratio:.3f}, {strict} strict rows", 300)
    assert ok


def test_crossing_combinatorics(verdict):
    disk = make_flat_domain("torus", regular_polygon((0.5, 0.5), 0.25, 256))
    xs, vs = sample_liouville(disk, 100_000, 1)
    nc, tv, _ = crossing_counts(disk, xs, vs)
    violations = int(np.count_nonzero(nc > 1 + 0.5 * tv))
    avg = crossing_average(disk, 100_000, 0)
    rng = np.random.default_rng(5)
    grid = np.linspace(0, 1, 257)

    def convex_pl():
        k = rng.integers(1, 8)
        a, b = rng.normal(size=k) * 3, rng.normal(size=k)
        return np.max(a[:, None] * grid[None] + b[:, None], axis=0)

    stab = sum(deriv_stability_1d(convex_pl(), convex_pl(), grid)["pass"] for _ in range(500))
    fine = np.linspace(0, 1, 2**22 + 1)
    q = deriv_stability_1d(0.5 * fine**2, np.zeros_like(fine), fine)
    quad_ok = abs(q["lhs"] - 1 / 3) <= 1e-6 and abs(q["rhs"] - 8 * (1 / 20) ** (1 / 3)) <= 1e-6
    ok = verdict("crossing combinatorics", violations == 0 and avg["pass"] and stab == 500 and quad_ok,
                 f"{violations} violations, mean {avg['mc_mean']:.3f}+3*{avg['se']:.3f} vs {avg['bound']:.3f}, "
                 f"{stab}/500 convex pairs, quadratic {q['lhs']:.7f} vs {q['rhs']:.7f}", 120)
    assert ok


def test_determinism(verdict, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(
        "[experiment]\nkind = map\nfixture = grid2d\nsizes = 9, 17\nt_rule = h\n"
        "[measures]\ngenerator = random\nseed = 3\neps = 0.5, 0.25\n"
    )
    blobs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        blobs.append((out / "report.csv").read_bytes())
    ok = verdict("determinism", blobs[0] == blobs[1], f"{len(blobs[0])} bytes", 60)
    assert ok
