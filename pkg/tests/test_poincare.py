import numpy as np
import pytest

from otlab.fixtures import cusp_domain, grid_graph, grid_square_domain, interval_level
from otlab.heat import build_generator, heat_kernel
from otlab.poincare import (
    CoverError,
    boman_cover,
    c5,
    cover_from_text,
    cover_to_text,
    gluing_check,
    global_concavity_probe,
    local_poincare_constant,
    verify_cover,
)
from otlab.regularize import gibbs, mcshane_extend
from otlab.space import ProbMeasure, ball, build_space, make_density
from otlab.transport import cost_matrix, solve_kantorovich


def test_two_point_constant():
    sp = build_space([[0, 1]], [1.0], [1.0, 1.0])
    res = local_poincare_constant(sp, np.array([0.5, 0.5]), [0, 1], 1.0)
    # any nonconstant f: mean oscillation |a-b|/2, mean gradient |a-b|
    np.testing.assert_allclose(res.C, 0.5, atol=1e-9)


def test_singleton_ball_rejected():
    sp = build_space([[0, 1]], [1.0], [1.0, 1.0])
    with pytest.raises(ValueError, match="Poincare undefined"):
        local_poincare_constant(sp, np.array([0.5, 0.5]), [0], 1.0)


def dumbbell(L):
    edges = [[0, 1], [1, 2], [0, 2], [3, 4], [4, 5], [3, 5], [2, 3]]
    return build_space(edges, [1, 1, 1, 1, 1, 1, L], np.ones(6))


def test_bottleneck_trend():
    rho = np.full(6, 1 / 6)
    Cs = [local_poincare_constant(dumbbell(L), rho, np.arange(6), 1.0).C for L in (0.5, 1, 2, 4, 8)]
    assert all(a < b for a, b in zip(Cs, Cs[1:]))


def _ratio(space, rho, B, f):
    from otlab.poincare import _sub_edges, discrete_gradient

    w = rho[B] / rho[B].sum()
    src, dst, ln = _sub_edges(space, B)
    g = discrete_gradient(f, src, dst, ln, len(B))
    return np.dot(w, np.abs(f - np.dot(w, f))) / np.dot(w, g)


def test_witness_attains_maximum():
    sp = grid_graph(5)
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.5, 1.5, sp.n)
    B = ball(sp, 12, 2.0)
    res = local_poincare_constant(sp, rho, B, 1.0)
    np.testing.assert_allclose(_ratio(sp, rho, res.ball, res.witness), res.C, atol=1e-9)
    for _ in range(500):
        f = rng.normal(size=len(res.ball))
        assert _ratio(sp, rho, res.ball, f) <= res.C + 1e-9


def test_monotone_under_enlargement():
    sp = grid_graph(5)
    rho = np.full(sp.n, 1 / sp.n)
    Cs = [local_poincare_constant(sp, rho, ball(sp, 12, r), 1.0).C for r in (1, 2)]
    path = build_space(np.column_stack([np.arange(10), np.arange(1, 11)]), np.ones(10), np.ones(11))
    Cs += [local_poincare_constant(path, np.full(11, 1 / 11), ball(path, 5, r), 1.0).C for r in (1, 2, 3, 4, 5)]
    assert Cs[0] <= Cs[1]
    assert all(a <= b for a, b in zip(Cs[2:], Cs[3:]))


# ---------------------------------------------------------------- covers


def square_cover(seed=3):
    sp, S, c = grid_square_domain(16)
    mS = sp.m[S].sum()
    rho = make_density(sp, S, 0.5 / mS, 2 / mS, seed).dense(sp.n)
    return sp, S, rho, boman_cover(sp, S, rho, c)


def test_single_ball_cover():
    sp = grid_graph(9, spacing=0.1)
    S = ball(sp, 40, 0.1)
    rho = np.zeros(sp.n)
    rho[S] = 1 / len(S)
    cov = boman_cover(sp, S, rho, 40)
    assert len(cov.centers) == 1
    assert cov.chains == [[0]]
    assert cov.E == 1
    np.testing.assert_array_equal(cov.points[0], S)


def test_square_cover_certified():
    sp, S, rho, cov = square_cover()
    assert np.isfinite([cov.E, cov.F, cov.G, cov.beta]).all()
    assert verify_cover(sp, cov, rho)
    assert cov.radii.max() <= 1.0
    for k, ch in enumerate(cov.chains):
        assert ch[0] == cov.central_index and ch[-1] == k
    np.testing.assert_allclose(cov.C5, c5(cov.E, cov.F, cov.G, cov.beta))


def test_verify_detects_tampering():
    sp, S, rho, cov = square_cover()
    cov.E = 1.0
    with pytest.raises(CoverError) as exc:
        verify_cover(sp, cov, rho)
    assert exc.value.condition.startswith("condition 1")


def test_cover_text_roundtrip():
    sp, S, rho, cov = square_cover()
    text = cover_to_text(cov)
    assert text.splitlines()[-1].startswith("constants")
    back = cover_from_text(text, sp, S)
    np.testing.assert_array_equal(back.centers, cov.centers)
    np.testing.assert_array_equal(back.radii, cov.radii)
    assert back.chains == cov.chains
    assert (back.E, back.F, back.G, back.beta) == (cov.E, cov.F, cov.G, cov.beta)


def test_cusp_family_dilation_grows():
    Fs = []
    for depth in (2, 4, 8, 12, 16):
        sp, S, c = cusp_domain(depth)
        rho = np.zeros(sp.n)
        rho[S] = sp.m[S] / sp.m[S].sum()
        Fs.append(boman_cover(sp, S, rho, c).F)
    assert all(a <= b for a, b in zip(Fs, Fs[1:]))
    assert Fs[-1] > 2 * Fs[0]


def test_gluing_constant_f():
    sp, S, rho, cov = square_cover()
    r = gluing_check(cov, rho, np.full(sp.n, 4.0))
    assert r["lhs"] == pytest.approx(0.0, abs=1e-14)
    assert r["rhs_sum"] == pytest.approx(0.0, abs=1e-14)
    assert r["pass"]


def test_gluing_split_across_central_ball():
    sp, S, rho, cov = square_cover()
    c = cov.centers[cov.central_index]
    x = sp.coords[:, 0]
    f = np.where(x <= x[c], -1.0, 1.0)
    r = gluing_check(cov, rho, f)
    assert r["pass"]
    assert r["slack"] >= 1.0


def test_gluing_random():
    sp, S, rho, cov = square_cover()
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert gluing_check(cov, rho, rng.normal(size=sp.n))["pass"]


# ---------------------------------------------------------------- concavity probe


def interval_gibbs(n, mult):
    lev = interval_level(n)
    sp = lev.space
    mS = sp.m[lev.S].sum()
    rho = make_density(sp, lev.S, 0.5 / mS, 2 / mS, 7)
    nu = ProbMeasure(np.array([sp.nearest(0.75), sp.nearest(1.0)]), np.array([0.5, 0.5]))
    cost = cost_matrix(sp, lev.S, lev.Y)
    ext = mcshane_extend(solve_kantorovich(rho, nu, cost).psi, cost.Y, sp, 1.0)
    t = mult / n
    return sp, gibbs(ext, t, heat_kernel(build_generator(sp), t / 2), rho)


def lipschitz_batch(sp, k, seed):
    rng = np.random.default_rng(seed)
    x = sp.coords[:, 0]
    return np.array([np.interp(x, np.linspace(0, 1, 9), rng.normal(size=9)) for _ in range(k)])


def test_probe_constant_v():
    sp, g = interval_gibbs(32, 1)
    r = global_concavity_probe(g, np.full(sp.n, 2.0))
    assert r["lhs"][0] < 1e-12
    assert r["ratio"][0] == 0.0 or r["rhs_base"][0] < 1e-6


def test_probe_kappa_finite():
    sp, g = interval_gibbs(64, 1)
    r = global_concavity_probe(g, lipschitz_batch(sp, 100, 0))
    assert np.isfinite(r["kappa"]) and r["kappa"] > 0


@pytest.mark.parametrize("n", [32, 64, 128])
def test_probe_kappa_stable_in_t(n):
    ks = []
    for mult in (1, 2, 4):
        sp, g = interval_gibbs(n, mult)
        ks.append(global_concavity_probe(g, lipschitz_batch(sp, 100, 0))["kappa"])
    assert max(ks) <= 2 * min(ks)
