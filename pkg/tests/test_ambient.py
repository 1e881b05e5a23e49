import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from cmcfoliate import ambient
from cmcfoliate.errors import DomainError

CATALOG = [
    ambient.euclidean(),
    ambient.schwarzschild(1.0),
    ambient.schwarzschild(0.7, center=(1.0, -2.0, 0.5)),
    ambient.perturbed_schwarzschild(1.0, 0.1, 1.0, 1.0),
    ambient.perturbed_schwarzschild(1.0, 0.1, 0.3, 2.0),
]


def symbolic_ricci(factor_expr, point):
    """Ricci tensor and scalar of F(x)·δ at a point, by direct symbolic differentiation."""
    xs = sp.symbols("x0:3", real=True)
    F = factor_expr(*xs)
    g = sp.eye(3) * F
    gi = sp.eye(3) / F
    Gam = [[[sum(gi[k, a] * (sp.diff(g[a, i], xs[j]) + sp.diff(g[a, j], xs[i]) - sp.diff(g[i, j], xs[a])) for a in range(3)) / 2
             for j in range(3)] for i in range(3)] for k in range(3)]
    subs = dict(zip(xs, point))
    ric = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            expr = 0
            for k in range(3):
                expr += sp.diff(Gam[k][i][j], xs[k]) - sp.diff(Gam[k][i][k], xs[j])
                for l in range(3):
                    expr += Gam[k][k][l] * Gam[l][i][j] - Gam[k][j][l] * Gam[l][i][k]
            ric[i, j] = float(expr.evalf(subs=subs))
    scal = float(sum(ric[i, i] for i in range(3)) / F.evalf(subs=subs))
    return ric, scal


def test_euclidean_jet_is_trivial():
    jet = ambient.eval_metric(ambient.euclidean(), np.array([1.0, 2.0, 3.0]))
    assert_allclose(jet.g, np.eye(3))
    assert not np.any(jet.dg) and not np.any(jet.d2g)
    cs = ambient.curvature(ambient.euclidean(), np.array([4.0, 0.0, 1.0]))
    assert not np.any(cs.ric) and cs.scal == 0


def test_schwarzschild_metric_value_at_r10():
    jet = ambient.eval_metric(ambient.schwarzschild(1.0), np.array([10.0, 0.0, 0.0]))
    assert_allclose(jet.g, 1.21550625 * np.eye(3), rtol=1e-15)


def test_schwarzschild_dg_matches_central_differences():
    met = ambient.schwarzschild(1.0)
    x = np.array([6.0, -7.0, 3.0 * np.sqrt(3.0)])  # |x| = 10
    h = 1e-4
    jet = ambient.eval_metric(met, x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (ambient.eval_metric(met, x + e).g - ambient.eval_metric(met, x - e).g) / (2 * h)
        assert_allclose(fd, jet.dg[k], rtol=1e-8, atol=1e-14)


def test_schwarzschild_is_scalar_flat_symbolically():
    m = sp.Rational(1)

    def F(x, y, z):
        r = sp.sqrt(x**2 + y**2 + z**2)
        return (1 + m / (2 * r)) ** 4

    point = (6.0, -7.0, 3.0 * np.sqrt(3.0))
    ric_sym, scal_sym = symbolic_ricci(F, point)
    cs = ambient.curvature(ambient.schwarzschild(1.0), np.array(point))
    assert abs(scal_sym) < 1e-12
    assert abs(cs.scal) < 1e-10
    assert_allclose(cs.ric, ric_sym, atol=1e-12)


@pytest.mark.parametrize("phase", ["angular", "cartesian"])
def test_perturbed_ricci_matches_symbolic_oracle(phase):
    A, tau, om = 0.1, 1.0, 1.0

    def F(x, y, z):
        r = sp.sqrt(x**2 + y**2 + z**2)
        s = x / r if phase == "angular" else x
        return (1 + 1 / (2 * r)) ** 4 + A * r**-tau * sp.sin(om * s)

    point = (3.0, 1.0, -2.0)
    ric_sym, scal_sym = symbolic_ricci(F, point)
    cs = ambient.curvature(ambient.perturbed_schwarzschild(1.0, A, tau, om, phase=phase), np.array(point))
    assert_allclose(cs.ric, ric_sym, rtol=1e-9, atol=1e-13)
    assert_allclose(cs.scal, scal_sym, rtol=1e-9, atol=1e-13)


@pytest.mark.parametrize("met", CATALOG[1:], ids=lambda m: m.id)
def test_ricci_matches_finite_differences_of_christoffels(met):
    x = np.array([4.0, 2.5, -3.0])
    h = 1e-4
    jet = ambient.eval_metric(met, x)
    gam = ambient.christoffel_from_jet(jet.g, jet.dg)
    # R_ij = ∂_k Γ^k_ij − ∂_j Γ^k_ik + ΓΓ terms
    def gamma_at(p):
        jet = ambient.eval_metric(met, p)
        return ambient.christoffel_from_jet(jet.g, jet.dg)

    dgam = np.stack([(gamma_at(x + h * e) - gamma_at(x - h * e)) / (2 * h) for e in np.eye(3)])
    ric = (
        np.einsum("kkij->ij", dgam)
        - np.einsum("jkik->ij", dgam)
        + np.einsum("kkl,lij->ij", gam, gam)
        - np.einsum("kjl,lik->ij", gam, gam)
    )
    assert_allclose(ric, ambient.curvature(met, x).ric, rtol=1e-6, atol=1e-10)


@given(st.integers(0, len(CATALOG) - 1), st.floats(2.0, 50.0), st.integers(0, 2**32 - 1))
def test_jets_agree_with_finite_differences(k, r, seed):
    met = CATALOG[k]
    d = np.random.default_rng(seed).normal(size=3)
    x = met.center + r * d / np.linalg.norm(d)
    h = 1e-4 * r
    jet = ambient.eval_metric(met, x)
    for i, e in enumerate(np.eye(3)):
        a, b = ambient.eval_metric(met, x + h * e), ambient.eval_metric(met, x - h * e)
        fd_g = (a.g - b.g) / (2 * h)
        fd_dg = (a.dg - b.dg) / (2 * h)
        scale_g = max(np.abs(jet.dg).max(), 1e-12)
        scale_dg = max(np.abs(jet.d2g).max(), 1e-12)
        assert np.abs(fd_g - jet.dg[i]).max() <= 1e-6 * scale_g + 1e-14
        assert np.abs(fd_dg - jet.d2g[i]).max() <= 1e-6 * scale_dg + 1e-14


def test_jet_symmetries():
    met = CATALOG[3]
    jet = ambient.eval_metric(met, np.array([[3.0, 4.0, 5.0], [-6.0, 1.0, 2.0]]))
    assert_allclose(jet.g, np.swapaxes(jet.g, -1, -2))
    assert_allclose(jet.dg, np.swapaxes(jet.dg, -1, -2))
    assert_allclose(jet.d2g, np.swapaxes(jet.d2g, -1, -2))
    assert_allclose(jet.d2g, np.swapaxes(jet.d2g, 1, 2))
    assert np.all(np.linalg.eigvalsh(jet.g) > 0)


@given(st.tuples(*[st.integers(-24, 24)] * 3))
def test_translation_covariance_is_exact_for_dyadic_shifts(quarters):
    c = np.array(quarters) / 4.0
    x = np.array([7.0, -2.0, 5.0])
    a = ambient.eval_metric(ambient.schwarzschild(1.0, center=c), x + c)
    b = ambient.eval_metric(ambient.schwarzschild(1.0), x)
    assert np.array_equal(a.g, b.g) and np.array_equal(a.dg, b.dg) and np.array_equal(a.d2g, b.d2g)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_translation_covariance(cx, cy, cz):
    c = np.array([cx, cy, cz])
    x = np.array([7.0, -2.0, 5.0])
    a = ambient.curvature(ambient.perturbed_schwarzschild(1.0, 0.1, 1.0, 1.0, center=c), x + c)
    b = ambient.curvature(ambient.perturbed_schwarzschild(1.0, 0.1, 1.0, 1.0), x)
    assert_allclose(a.ric, b.ric, rtol=1e-10, atol=1e-16)


def test_domain_error_inside_excluded_ball():
    with pytest.raises(DomainError):
        ambient.eval_metric(ambient.schwarzschild(1.0), np.array([0.2, 0.0, 0.0]))
    with pytest.raises(DomainError):
        ambient.eval_metric(ambient.schwarzschild(1.0, center=(5, 0, 0)), np.array([5.1, 0.0, 0.0]))


def test_decay_report_euclidean_is_zero():
    rep = ambient.decay_report(ambient.euclidean(), [10, 20, 40], 0.4)
    assert not np.any(rep["table"])


def test_decay_report_schwarzschild_metric_column():
    radii = np.array([50.0, 100.0, 200.0, 400.0])
    rep = ambient.decay_report(ambient.schwarzschild(1.0), radii, 0.4)
    col = rep["table"][:, 0]
    assert_allclose(col, 2.0 * radii ** (0.4 - 0.5), rtol=0.02)
    assert all(rep["decaying"].values())


def test_decay_report_flags_slow_perturbation():
    radii = [20.0, 40.0, 80.0, 160.0, 320.0]
    fast = ambient.decay_report(ambient.perturbed_schwarzschild(1.0, 0.1, 1.0, 1.0), radii, 0.4)
    slow = ambient.decay_report(ambient.perturbed_schwarzschild(1.0, 0.1, 0.3, 1.0), radii, 0.4)
    assert fast["decaying"]["metric"] and fast["decaying"]["christoffel"]
    assert not slow["decaying"]["metric"]


def test_vacuum_constraints_vanish():
    pts = np.array([[10.0, 0.0, 0.0], [3.0, 4.0, 12.0]])
    for data in (ambient.time_symmetric(ambient.euclidean()), ambient.time_symmetric(ambient.schwarzschild(1.0))):
        res = ambient.constraint_residual(data, pts)
        assert np.abs(res["momentum"]).max() == 0
        assert np.abs(res["energy_textbook"]).max() < 1e-10


def test_toy_momentum_density_matches_symbolic_divergence():
    a = 0.3
    xs = sp.symbols("x0:3", real=True)
    r = sp.sqrt(sum(v**2 for v in xs))
    W = [a / r, 0, 0]
    K = sp.Matrix(3, 3, lambda i, j: sp.diff(W[j], xs[i]) + sp.diff(W[i], xs[j]))
    H = K.trace()
    J = [sp.diff(H, xs[i]) - sum(sp.diff(K[i, j], xs[j]) for j in range(3)) for i in range(3)]
    point = (2.0, -1.0, 3.0)
    subs = dict(zip(xs, point))
    J_sym = np.array([float(Ji.evalf(subs=subs)) for Ji in J])
    data = ambient.toy_momentum_data(a)
    assert_allclose(data.momentum_density(np.array(point)), J_sym, rtol=1e-12)
    res = ambient.constraint_residual(data, np.array(point))
    assert np.abs(res["momentum"]).max() < 1e-12


def test_bowen_york_is_momentum_free():
    data = ambient.bowen_york_data([0.2, -0.1, 0.05])
    res = ambient.constraint_residual(data, np.array([[5.0, 1.0, -2.0], [0.5, 3.0, 1.0]]))
    assert np.abs(res["momentum"]).max() < 1e-9


def test_energy_constraint_reports_both_sign_conventions():
    data = ambient.toy_momentum_data(0.3)
    x = np.array([2.0, 1.0, 1.0])
    res = ambient.constraint_residual(data, x)
    # ρ is built from the textbook form, so only the printed form leaves H̄² behind
    H = np.trace(data.extrinsic(x))
    assert abs(res["energy_textbook"]) < 1e-14
    assert_allclose(res["energy_printed"], H**2, rtol=1e-12)
