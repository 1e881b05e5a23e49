import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.optimize import brentq

from cmcfoliate import ambient
from cmcfoliate.cmc import (
    ContinuationPolicy,
    instability_margin,
    jacobian_check,
    solve_cmc,
    solve_lapse,
    solve_stability,
    trace_foliation,
)
from cmcfoliate.errors import ContinuationAborted, NearCriticalLeafError, NoConvergenceError
from cmcfoliate.sphere import lm_index
from cmcfoliate.surface import EmbeddedSphere, hawking_mass, regularity_report

from conftest import schwarzschild_sigma


def coordinate_radius(sigma, m=1.0):
    return brentq(lambda r: schwarzschild_sigma(r, m) - sigma, m, 10 * sigma)


def minus_j_spectrum(sigma, l, m=1.0):
    """−J eigenvalue on the Schwarzschild coordinate sphere of radius σ, degree l."""
    r = coordinate_radius(sigma, m)
    phi = 1 + m / (2 * r)
    area_radius = r * phi**2
    # −Δ − |k|² − Ric̄(ν,ν) with |k|² = 2/σ² and Ric̄(ν,ν) = −2m/(r³φ⁶)
    return l * (l + 1) / area_radius**2 - 2 / sigma**2 + 2 * m / (r**3 * phi**6)


def test_euclidean_leaf_converges_quadratically():
    leaf = solve_cmc(ambient.euclidean(), 7.0, EmbeddedSphere.round(6.5, 24))
    assert leaf.newton_iters == 4
    assert_allclose(leaf.sphere.base_radius, 7.0, rtol=1e-12)
    assert np.abs(leaf.sphere.coeffs).max() < 1e-12
    h = np.array(leaf.history)
    assert np.all(h[1:] < h[:-1])
    # r_{k+1}/r_k² stays bounded until the round-off floor takes over
    assert np.all(h[2:-1] / h[1:-2] ** 2 < 10.0)


def test_schwarzschild_leaf_is_coordinate_sphere_about_translated_center():
    c = np.array([3.0, 0.0, 0.0])
    sigma = schwarzschild_sigma(25.0)
    leaf = solve_cmc(ambient.schwarzschild(1.0, center=c), sigma, EmbeddedSphere.round(24.0, 24, c + [0.5, 0.2, 0.0]))
    assert leaf.newton_iters <= 5
    assert_allclose(leaf.center, c, atol=1e-9)
    assert_allclose(leaf.sphere.base_radius, 25.0, rtol=1e-10)
    assert np.abs(leaf.sphere.coeffs).max() < 1e-9
    assert_allclose(hawking_mass(leaf.geom), 1.0, rtol=1e-9)
    assert leaf.residual <= 1e-9 / sigma**2


def test_round_euclidean_stability_spectrum(euclidean_leaf):
    lam, _ = euclidean_leaf.stability.eigen()
    s2 = euclidean_leaf.sigma**2
    assert_allclose(lam[0] * s2, -2.0, rtol=1e-10)
    assert np.abs(lam[1:4] * s2).max() < 1e-9
    assert_allclose(lam[4:9] * s2, 4.0, rtol=1e-10)
    assert_allclose(lam[9:16] * s2, 10.0, rtol=1e-10)


def test_schwarzschild_stability_spectrum_matches_closed_form(schwarzschild_leaf50):
    leaf = schwarzschild_leaf50
    lam, _ = leaf.stability.eigen()
    assert_allclose(lam[0], minus_j_spectrum(50.0, 0), rtol=1e-9)
    assert_allclose(lam[1:4], minus_j_spectrum(50.0, 1), rtol=1e-7)
    assert_allclose(lam[4:9], minus_j_spectrum(50.0, 2), rtol=1e-9)
    mf = leaf.stability.mean_free_eigenvalues(leaf.geom.grid)
    assert_allclose(mf[:3], minus_j_spectrum(50.0, 1), rtol=1e-7)


def test_translational_eigenvalue_is_near_6m_over_sigma_cubed(schwarzschild_leaf50):
    mf = schwarzschild_leaf50.stability.mean_free_eigenvalues(schwarzschild_leaf50.geom.grid)
    assert 1.0 < mf[0] / (6.0 / 50.0**3) < 1.1


@given(st.lists(st.floats(-1.0, 1.0), min_size=9, max_size=9))
def test_linearization_matches_finite_difference(schwarzschild_leaf50, amps):
    leaf = schwarzschild_leaf50
    if max(abs(a) for a in amps) < 1e-3:
        amps = [1.0] + amps[1:]
    d = np.zeros((leaf.sphere.l_max + 1) ** 2)
    d[lm_index(0, 0)] = amps[0]
    for k, (l, m) in enumerate([(1, -1), (1, 0), (1, 1), (2, 0), (2, 2), (3, -1), (4, 2), (5, 0)], start=1):
        d[lm_index(l, m)] = amps[k]
    t = 1e-4
    assert jacobian_check(leaf.metric, leaf, d, t) <= 5 * t


def test_lapse_on_schwarzschild_leaf(schwarzschild_leaf50):
    lap = solve_lapse(schwarzschild_leaf50.metric, schwarzschild_leaf50)
    # constants solve J u = 2/σ² exactly on a coordinate sphere
    assert_allclose(lap.mean, -2 / (50.0**2 * minus_j_spectrum(50.0, 0)), rtol=1e-9)
    assert abs(lap.mean - (1 + 1 / 50 + 4 / 50**2)) < 2e-4
    assert lap.trans_sup <= 1e-4
    assert lap.deform_sup <= 1e-8


def test_instability_margin_positive_on_stable_leaf(schwarzschild_leaf50):
    assert instability_margin(schwarzschild_leaf50, 1.0) > 0
    assert_allclose(instability_margin(schwarzschild_leaf50, 0.0), minus_j_spectrum(50.0, 1), rtol=1e-7)


def test_foliation_leaves_are_nested_coordinate_spheres(schwarzschild_foliation):
    fol = schwarzschild_foliation
    assert_allclose(fol.sigmas[[0, -1]], [20.0, 200.0])
    assert np.all(np.diff(fol.sigmas) > 0)
    assert np.all(fol.pair_gaps() > 0)
    for leaf in fol.leaves:
        assert_allclose(leaf.sphere.base_radius, coordinate_radius(leaf.sigma), rtol=1e-9)
        assert_allclose(hawking_mass(leaf.geom), 1.0, rtol=1e-8)
    assert len(fol.lapses) == len(fol.leaves)


def test_foliation_lands_on_requested_grid(schwarzschild):
    fol = trace_foliation(schwarzschild, 0, 0, sigma_grid=[40.0, 30.0, 60.0], with_lapse=False)
    assert set(fol.sigmas) >= {30.0, 40.0, 60.0}
    assert not fol.lapses


def test_near_critical_leaf_error_when_load_hits_kernel(euclidean_leaf):
    geom = euclidean_leaf.geom
    load = geom.grid.basis[0].T @ (geom.measure * geom.grid.directions[:, 2])
    with pytest.raises(NearCriticalLeafError):
        solve_stability(euclidean_leaf.stability, load)


def test_kernel_free_load_is_solved_by_pseudo_inverse(euclidean_leaf):
    geom = euclidean_leaf.geom
    Y = geom.grid.basis[0]
    load = Y.T @ (geom.measure * np.full(geom.grid.n_nodes, 2 / 100.0))
    c = solve_stability(euclidean_leaf.stability, load, load_scale=np.linalg.norm(load))
    # J acts as 2/σ² on constants, so u = 1
    assert_allclose(Y @ c, 1.0, atol=1e-10)


def test_no_convergence_error_carries_history():
    with pytest.raises(NoConvergenceError) as info:
        solve_cmc(ambient.euclidean(), 7.0, EmbeddedSphere.round(6.5, 24), max_iter=1)
    assert len(info.value.residual_history) == 2


def test_continuation_aborted_returns_partial():
    policy = ContinuationPolicy(max_iter=1, initial_radius=5.0)
    with pytest.raises(ContinuationAborted) as info:
        trace_foliation(ambient.schwarzschild(1.0), 30.0, 60.0, policy)
    assert info.value.partial is not None and info.value.partial.leaves == []


def test_leaf_serialization(schwarzschild_leaf50):
    d = schwarzschild_leaf50.to_dict()
    assert d["sigma"] == 50.0 and d["residual"] == schwarzschild_leaf50.residual
    assert EmbeddedSphere.from_dict(d["sphere"]).base_radius == schwarzschild_leaf50.sphere.base_radius


def test_negative_mass_leaf_is_unstable_but_controlled():
    leaf = solve_cmc(ambient.schwarzschild(-1.0), 50.0, EmbeddedSphere.round(52.0, 24))
    mf = leaf.stability.mean_free_eigenvalues(leaf.geom.grid)
    assert_allclose(hawking_mass(leaf.geom), -1.0, rtol=1e-10)
    assert mf[0] < 0
    assert abs(mf[0] / (-6.0 / 50.0**3) - 1) < 0.1
    assert instability_margin(leaf, 1.0) > 0


def test_perturbed_leaves_become_round_fast():
    met = ambient.perturbed_schwarzschild(1.0, 0.1, 1.0, 1.0)
    fol = trace_foliation(met, 0, 0, sigma_grid=[25.0, 50.0, 100.0], with_lapse=False)
    kt = [regularity_report(met, leaf.sphere, geom=leaf.geom).linf_tracefree for leaf in fol.leaves]
    eps = 0.4
    assert np.polyfit(np.log(fol.sigmas), np.log(kt), 1)[0] <= -1.5 - eps + 0.2
