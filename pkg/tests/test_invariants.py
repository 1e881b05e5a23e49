import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from cmcfoliate import ambient
from cmcfoliate.cmc import trace_foliation
from cmcfoliate.invariants import (
    a1_ratio,
    adm_linear_momentum,
    adm_mass_flux,
    adm_mass_ricci,
    central_difference,
    cmc_linear_momentum,
    foliation_properties,
    hawking_limit_mass,
    mass_report,
    momentum_report,
)

EXPECT = json.loads(resources.files("cmcfoliate.fixtures").joinpath("schwarzschild_expectations.json").read_text())
BY_MOMENTUM = np.array([0.2, -0.1, 0.05])


@pytest.fixture(scope="module")
def wide_foliation(schwarzschild):
    return trace_foliation(schwarzschild, 25.0, 400.0, sigma_grid=[25, 50, 100, 200, 400], with_lapse=False)


@pytest.mark.parametrize("r", [100.0, 200.0])
def test_adm_flux_closed_forms(schwarzschild, r):
    phi = 1 + 1 / (2 * r)
    key = f"{r:.1f}"
    assert_allclose(adm_mass_flux(schwarzschild, r), phi**3, rtol=1e-12)
    assert_allclose(adm_mass_flux(schwarzschild, r), EXPECT["adm_flux_euclidean"][key], rtol=1e-12)
    assert_allclose(adm_mass_flux(schwarzschild, r, convention="induced"), EXPECT["adm_flux_induced"][key], rtol=1e-12)
    assert_allclose(adm_mass_ricci(schwarzschild, r), 1 / phi**2, rtol=1e-10)
    assert_allclose(adm_mass_ricci(schwarzschild, r), EXPECT["adm_ricci"][key], rtol=1e-10)


def test_adm_flux_error_halves_with_radius(schwarzschild):
    e100 = adm_mass_flux(schwarzschild, 100.0) - 1
    e200 = adm_mass_flux(schwarzschild, 200.0) - 1
    assert_allclose(e100 / e200, 2.0, rtol=0.01)


def test_adm_flux_rejects_unknown_convention(schwarzschild):
    with pytest.raises(ValueError):
        adm_mass_flux(schwarzschild, 100.0, convention="bogus")


def test_adm_mass_vanishes_in_euclidean_space():
    assert abs(adm_mass_flux(ambient.euclidean(), 50.0)) < 1e-15
    assert abs(adm_mass_ricci(ambient.euclidean(), 50.0)) < 1e-15


@given(st.floats(0.5, 3.0), st.floats(-5.0, 5.0), st.floats(-20.0, 20.0))
def test_hawking_limit_is_exact_on_model(a, b, c):
    s = np.array([20.0, 30.0, 50.0, 90.0, 160.0])
    lim, err = hawking_limit_mass(s, a + b / s + c / s**2)
    assert abs(lim - a) < 1e-9 * (1 + abs(b) + abs(c))
    assert err < 1e-9 * (1 + abs(b) + abs(c))


def test_hawking_limit_needs_four_leaves_over_factor_four():
    with pytest.raises(ValueError):
        hawking_limit_mass([10, 20, 30], [1, 1, 1])
    with pytest.raises(ValueError):
        hawking_limit_mass([10, 15, 20, 30], [1, 1, 1, 1])


def test_mass_report_on_schwarzschild(schwarzschild_foliation):
    rep = mass_report(schwarzschild_foliation, [100.0, 200.0])
    lim, err = rep.hawking_limit
    assert abs(lim - 1.0) < 1e-6 and err < 1e-6
    assert_allclose(rep.hawking, 1.0, rtol=1e-8)
    assert len(list(rep.rows())) > 0


def test_adm_momentum_of_toy_data():
    for a in (0.1, 0.3):
        p = adm_linear_momentum(ambient.toy_momentum_data(a), 400.0)
        assert_allclose(p, [a / 3, 0, 0], atol=1e-12)
    # independent of radius and of a shifted center
    d = ambient.toy_momentum_data(0.3)
    assert_allclose(adm_linear_momentum(d, 100.0), adm_linear_momentum(d, 400.0, center=(5.0, 0, 0)), atol=1e-12)


def test_adm_momentum_of_bowen_york_data():
    assert_allclose(adm_linear_momentum(ambient.bowen_york_data(BY_MOMENTUM), 400.0), -BY_MOMENTUM, rtol=1e-10)


def test_cmc_momentum_is_linear_in_data(schwarzschild_leaf50):
    p1 = cmc_linear_momentum(schwarzschild_leaf50, ambient.toy_momentum_data(0.1)).vector
    p3 = cmc_linear_momentum(schwarzschild_leaf50, ambient.toy_momentum_data(0.3)).vector
    assert np.abs(p3 - 3 * p1).max() < 1e-9


def test_cmc_momentum_of_toy_data_decays(wide_foliation):
    # the toy momentum density is not integrable, so the leaf momentum tends to 0, not a/3
    data = ambient.toy_momentum_data(0.3)
    p = np.array([cmc_linear_momentum(leaf, data).vector[0] for leaf in wide_foliation.leaves])
    assert_allclose(p * wide_foliation.sigmas, -2 * 0.3 / 3, rtol=0.1)


def test_cmc_momentum_of_bowen_york_converges_to_adm(wide_foliation):
    rep = momentum_report(wide_foliation, ambient.bowen_york_data(BY_MOMENTUM), 400.0)
    assert_allclose(rep.adm, -BY_MOMENTUM, rtol=1e-10)
    gaps = np.array(rep.agreement)
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] / np.linalg.norm(BY_MOMENTUM) < 0.005
    # gap·σ is roughly constant
    assert_allclose(gaps * wide_foliation.sigmas / np.linalg.norm(BY_MOMENTUM), 1.5, rtol=0.1)


def test_central_difference_is_exact_for_quadratics():
    s = np.array([1.0, 1.5, 2.5, 4.0, 4.2])
    d = central_difference(s, 3 * s**2 - s + 2)
    assert np.isnan(d[0]) and np.isnan(d[-1])
    assert_allclose(d[1:-1], 6 * s[1:-1] - 1, rtol=1e-12)


def test_foliation_properties_on_schwarzschild(schwarzschild_foliation):
    pr = foliation_properties(schwarzschild_foliation)
    s = pr.sigma
    inner = slice(1, -1)
    assert np.all(pr.a1 < 1e-10)
    assert np.all(pr.a3[inner] < 1e-10)
    # dA/dσ misses 2A(1 − m_H/σ)/σ by 16πm to leading order
    assert_allclose(pr.a2[inner] * s[inner] / (16 * np.pi), 1.0, atol=0.01)
    # |M| − 4πσ²(1 − 2m_H/σ) tends to 8πm², so the σ^{-1/2} ratio shrinks like σ^{-1/2}
    assert_allclose(pr.area_identity * np.sqrt(s) / (8 * np.pi), 1.0, atol=0.15)
    # ∂_σ m_H = 0 while 2(1 + m/σ − ū) ≈ −8m²/σ²
    assert_allclose(pr.mass_derivative_identity[inner] * s[inner] ** 2 / 8, 1.0, atol=0.25)


def test_foliation_properties_needs_lapses(schwarzschild):
    fol = trace_foliation(schwarzschild, 30.0, 60.0, with_lapse=False)
    with pytest.raises(ValueError):
        foliation_properties(fol)


def test_a1_not_applicable_without_mass(euclidean_leaf):
    assert np.isnan(a1_ratio(euclidean_leaf))


def test_foliation_properties_vanish_in_euclidean_space():
    fol = trace_foliation(ambient.euclidean(), 0, 0, sigma_grid=[5.0, 7.0, 10.0, 14.0])
    pr = foliation_properties(fol)
    assert np.all(np.isnan(pr.a1)) and pr.notes
    assert np.nanmax(pr.a2) < 1e-8
    assert np.nanmax(pr.a3) < 1e-8
