"""Fluid-model algebra: mobilities, capillary laws, mixing-energy identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poroflow import physics


def test_mms_model_frozen_values():
    model = physics.mms_fluid_model()
    assert model.energy.gamma_a == pytest.approx(6.3 / np.log(100.0), rel=1e-12)
    assert physics.mobility(model, "a", 0.5) == pytest.approx(0.5, rel=1e-12)
    assert physics.mobility(model, "l", 0.5) == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert physics.mobility(model, "total", 0.5) == pytest.approx(5.0 / 6.0, rel=1e-12)
    assert physics.capillary_pressure(model, 0.5) == pytest.approx(
        0.9482444863415408, rel=1e-12)
    assert physics.free_energy_density(model.energy, 0.5) == pytest.approx(
        -1.158136052168392, rel=1e-12)


def test_q5spot_model_frozen_values():
    model = physics.q5spot_fluid_model()
    # kr_a(1)/mu_a with mu_a = 5e-4 Pa s
    assert physics.mobility(model, "a", 1.0) == pytest.approx(2000.0, rel=1e-6)
    assert physics.capillary_pressure(model, 0.5) == pytest.approx(
        5e3 * 0.5 ** (-1.0 / 3.0), rel=1e-12)
    assert model.energy is None
    assert model.porosity == pytest.approx(0.2)


def test_mobility_positivity_and_capillary_slope():
    s = np.linspace(1e-3, 1 - 1e-3, 1000)
    for model in (physics.mms_fluid_model(), physics.q5spot_fluid_model()):
        assert np.all(physics.mobility(model, "a", s) >= 0.0)
        assert np.all(physics.mobility(model, "l", s) >= 0.0)
        assert np.all(physics.mobility(model, "total", s) > 0.0)
        assert np.all(model.capillary.derivative(s) < 0.0)


def test_validate_model_clean_on_both_models():
    for model in (physics.mms_fluid_model(), physics.q5spot_fluid_model()):
        report = physics.validate_model(model)
        assert report.ok, report.violations
        assert "violations: none" in report.describe()


def test_mobility_derivative_matches_finite_differences():
    h = 1e-6
    s = np.linspace(0.05, 0.95, 19)
    for model in (physics.mms_fluid_model(), physics.q5spot_fluid_model()):
        for phase in ("l", "a"):
            fd = (physics.mobility(model, phase, s + h)
                  - physics.mobility(model, phase, s - h)) / (2 * h)
            got = physics.mobility_derivative(model, phase, s)
            assert np.allclose(got, fd, rtol=1e-6, atol=1e-6)


def test_capillary_derivatives_match_finite_differences():
    h = 1e-6
    s = np.linspace(0.05, 0.95, 19)
    for model in (physics.mms_fluid_model(), physics.q5spot_fluid_model()):
        law = model.capillary
        fd1 = (law.value(s + h) - law.value(s - h)) / (2 * h)
        assert np.allclose(law.derivative(s), fd1, rtol=1e-7)
        fd2 = (law.derivative(s + h) - law.derivative(s - h)) / (2 * h)
        assert np.allclose(law.second_derivative(s), fd2, rtol=1e-5)


def test_chemical_potential_is_energy_derivative():
    params = physics.EnergyParams(gamma_a=1.2, gamma_l=0.8, gamma_al=1.5)
    h = 1e-7
    s = np.linspace(0.05, 0.95, 37)
    fd = (physics.free_energy_density(params, s + h)
          - physics.free_energy_density(params, s - h)) / (2 * h)
    assert np.allclose(physics.chemical_potential(params, s), fd, atol=1e-6)
    fd2 = (physics.chemical_potential(params, s + h)
           - physics.chemical_potential(params, s - h)) / (2 * h)
    assert np.allclose(physics.chemical_potential_derivative(params, s), fd2,
                       rtol=1e-5)


def test_mms_capillary_consistent_with_energy():
    # nu_a = -p_c ties the capillary law to the mixing energy
    model = physics.mms_fluid_model()
    s = np.linspace(0.05, 0.95, 19)
    nu = physics.chemical_potential(model.energy, s)
    assert np.allclose(nu, -physics.capillary_pressure(model, s), rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    gamma_a=st.floats(0.1, 5.0),
    gamma_l=st.floats(0.0, 5.0),
    gamma_al=st.floats(-3.0, 3.0),
    s0=st.floats(1e-4, 1 - 1e-4),
    s1=st.floats(1e-4, 1 - 1e-4),
)
def test_discrete_gradient_exactness(gamma_a, gamma_l, gamma_al, s0, s1):
    # the defining identity: F(s1) - F(s0) = nu_half * (s1 - s0), exactly
    params = physics.EnergyParams(gamma_a=gamma_a, gamma_l=gamma_l,
                                  gamma_al=gamma_al)
    f0 = physics.free_energy_density(params, s0)
    f1 = physics.free_energy_density(params, s1)
    nu = physics.chemical_potential_midpoint(params, s0, s1)
    scale = 1.0 + abs(f0) + abs(f1)
    assert abs(f1 - f0 - nu * (s1 - s0)) <= 1e-12 * scale


@settings(max_examples=100, deadline=None)
@given(
    s0=st.floats(0.05, 0.95),
    s1=st.floats(0.05, 0.95),
)
def test_discrete_gradient_symmetry(s0, s1):
    params = physics.EnergyParams(gamma_a=1.37, gamma_l=0.4, gamma_al=2.0)
    a = physics.chemical_potential_midpoint(params, s0, s1)
    b = physics.chemical_potential_midpoint(params, s1, s0)
    assert a == b


def test_discrete_gradient_second_order_consistency():
    # nu_half(s0, s1) - nu(mid) shrinks at second order in the increment
    params = physics.EnergyParams(gamma_a=1.3, gamma_l=0.7, gamma_al=2.1)
    errs = []
    for tau in (0.1, 0.05, 0.025, 0.0125):
        a = 0.3 + 0.2 * np.sin(1.0)
        b = 0.3 + 0.2 * np.sin(1.0 + tau)
        errs.append(abs(physics.chemical_potential_midpoint(params, a, b)
                        - physics.chemical_potential(params, 0.5 * (a + b))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.diff(rates) > 0)  # approaching 2 from below
    assert rates[-1] > 1.9


def test_discrete_gradient_degenerate_branch_continuous():
    params = physics.EnergyParams(gamma_a=1.3, gamma_l=0.7, gamma_al=2.1)
    near = physics.chemical_potential_midpoint(params, 0.4, 0.4 + 2e-8)
    limit = physics.chemical_potential(params, 0.4 + 1e-8)
    assert near == pytest.approx(limit, abs=1e-7)
    exact_same = physics.chemical_potential_midpoint(params, 0.4, 0.4)
    assert exact_same == pytest.approx(physics.chemical_potential(params, 0.4),
                                       rel=1e-12)


def test_midpoint_partials_match_finite_differences():
    params = physics.EnergyParams(gamma_a=1.3, gamma_l=0.7, gamma_al=2.1)

    def f(a, b):
        return physics.chemical_potential_midpoint(params, a, b)

    rng = np.random.default_rng(11)
    for _ in range(50):
        a = rng.uniform(0.1, 0.9)
        b = a + rng.choice([1.0, -1.0]) * 10.0 ** rng.uniform(-4, -0.5)
        b = float(np.clip(b, 0.05, 0.95))
        if abs(b - a) < 3e-4:  # keep the FD oracle away from the branch switch
            continue
        h = 1e-6
        d0, d1 = physics.chemical_potential_midpoint_partials(params, a, b)
        assert d0 == pytest.approx((f(a + h, b) - f(a - h, b)) / (2 * h), abs=2e-5)
        assert d1 == pytest.approx((f(a, b + h) - f(a, b - h)) / (2 * h), abs=2e-5)


def test_midpoint_partials_degenerate_limit():
    params = physics.EnergyParams(gamma_a=1.3, gamma_l=0.7, gamma_al=2.1)
    d0, d1 = physics.chemical_potential_midpoint_partials(params, 0.4, 0.4)
    limit = 0.5 * physics.chemical_potential_derivative(params, 0.4)
    assert d0 == pytest.approx(limit, rel=1e-12)
    assert d1 == pytest.approx(limit, rel=1e-12)
    # continuity across the fallback threshold
    lo = physics.chemical_potential_midpoint_partials(params, 0.4, 0.4 + 0.9e-5)
    hi = physics.chemical_potential_midpoint_partials(params, 0.4, 0.4 + 1.1e-5)
    assert lo[0] == pytest.approx(hi[0], abs=1e-4)
    assert lo[1] == pytest.approx(hi[1], abs=1e-4)


def test_clamp_keeps_model_functions_finite():
    model = physics.mms_fluid_model()
    for s in (-0.2, 0.0, 1.0, 1.3):
        assert np.isfinite(physics.capillary_pressure(model, s))
        assert np.isfinite(physics.free_energy_density(model.energy, s))
        assert np.isfinite(physics.chemical_potential(model.energy, s))


def test_log_capillary_requires_negative_coefficient():
    with pytest.raises(ValueError):
        physics.LogCapillary(1.0)


def test_brooks_corey_requires_positive_parameters():
    with pytest.raises(ValueError):
        physics.BrooksCoreyCapillary(-5.0, 0.5)
    with pytest.raises(ValueError):
        physics.BrooksCoreyCapillary(5.0, -0.5)
