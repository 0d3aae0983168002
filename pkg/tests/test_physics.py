import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pecsolve.errors import ConfigError, InvalidDomainError
from pecsolve.physics import (
    DopingProfile,
    DopingSegment,
    MaterialParams,
    TransferModel,
    doping_eval,
    generation,
    srh,
    transfer,
)

RHO_I = 2.564e-7
TAU = 5e7


def test_srh_zero_at_equilibrium_product():
    assert srh(RHO_I, RHO_I, rho_i=RHO_I, tau_n=TAU, tau_p=TAU) == pytest.approx(0.0, abs=1e-30)


def test_srh_unit_densities():
    r = srh(1.0, 1.0, rho_i=RHO_I, tau_n=TAU, tau_p=TAU)
    expected = (1.0 - RHO_I**2) / (1e8 * (1.0 + RHO_I))
    assert r == pytest.approx(expected, rel=1e-12)
    assert r == pytest.approx(1.0e-8, rel=1e-5)


def test_srh_thermal_generation_at_zero():
    r = srh(0.0, 0.0, rho_i=RHO_I, tau_n=TAU, tau_p=TAU)
    assert r == pytest.approx(-RHO_I / 1e8, rel=1e-12)
    assert r == pytest.approx(-2.564e-15, rel=1e-4)


def test_srh_clamps_negative_densities():
    assert srh(-1.0, 0.5, rho_i=RHO_I, tau_n=TAU, tau_p=TAU) == srh(
        0.0, 0.5, rho_i=RHO_I, tau_n=TAU, tau_p=TAU
    )


@settings(max_examples=50, deadline=None)
@given(
    st.floats(min_value=0.0, max_value=1e3),
    st.floats(min_value=0.0, max_value=1e3),
    st.floats(min_value=1e-2, max_value=1e9),
    st.floats(min_value=1e-2, max_value=1e9),
)
def test_srh_symmetric_under_carrier_exchange(n, p, tn, tp):
    a = srh(n, p, rho_i=RHO_I, tau_n=tn, tau_p=tp)
    b = srh(p, n, rho_i=RHO_I, tau_n=tp, tau_p=tn)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_transfer_zero_excess():
    assert transfer(1e-11, 0.0, 29.0) == 0.0


def test_transfer_products():
    assert transfer(1e-11, 1.0, 29.0) == pytest.approx(2.9e-10, rel=1e-12)
    assert transfer(1e-4, -0.5, 30.0) == pytest.approx(-1.5e-3, rel=1e-12)


def test_transfer_clamps_counter_density_only():
    # negative counter density clamps to zero, negative excess passes through
    assert transfer(1.0, 2.0, -3.0) == 0.0
    assert transfer(1.0, -2.0, 3.0) == -6.0


@settings(max_examples=50, deadline=None)
@given(
    st.floats(min_value=-50, max_value=50),
    st.floats(min_value=0, max_value=50),
    st.floats(min_value=-5, max_value=5),
)
def test_transfer_bilinear_in_excess(x, y, a):
    lhs = transfer(1e-6, a * x, y)
    rhs = a * transfer(1e-6, x, y)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


SIGMA, G0 = 17.4974, 1.2e-11


def test_generation_dark():
    assert generation(0.3, sigma_a=SIGMA, g0=G0, x_entry=1.0, direction=-1.0, gamma=0) == 0.0


def test_generation_at_entry_point():
    g = generation(0.0, sigma_a=SIGMA, g0=G0, x_entry=0.0, direction=-1.0, gamma=1)
    assert g == pytest.approx(2.09969e-10, rel=1e-5)


def test_generation_decay_along_ray():
    g = generation(-0.1, sigma_a=SIGMA, g0=G0, x_entry=0.0, direction=-1.0, gamma=1)
    assert g == pytest.approx(2.099688e-10 * np.exp(-1.74974), rel=1e-6)
    assert g == pytest.approx(3.648e-11, rel=1e-3)


def test_generation_monotone_and_total_absorbed():
    from scipy.integrate import quad

    xs = np.linspace(-1.0, 0.0, 2001)
    g = generation(xs, sigma_a=SIGMA, g0=G0, x_entry=0.0, direction=-1.0, gamma=1)
    assert np.all(np.diff(g) >= 0.0)  # increases toward the entry point
    total, _ = quad(
        lambda x: generation(x, sigma_a=SIGMA, g0=G0, x_entry=0.0, direction=-1.0, gamma=1),
        -1.0, 0.0, epsabs=1e-25,
    )
    assert total <= G0 * (1 + 1e-10)
    assert total == pytest.approx(G0 * (1 - np.exp(-SIGMA)), rel=1e-8)


def _nd_profiles():
    from pecsolve.device import doping_step_profiles

    return doping_step_profiles()


def test_doping_profiles_match_tables():
    p = _nd_profiles()
    assert doping_eval(p["nd1"], -0.1)[0] == 2.0
    assert doping_eval(p["nd2"], -0.1)[0] == 10.0
    assert doping_eval(p["nd2"], -0.05)[0] == 2.0
    assert doping_eval(p["nd3"], -0.15)[0] == 10.0
    assert doping_eval(p["nd4"], -0.15)[0] == 20.0
    assert doping_eval(p["nd4"], -0.1)[0] == 2.0


def test_doping_segment_boundary_right_closed():
    p = _nd_profiles()["nd2"]
    nd, na, net = p.eval(-0.07)
    assert nd == 2.0  # breakpoint belongs to the right segment
    assert p.eval(0.0)[0] == 2.0


def test_doping_outside_domain_raises():
    p = _nd_profiles()["nd1"]
    with pytest.raises(InvalidDomainError):
        p.eval(0.5)


def test_doping_gap_rejected():
    with pytest.raises(ConfigError):
        DopingProfile((DopingSegment(-0.2, -0.1, 1.0, 0.0), DopingSegment(-0.05, 0.0, 1.0, 0.0)))


def test_material_params_validation():
    with pytest.raises(ConfigError):
        MaterialParams(mu_n=-1.0)
    with pytest.raises(ConfigError):
        MaterialParams(alpha_r=0.0, alpha_o=2.0)


def test_neutral_redox_defaults():
    p = MaterialParams().with_neutral_redox(30.0, 29.0)
    assert p.alpha_o - p.alpha_r == pytest.approx(1.0)
    assert p.alpha_o * 29.0 + p.alpha_r * 30.0 == pytest.approx(0.0, abs=1e-12)


def test_drift_coefficient_signs():
    p = MaterialParams()
    assert p.drift_coefficient("n") == pytest.approx(-1.0 / p.lambda2_s)
    assert p.drift_coefficient("p") == pytest.approx(+1.0 / p.lambda2_s)
    assert p.drift_coefficient("o") == pytest.approx(p.alpha_o / p.lambda2_e)


def test_transfer_model_validation():
    with pytest.raises(ConfigError):
        TransferModel("bogus")
    with pytest.raises(ConfigError):
        TransferModel("full", k_et=-1.0)
