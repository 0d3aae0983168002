import numpy as np
import pytest

from pecsolve.device import DeviceConfig
from pecsolve.mesh import build_interval_mesh
from pecsolve.physics import DopingProfile, MaterialParams, TransferModel


@pytest.fixture
def equilibrium_config():
    """Zero drift, zero rates, zero net sources: constants are a fixed point."""
    rho_i = 2.564e-7
    params = MaterialParams(
        phi_bi=0.0, phi_inf=0.0, alpha_r=-0.5, alpha_o=0.5, rho_i=rho_i
    )
    return DeviceConfig(
        name="equilibrium",
        x_left=-1.0, x_interface=0.0, x_right=1.0,
        n_semiconductor=6, n_electrolyte=6,
        params=params,
        doping=DopingProfile.uniform(-1.0, 0.0, rho_i, rho_i),  # N = 0, rho_n(0) = rho_i
        rho_n_e=rho_i, rho_p_e=rho_i,
        rho_r_inf=3.0, rho_o_inf=3.0,
        transfer=TransferModel("full", 0.0, 0.0),
        gamma=0,
    )


@pytest.fixture
def mini_config():
    """Small, fast-relaxing device for end-to-end stepping tests."""
    params = MaterialParams().with_neutral_redox(5.0, 4.0)
    return DeviceConfig(
        name="mini",
        x_left=-0.1, x_interface=0.0, x_right=0.1,
        n_semiconductor=12, n_electrolyte=12,
        params=params,
        doping=DopingProfile.uniform(-0.1, 0.0, 2.0),
        rho_n_e=2.0, rho_p_e=0.0,
        rho_r_inf=5.0, rho_o_inf=4.0,
        transfer=TransferModel("full", k_et=1e-11, k_ht=1e-4, v_n=4e-11, v_p=5e-4),
        gamma=0,
        tol_ss=1e-6,
        max_steps=60_000,
    )
