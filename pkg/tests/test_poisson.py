import numpy as np
import pytest

from pecsolve.basis import project_to_dg
from pecsolve.errors import SingularSystemError
from pecsolve.mesh import build_interval_mesh
from pecsolve.physics import DopingProfile, MaterialParams
from pecsolve.poisson import (
    assemble_charge_rhs,
    assemble_poisson,
    divergence_residual,
    solve_potential,
)


def _mesh(n=8):
    return build_interval_mesh(-1.0, 0.0, 1.0, n, n)


def _zero_densities(mesh, k=1):
    gs, ge = mesh.semiconductor_grid(), mesh.electrolyte_grid()
    zs = project_to_dg(lambda x: 0.0 * x, gs, k)
    ze = project_to_dg(lambda x: 0.0 * x, ge, k)
    return {"n": zs, "p": zs, "r": ze, "o": ze}


def _params(**kw):
    defaults = dict(lambda2_s=1.0, lambda2_e=1.0, phi_bi=0.0, phi_inf=0.0,
                    alpha_r=-0.5, alpha_o=0.5)
    defaults.update(kw)
    return MaterialParams(**defaults)


def test_flux_mass_block_symmetric():
    mesh = build_interval_mesh(-1.0, 0.0, 1.0, 1, 1)
    system = assemble_poisson(mesh, 1.0, 1.0, degree=1)
    n_f = system.n_flux
    a = system.matrix[:n_f, :n_f].toarray()
    assert np.max(np.abs(a - a.T)) < 1e-14
    # whole saddle matrix is symmetric indefinite
    k = system.matrix.toarray()
    assert np.max(np.abs(k - k.T)) < 1e-14
    eigs = np.linalg.eigvalsh(k)
    assert eigs.min() < 0 < eigs.max()


def test_device_lambda_assembly_deterministic():
    mesh = _mesh()
    s1 = assemble_poisson(mesh, 1.70215e-3, 1.43038e-1, degree=1)
    s2 = assemble_poisson(mesh, 1.70215e-3, 1.43038e-1, degree=1)
    assert np.array_equal(s1.matrix.toarray(), s2.matrix.toarray())


def test_constant_dirichlet_data_gives_constant_potential():
    mesh = _mesh()
    system = assemble_poisson(mesh, 1.0, 1.0)
    params = _params(phi_bi=3.0, phi_inf=3.0)
    mixed = solve_potential(system, _zero_densities(mesh), DopingProfile.uniform(-1, 0, 0.0), params, 0.0)
    for x in (-0.8, -0.3, 0.4, 0.9):
        assert mixed.phi_at(x) == pytest.approx(3.0, abs=1e-11)
        assert mixed.e_at(x) == pytest.approx(0.0, abs=1e-11)


def test_linear_potential_uniform_lambda():
    mesh = _mesh()
    system = assemble_poisson(mesh, 1.0, 1.0)
    params = _params(phi_inf=1.0)  # Phi(-1)=0, Phi(1)=1
    mixed = solve_potential(system, _zero_densities(mesh), DopingProfile.uniform(-1, 0, 0.0), params, 0.0)
    assert mixed.e_at(0.37) == pytest.approx(-0.5, abs=1e-10)
    for x in (-0.5, 0.25):
        assert mixed.phi_at(x) == pytest.approx(0.5 * (x + 1.0), abs=1e-10)


def test_two_material_slab():
    mesh = _mesh()
    system = assemble_poisson(mesh, 1.0, 4.0)
    params = _params(lambda2_e=4.0, phi_inf=1.0)
    mixed = solve_potential(system, _zero_densities(mesh), DopingProfile.uniform(-1, 0, 0.0), params, 0.0)
    # flux continuity: E constant, slopes in ratio 4:1
    assert mixed.e_at(-0.6) == pytest.approx(-0.8, abs=1e-10)
    assert mixed.e_at(0.6) == pytest.approx(-0.8, abs=1e-10)
    slope_s = (mixed.phi_at(-0.25) - mixed.phi_at(-0.75)) / 0.5
    slope_e = (mixed.phi_at(0.75) - mixed.phi_at(0.25)) / 0.5
    assert slope_s / slope_e == pytest.approx(4.0, rel=1e-9)


def test_interface_flux_point_continuity():
    mesh = _mesh()
    system = assemble_poisson(mesh, 1.70215e-3, 1.43038e-1)
    params = MaterialParams()
    dens = _zero_densities(mesh)
    doping = DopingProfile.uniform(-1, 0, 2.0)
    mixed = solve_potential(system, dens, doping, params, 0.0)
    left = mixed.e_at(mesh.interface_x, side="left")
    right = mixed.e_at(mesh.interface_x, side="right")
    assert left == right == mixed.e_at_interface()


def test_discrete_divergence_identity():
    mesh = _mesh(10)
    system = assemble_poisson(mesh, 1.70215e-3, 1.43038e-1)
    params = MaterialParams()
    gs, ge = mesh.semiconductor_grid(), mesh.electrolyte_grid()
    dens = {
        "n": project_to_dg(lambda x: 2.0 + 0.3 * np.sin(3 * x), gs, 1),
        "p": project_to_dg(lambda x: np.exp(x), gs, 1),
        "r": project_to_dg(lambda x: 5.0 - x, ge, 1),
        "o": project_to_dg(lambda x: 4.0 + x**2, ge, 1),
    }
    doping = DopingProfile.uniform(-1, 0, 2.0)
    mixed = solve_potential(system, dens, doping, params, 0.5)
    n_s = mesh.n_semiconductor
    f_quad = system.doping_at_quadrature(doping).copy()
    f_quad[:n_s] += dens["p"].values_at(system.phi_table) - dens["n"].values_at(system.phi_table)
    f_quad[n_s:] += params.alpha_o * dens["o"].values_at(system.phi_table)
    f_quad[n_s:] += params.alpha_r * dens["r"].values_at(system.phi_table)
    assert divergence_residual(system, mixed, f_quad) < 1e-10


def test_factorization_reused_across_solves():
    mesh = _mesh()
    system = assemble_poisson(mesh, 1.0, 1.0)
    handle = system.fact
    params = _params(phi_inf=1.0)
    doping = DopingProfile.uniform(-1, 0, 0.0)
    for phi_app in (0.0, 0.5, 1.0):
        solve_potential(system, _zero_densities(mesh), doping, params, phi_app)
        assert system.fact is handle


def test_all_neumann_is_singular():
    mesh = _mesh(4)
    with pytest.raises(SingularSystemError):
        assemble_poisson(mesh, 1.0, 1.0, boundary=("neumann", "neumann"))


def test_quadratic_rhs_manufactured():
    # -Phi'' = 2 with Phi(+-1)=0 -> Phi = 1 - x^2, E = -Phi' = 2x... with
    # lambda = 1: E = -grad(Phi) so E(x) = 2x
    mesh = _mesh(12)
    system = assemble_poisson(mesh, 1.0, 1.0, degree=2)
    f_quad = np.full_like(system.xq, 2.0)
    rhs = assemble_charge_rhs(system, f_quad, 0.0, 0.0)
    sol = system.fact.solve(rhs)
    e_coeffs = np.zeros(mesh.n_elements + 1 + 2 * mesh.n_elements)
    e_coeffs[system.flux_keep] = sol[: system.n_flux]
    from pecsolve.basis import DGField
    from pecsolve.poisson import MixedField

    phi = DGField(mesh.whole_grid(), 2, sol[system.n_flux:].reshape(-1, 3))
    mixed = MixedField(mesh=mesh, degree=2, e_coeffs=e_coeffs, phi=phi)
    for x in (-0.61, 0.0, 0.42):
        assert mixed.phi_at(x) == pytest.approx(1 - x**2, abs=1e-10)
        assert mixed.e_at(x) == pytest.approx(2 * x, abs=1e-10)
