"""Mixed finite-element solve of the piecewise-lambda^2 Poisson equation (1D).

First-order form on the whole domain: lambda^-2 E + grad(Phi) = 0,
div(E) = f, so E = -lambda^2 grad(Phi).  The flux space is continuous
piecewise P_{k+1} (node continuity is the 1D form of normal-trace
continuity, so E is single-valued at the interface by construction); the
potential space is discontinuous P_k.  Dirichlet data enters weakly through
the boundary functional, never strongly.

The assembled block system

    [[A, -D], [-D^T, 0]] [E, Phi] = [H, -F]

is symmetric indefinite, time independent, and factorized exactly once;
only the right-hand side is rebuilt as densities evolve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from pecsolve import linalg
from pecsolve.basis import DGField, legendre_values, quadrature_points
from pecsolve.errors import SingularSystemError
from pecsolve.mesh import Mesh1D
from pecsolve.physics import ALPHA_N, ALPHA_P, DopingProfile, MaterialParams


def _flux_basis_tables(k: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and xi-derivatives of [hat_l, hat_r, bubbles...] (local dim k+2)."""
    xi = np.asarray(xi, dtype=float)
    nloc = k + 2
    vals = np.zeros((nloc, xi.size))
    ders = np.zeros((nloc, xi.size))
    vals[0] = 0.5 * (1.0 - xi)
    ders[0] = -0.5
    vals[1] = 0.5 * (1.0 + xi)
    ders[1] = 0.5
    # bubbles (1 - xi^2) * P_j(xi), j = 0..k-1; vanish at both endpoints
    from numpy.polynomial import legendre as npleg

    for j in range(k):
        coef = np.zeros(j + 1)
        coef[j] = 1.0
        pj = npleg.legval(xi, coef)
        dpj = npleg.legval(xi, npleg.legder(coef)) if j > 0 else np.zeros_like(xi)
        vals[2 + j] = (1.0 - xi**2) * pj
        ders[2 + j] = -2.0 * xi * pj + (1.0 - xi**2) * dpj
    return vals, ders


@dataclass
class MixedField:
    """Potential (DG) and scaled electric field (continuous flux space)."""

    mesh: Mesh1D
    degree: int
    e_coeffs: np.ndarray        # flux-space dofs: nodes first, then element bubbles
    phi: DGField                # potential on the whole-domain grid

    def _flux_local_dofs(self, e: int) -> np.ndarray:
        n_nodes = self.mesh.n_elements + 1
        k = self.degree
        return np.concatenate(
            [[e, e + 1], n_nodes + e * k + np.arange(k)]
        ).astype(int)

    def e_values(self, ref_table: np.ndarray) -> np.ndarray:
        """E at per-element reference points given a flux basis table (k+2, nq)."""
        n_el = self.mesh.n_elements
        out = np.empty((n_el, ref_table.shape[1]))
        for e in range(n_el):
            out[e] = self.e_coeffs[self._flux_local_dofs(e)] @ ref_table
        return out

    def e_at(self, x: float, side: str = "right") -> float:
        grid = self.mesh.whole_grid()
        e = grid.element_of(x, side=side)
        xi = 2.0 * (x - grid.edges[e]) / (grid.edges[e + 1] - grid.edges[e]) - 1.0
        vals, _ = _flux_basis_tables(self.degree, np.array([xi]))
        return float(self.e_coeffs[self._flux_local_dofs(e)] @ vals[:, 0])

    def e_on_element(self, e: int, x_points: np.ndarray) -> np.ndarray:
        """Field values at arbitrary points inside one (global) element."""
        edges = self.mesh.nodes
        xi = 2.0 * (np.asarray(x_points) - edges[e]) / (edges[e + 1] - edges[e]) - 1.0
        vals, _ = _flux_basis_tables(self.degree, xi)
        return self.e_coeffs[self._flux_local_dofs(e)] @ vals

    def e_at_interface(self) -> float:
        """Exact nodal value; identical from both sides by conformity."""
        return float(self.e_coeffs[self.mesh.interface_node_index])

    def phi_at(self, x: float, side: str = "right") -> float:
        return float(self.phi.eval(x, side=side))


@dataclass
class SaddleSystem:
    """Factorized mixed Poisson operator plus quadrature caches for the rhs."""

    mesh: Mesh1D
    degree: int
    boundary: tuple[str, str]
    n_flux: int
    n_phi: int
    matrix: sp.csr_matrix = field(repr=False)
    fact: linalg.Factorization = field(repr=False)
    flux_keep: np.ndarray = field(repr=False)      # kept flux dofs (Neumann ends dropped)
    xq: np.ndarray = field(repr=False)             # (n_el, nq) quadrature points
    wq: np.ndarray = field(repr=False)             # (nq,) reference weights
    phi_table: np.ndarray = field(repr=False)      # (k+1, nq) orthonormal basis values
    psi_table: np.ndarray = field(repr=False)      # (k+2, nq) flux basis values
    _doping_key: int | None = None
    _doping_nq: np.ndarray | None = None

    def flux_local_dofs(self, e: int) -> np.ndarray:
        n_nodes = self.mesh.n_elements + 1
        k = self.degree
        return np.concatenate([[e, e + 1], n_nodes + e * k + np.arange(k)]).astype(int)

    def doping_at_quadrature(self, doping: DopingProfile) -> np.ndarray:
        if self._doping_key != id(doping):
            n_s = self.mesh.n_semiconductor
            nq = self.xq.shape[1]
            out = np.zeros((self.mesh.n_elements, nq))
            _, _, net = doping.eval(self.xq[:n_s].ravel())
            out[:n_s] = np.asarray(net).reshape(n_s, nq)
            self._doping_key = id(doping)
            self._doping_nq = out
        return self._doping_nq


def assemble_poisson(
    mesh: Mesh1D,
    lambda2_s: float,
    lambda2_e: float,
    degree: int = 1,
    boundary: tuple[str, str] = ("dirichlet", "dirichlet"),
) -> SaddleSystem:
    """Assemble and factorize the saddle system once for the whole run."""
    if lambda2_s <= 0.0 or lambda2_e <= 0.0:
        raise ValueError("lambda^2 must be positive on both subdomains")
    k = degree
    n_el = mesh.n_elements
    n_nodes = n_el + 1
    n_flux_full = n_nodes + k * n_el
    n_phi = n_el * (k + 1)

    xi, w = quadrature_points(k)
    psi_vals, psi_ders = _flux_basis_tables(k, xi)
    phi_vals = legendre_values(k, xi)
    h = mesh.element_h()
    edges = mesh.nodes
    mid = 0.5 * (edges[:-1] + edges[1:])
    xq = mid[:, None] + 0.5 * h[:, None] * xi[None, :]

    a_blk = linalg.SparseMatrix(n_flux_full, n_flux_full, symmetric=True)
    d_blk = linalg.SparseMatrix(n_flux_full, n_phi)
    for e in range(n_el):
        lam2 = lambda2_s if mesh.is_semiconductor_element(e) else lambda2_e
        fdofs = np.concatenate([[e, e + 1], n_nodes + e * k + np.arange(k)]).astype(int)
        pdofs = e * (k + 1) + np.arange(k + 1)
        # (psi_i, lambda^-2 psi_j): jacobian h/2
        local_a = (0.5 * h[e] / lam2) * np.einsum("iq,jq,q->ij", psi_vals, psi_vals, w)
        # (psi_i', phi_a): dpsi/dx = psi' * 2/h, jacobian h/2, phi scale sqrt(2/h)
        local_d = np.sqrt(2.0 / h[e]) * np.einsum("iq,aq,q->ia", psi_ders, phi_vals, w)
        a_blk.add_block(fdofs, fdofs, local_a)
        d_blk.add_block(fdofs, pdofs, local_d)

    a = a_blk.tocsr()
    d = d_blk.tocsr()

    keep = np.arange(n_flux_full)
    if boundary[0] == "neumann" or boundary[1] == "neumann":
        drop = []
        if boundary[0] == "neumann":
            drop.append(0)
        if boundary[1] == "neumann":
            drop.append(n_el)
        keep = np.array([i for i in range(n_flux_full) if i not in drop])
        a = a[keep][:, keep]
        d = d[keep]

    system = sp.bmat([[a, -d], [-d.T, None]], format="csr")
    try:
        fact = linalg.factorize(system)
    except SingularSystemError as exc:
        raise SingularSystemError(f"Poisson saddle system is singular: {exc}") from exc

    return SaddleSystem(
        mesh=mesh,
        degree=k,
        boundary=boundary,
        n_flux=keep.size,
        n_phi=n_phi,
        matrix=system,
        fact=fact,
        flux_keep=keep,
        xq=xq,
        wq=w,
        phi_table=phi_vals,
        psi_table=psi_vals,
    )


def assemble_charge_rhs(
    system: SaddleSystem,
    f_quad: np.ndarray,
    phi_contact: float,
    phi_anode: float,
) -> np.ndarray:
    """Right-hand side [H, -F] from source values at the cached quadrature points."""
    mesh = system.mesh
    k = system.degree
    h = mesh.element_h()
    n_el = mesh.n_elements
    n_nodes = n_el + 1

    h_vec = np.zeros(n_nodes + k * n_el)
    if system.boundary[0] == "dirichlet":
        h_vec[0] = phi_contact          # -(n . psi) Phi with n = -1 at the left end
    if system.boundary[1] == "dirichlet":
        h_vec[n_el] = -phi_anode
    h_vec = h_vec[system.flux_keep]

    scale = np.sqrt(2.0 / h)
    f_vec = (
        0.5 * h[:, None] * scale[:, None] * (f_quad * system.wq[None, :]) @ system.phi_table.T
    ).ravel()
    return np.concatenate([h_vec, -f_vec])


def solve_potential(
    system: SaddleSystem,
    densities: dict[str, DGField],
    doping: DopingProfile,
    params: MaterialParams,
    phi_app: float,
) -> MixedField:
    """One Poisson solve with lagged densities as data."""
    mesh = system.mesh
    n_s = mesh.n_semiconductor
    f_quad = system.doping_at_quadrature(doping).copy()
    f_quad[:n_s] += ALPHA_P * densities["p"].values_at(system.phi_table)
    f_quad[:n_s] += ALPHA_N * densities["n"].values_at(system.phi_table)
    f_quad[n_s:] += params.alpha_o * densities["o"].values_at(system.phi_table)
    f_quad[n_s:] += params.alpha_r * densities["r"].values_at(system.phi_table)

    rhs = assemble_charge_rhs(system, f_quad, params.phi_bi + phi_app, params.phi_inf)
    sol = system.fact.solve(rhs)

    e_coeffs = np.zeros(mesh.n_elements + 1 + system.degree * mesh.n_elements)
    e_coeffs[system.flux_keep] = sol[: system.n_flux]
    phi_coeffs = sol[system.n_flux :].reshape(mesh.n_elements, system.degree + 1)
    phi = DGField(mesh.whole_grid(), system.degree, phi_coeffs)
    return MixedField(mesh=mesh, degree=system.degree, e_coeffs=e_coeffs, phi=phi)


def divergence_residual(system: SaddleSystem, mixed: MixedField, f_quad: np.ndarray) -> float:
    """Relative residual of the divergence block, (w, div E) = (w, f)."""
    mesh = system.mesh
    k = system.degree
    h = mesh.element_h()
    scale = np.sqrt(2.0 / h)
    f_vec = (
        0.5 * h[:, None] * scale[:, None] * (f_quad * system.wq[None, :]) @ system.phi_table.T
    ).ravel()

    xi, w = quadrature_points(k)
    _, psi_ders = _flux_basis_tables(k, xi)
    phi_vals = system.phi_table
    div_vec = np.zeros_like(f_vec)
    for e in range(mesh.n_elements):
        dofs = system.flux_local_dofs(e)
        # div E on the element: E'(x) = sum c_i psi_i'(xi) * (2/h)
        de = (mixed.e_coeffs[dofs] @ psi_ders) * (2.0 / h[e])
        pdofs = e * (k + 1) + np.arange(k + 1)
        div_vec[pdofs] = 0.5 * h[e] * scale[e] * (phi_vals @ (w * de))
    denom = max(float(np.linalg.norm(f_vec)), float(np.linalg.norm(div_vec)), 1.0)
    return float(np.linalg.norm(div_vec - f_vec)) / denom
