"""LDG spatial operators for one transported species on a 1D subdomain.

The second-order drift-diffusion operator is rewritten with the total flux
q as auxiliary unknown:

    d(rho)/dt + div(q) = source,      q / mu = a * E * rho - grad(rho),

where a = alpha / lambda^2 is the drift coefficient of the hosting
subdomain and E the scaled electric field from the mixed Poisson solve
(E = -lambda^2 grad Phi).  Numerical fluxes on interior faces are the
alternating pair

    rho_hat = {rho} + beta [rho],     q_hat = {q} - [q] beta + tau [rho],

with beta = 0.5 (one-sided selection) by default and penalty
tau = tau_tilde * min(1/h1, 1/h2).  At a Dirichlet end rho_hat is the data
and q_hat = q + tau (rho - data) n with tau = tau_tilde / h; at the
reactive interface rho_hat is the one-sided interior trace and n.q_hat is
the transfer flux, which the steppers supply per step; at an insulated end
rho_hat = rho and n.q_hat = 0.

Unknown layout per carrier: z = [U, Q] with U the density and Q the flux
coefficients, both in the orthonormal modal basis, so (w, rho) = U exactly.
The per-step linear system is

    [[I + dt*(L_uu + c_int*S_sigma),  dt*L_uq ],
     [M_qu - D_drift(E),              (1/mu) I]]  [U, Q] = rhs,

where S_sigma is the rank-one interface trace block (implicit-in-self
schemes), and D_drift is assembled only by the fully implicit scheme;
explicit schemes move the drift to the right-hand side instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from pecsolve import linalg
from pecsolve.basis import DGField, legendre_derivs, legendre_values, quadrature_points
from pecsolve.mesh import BoundaryKind, IntervalGrid


@dataclass(frozen=True)
class CarrierSpec:
    """Physical closure data of one transported species."""

    species: str          # "n", "p", "r", "o" (free-form for test problems)
    domain: str           # "S" or "E"
    mu: float
    drift_coef: float     # alpha / lambda^2 of the hosting subdomain
    dirichlet_value: float

    def __post_init__(self):
        if self.domain not in ("S", "E"):
            raise ValueError(f"domain must be 'S' or 'E', got {self.domain!r}")
        if self.species in ("n", "p") and self.domain != "S":
            raise ValueError(f"species {self.species} lives in the semiconductor")
        if self.species in ("r", "o") and self.domain != "E":
            raise ValueError(f"species {self.species} lives in the electrolyte")
        if self.mu <= 0.0:
            raise ValueError("mobility must be positive")


def penalty_tau(tau_tilde: float, h1: float, h2: float | None = None) -> float:
    """Face penalty: interior tau~*min(1/h1,1/h2), boundary tau~/h."""
    if tau_tilde <= 0.0:
        raise ValueError("tau_tilde must be positive")
    if h2 is None:
        return tau_tilde / h1
    return tau_tilde * min(1.0 / h1, 1.0 / h2)


@dataclass
class LDGOperators:
    """Time-independent blocks and quadrature caches for one carrier."""

    grid: IntervalGrid
    degree: int
    mu: float
    tau_tilde: float
    beta: float
    left: BoundaryKind
    right: BoundaryKind
    dirichlet_value: float
    l_uu: sp.csr_matrix = field(repr=False)
    l_uq: sp.csr_matrix = field(repr=False)
    m_qu: sp.csr_matrix = field(repr=False)
    b_l: np.ndarray = field(repr=False)      # Dirichlet penalty load (rho equation)
    b_m: np.ndarray = field(repr=False)      # Dirichlet data load (flux equation)
    sigma_w: np.ndarray = field(repr=False)  # basis traces at the interface end
    sigma_outer: sp.csr_matrix = field(repr=False)
    identity: sp.csr_matrix = field(repr=False)
    xq: np.ndarray = field(repr=False)       # (n_el, nq) physical quadrature points
    wq: np.ndarray = field(repr=False)
    p_ref: np.ndarray = field(repr=False)    # (k+1, nq) raw reference Legendre values
    scale: np.ndarray = field(repr=False)    # sqrt(2/h) per element
    sqrt_h_half: np.ndarray = field(repr=False)

    @property
    def n_dof(self) -> int:
        return self.grid.n_elements * (self.degree + 1)

    def element_dofs(self, e: int) -> np.ndarray:
        return e * (self.degree + 1) + np.arange(self.degree + 1)

    def field_values_at_quadrature(self, coeffs: np.ndarray) -> np.ndarray:
        """(n_el, nq) point values from (n_el, k+1) coefficients."""
        return (coeffs @ self.p_ref) * self.scale[:, None]

    def interface_trace(self, coeffs: np.ndarray) -> float:
        """One-sided density trace at the interface end."""
        return float(self.sigma_w @ coeffs.ravel())

    def source_load(self, s_quad: np.ndarray) -> np.ndarray:
        """(w, s) with s given at the cached quadrature points; flat (n_dof,)."""
        return (
            self.sqrt_h_half[:, None] * (s_quad * self.wq[None, :]) @ self.p_ref.T
        ).ravel()

    def drift_load(self, drift_coef: float, e_quad: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Explicit drift vector a*(bw, E rho) from lagged density coefficients."""
        rho_ref = coeffs @ self.p_ref  # reference-scaled values; jacobians cancel
        return drift_coef * ((e_quad * rho_ref * self.wq[None, :]) @ self.p_ref.T).ravel()

    def drift_matrix(self, drift_coef: float, e_field, elem_offset: int = 0) -> sp.csr_matrix:
        """Implicit drift block a*(bw, E rho); fresh element-by-element assembly.

        The mixed-solve field changes every step, so each element queries it
        at the quadrature points and the local blocks are rebuilt and
        re-scattered on every call.
        """
        builder = linalg.SparseMatrix(self.n_dof, self.n_dof)
        pw = self.p_ref * self.wq[None, :]
        for e in range(self.grid.n_elements):
            dofs = self.element_dofs(e)
            e_vals = e_field.e_on_element(elem_offset + e, self.xq[e])
            local = (pw * e_vals[None, :]) @ self.p_ref.T
            builder.add_block(dofs, dofs, drift_coef * local)
        return builder.tocsr()

    def build_system(
        self,
        dt: float,
        interface_coeff: float = 0.0,
        drift: sp.csr_matrix | None = None,
    ) -> sp.csr_matrix:
        """Assemble the 2x2 block system for one implicit solve.

        The density row is scaled by 1/dt, so the infinite-step limit is the
        well-scaled stationary operator and the pivot heuristics stay valid
        for any step size.
        """
        a11 = (1.0 / dt) * self.identity + self.l_uu
        if interface_coeff != 0.0:
            a11 = a11 + interface_coeff * self.sigma_outer
        a21 = self.m_qu if drift is None else self.m_qu - drift
        return sp.bmat(
            [[a11, self.l_uq], [a21, (1.0 / self.mu) * self.identity]],
            format="csc",
        )

    def _system_template(self):
        """Pattern-fixed decomposition K = C0 + dt*C1 + dt*c_int*C2 - drift.

        The per-step systems share one sparsity pattern, so refactorization
        only needs a value update; the drift block (element-diagonal in the
        lower-left block) is contained in the constraint block's pattern.
        """
        if getattr(self, "_tmpl", None) is not None:
            return self._tmpl
        n = self.n_dof
        inv_mu = (1.0 / self.mu) * self.identity
        zero = sp.csr_matrix((n, n))
        c0 = sp.bmat([[zero, zero], [self.m_qu, inv_mu]], format="coo")
        c1 = sp.bmat([[self.l_uu, self.l_uq], [zero, zero]], format="coo")
        c2 = sp.bmat([[self.sigma_outer, zero], [zero, zero]], format="coo")
        c3 = sp.bmat([[self.identity, zero], [zero, zero]], format="coo")

        rows = np.concatenate([c.row for c in (c0, c1, c2, c3)])
        cols = np.concatenate([c.col for c in (c0, c1, c2, c3)])
        pattern = sp.coo_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(2 * n, 2 * n)
        ).tocsc()
        pattern.sort_indices()

        def locate(r: np.ndarray, c: np.ndarray) -> np.ndarray:
            pos = np.empty(r.size, dtype=np.int64)
            for i in range(r.size):
                lo, hi = pattern.indptr[c[i]], pattern.indptr[c[i] + 1]
                pos[i] = lo + np.searchsorted(pattern.indices[lo:hi], r[i])
            return pos

        def aligned(m: sp.coo_matrix) -> np.ndarray:
            data = np.zeros(pattern.nnz)
            np.add.at(data, locate(m.row, m.col), m.data)
            return data

        self._tmpl = (pattern, locate, aligned(c0), aligned(c1), aligned(c2), aligned(c3))
        return self._tmpl

    def build_system_inplace(
        self,
        dt: float,
        interface_coeff: float = 0.0,
        drift: sp.csr_matrix | None = None,
    ) -> sp.csc_matrix:
        """Per-step system via value update of the shared sparsity pattern."""
        pattern, locate, d0, d1, d2, d3 = self._system_template()
        data = (1.0 / dt) * d3 + d0 + d1
        if interface_coeff != 0.0:
            data += interface_coeff * d2
        if drift is not None:
            dco = drift.tocoo()
            if getattr(self, "_drift_pos_key", None) != (dco.row.tobytes(), dco.col.tobytes()):
                self._drift_pos = locate(dco.row + self.n_dof, dco.col)
                self._drift_pos_key = (dco.row.tobytes(), dco.col.tobytes())
            np.subtract.at(data, self._drift_pos, dco.data)
        return sp.csc_matrix(
            (data, pattern.indices, pattern.indptr), shape=pattern.shape
        )


def assemble_static(
    grid: IntervalGrid,
    mu: float,
    tau_tilde: float = 1.0,
    beta: float = 0.5,
    left: BoundaryKind = BoundaryKind.DIRICHLET,
    right: BoundaryKind = BoundaryKind.INTERFACE,
    dirichlet_value: float = 0.0,
    degree: int = 1,
) -> LDGOperators:
    """Assemble all time-independent LDG blocks for one subdomain carrier."""
    k = degree
    n_el = grid.n_elements
    nloc = k + 1
    n_dof = n_el * nloc
    h = grid.h
    scale = np.sqrt(2.0 / h)

    xi, w = quadrature_points(k)
    p_ref = legendre_values(k, xi)
    p_der = legendre_derivs(k, xi)
    # reference gradient pairing g[i, j] = int p_i' p_j dxi
    gref = np.einsum("iq,jq,q->ij", p_der, p_ref, w)

    trace_l = legendre_values(k, np.array([-1.0]))[:, 0]
    trace_r = legendre_values(k, np.array([1.0]))[:, 0]

    l_uu = linalg.SparseMatrix(n_dof, n_dof)
    l_uq = linalg.SparseMatrix(n_dof, n_dof)
    m_qu = linalg.SparseMatrix(n_dof, n_dof)
    b_l = np.zeros(n_dof)
    b_m = np.zeros(n_dof)

    def dofs(e: int) -> np.ndarray:
        return e * nloc + np.arange(nloc)

    # volume terms: -(grad w, q) and -(div bw, rho), both -(2/h) * gref
    for e in range(n_el):
        l_uq.add_block(dofs(e), dofs(e), -(2.0 / h[e]) * gref)
        m_qu.add_block(dofs(e), dofs(e), -(2.0 / h[e]) * gref)

    # interior faces between elements e (minus side, outward normal +1) and e+1
    for e in range(n_el - 1):
        tau = penalty_tau(tau_tilde, float(h[e]), float(h[e + 1]))
        w_l = scale[e] * trace_r
        w_r = scale[e + 1] * trace_l
        jump_w = np.concatenate([w_l, -w_r])          # [w] against minus-normal
        both = np.concatenate([dofs(e), dofs(e + 1)])
        # penalty <[w], tau [rho]>
        l_uu.add_block(both, both, tau * np.outer(jump_w, jump_w))
        # <[w], {q} - [q] beta> = (0.5-beta) qL + (0.5+beta) qR against [w]
        q_combo = np.concatenate([(0.5 - beta) * w_l, (0.5 + beta) * w_r])
        l_uq.add_block(both, both, np.outer(jump_w, q_combo))
        # <[bw], {rho} + beta [rho]> = (0.5+beta) rhoL + (0.5-beta) rhoR
        rho_combo = np.concatenate([(0.5 + beta) * w_l, (0.5 - beta) * w_r])
        m_qu.add_block(both, both, np.outer(jump_w, rho_combo))

    sigma_w = np.zeros(n_dof)

    def apply_end(end: str, kind: BoundaryKind) -> None:
        nonlocal sigma_w
        if end == "left":
            e, tr, normal = 0, scale[0] * trace_l, -1.0
        else:
            e, tr, normal = n_el - 1, scale[n_el - 1] * trace_r, +1.0
        d = dofs(e)
        if kind is BoundaryKind.DIRICHLET:
            tau = penalty_tau(tau_tilde, float(h[e]))
            # rho equation: <w, n.q> + <w, tau rho> on the matrix side,
            # <w, tau data> on the load side
            l_uq.add_block(d, d, normal * np.outer(tr, tr))
            l_uu.add_block(d, d, tau * np.outer(tr, tr))
            b_l[d] += tau * dirichlet_value * tr
            # flux equation: rho_hat = data enters the load
            b_m[d] += -normal * dirichlet_value * tr
        elif kind is BoundaryKind.INTERFACE:
            # flux equation: own-trace rho_hat
            m_qu.add_block(d, d, normal * np.outer(tr, tr))
            sigma_w[d] = tr
        elif kind is BoundaryKind.NEUMANN:
            # q_hat.n = 0 in the rho equation; own-trace rho_hat in the flux one
            m_qu.add_block(d, d, normal * np.outer(tr, tr))

    apply_end("left", left)
    apply_end("right", right)

    edges = grid.edges
    mid = 0.5 * (edges[:-1] + edges[1:])
    xq = mid[:, None] + 0.5 * h[:, None] * xi[None, :]

    sig = sp.csr_matrix(np.outer(sigma_w, sigma_w)) if sigma_w.any() else sp.csr_matrix((n_dof, n_dof))

    return LDGOperators(
        grid=grid,
        degree=k,
        mu=mu,
        tau_tilde=tau_tilde,
        beta=beta,
        left=left,
        right=right,
        dirichlet_value=dirichlet_value,
        l_uu=l_uu.tocsr(),
        l_uq=l_uq.tocsr(),
        m_qu=m_qu.tocsr(),
        b_l=b_l,
        b_m=b_m,
        sigma_w=sigma_w,
        sigma_outer=sig,
        identity=sp.identity(n_dof, format="csr"),
        xq=xq,
        wq=w,
        p_ref=p_ref,
        scale=scale,
        sqrt_h_half=np.sqrt(0.5 * h),
    )


def carrier_operators(
    grid: IntervalGrid,
    spec: CarrierSpec,
    tau_tilde: float = 1.0,
    beta: float = 0.5,
    degree: int = 1,
) -> LDGOperators:
    """Operators for a device carrier: Dirichlet at the contact end, interface at the other."""
    if spec.domain == "S":
        left, right = BoundaryKind.DIRICHLET, BoundaryKind.INTERFACE
    else:
        left, right = BoundaryKind.INTERFACE, BoundaryKind.DIRICHLET
    return assemble_static(
        grid,
        mu=spec.mu,
        tau_tilde=tau_tilde,
        beta=beta,
        left=left,
        right=right,
        dirichlet_value=spec.dirichlet_value,
        degree=degree,
    )


def steady_diffusion_solve(ops: LDGOperators, source_quad: np.ndarray) -> tuple[DGField, DGField]:
    """Stationary pure-diffusion solve (testbed): L z = loads with no mass term."""
    n = ops.n_dof
    system = sp.bmat(
        [[ops.l_uu, ops.l_uq], [ops.m_qu, (1.0 / ops.mu) * ops.identity]], format="csc"
    )
    rhs = np.concatenate([ops.b_l + ops.source_load(source_quad), ops.b_m])
    fact = linalg.factorize(system)
    z = fact.solve(rhs)
    k = ops.degree
    rho = DGField(ops.grid, k, z[:n].reshape(-1, k + 1).copy())
    q = DGField(ops.grid, k, z[n:].reshape(-1, k + 1).copy())
    return rho, q
