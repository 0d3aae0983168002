"""Tensor-product LDG operators on one side of a 2D rectangle mesh.

This is the pure-diffusion + reactive-interface subset of the transport
machinery, used by the coupled parabolic verification problem: unknowns
[U, Qx, Qy] with q = -grad(u), alternating fluxes with a diagonal beta
(so beta is never parallel to an axis-aligned face), penalty on interior
and Dirichlet faces, one-sided traces and explicit transfer data on the
interface column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from pecsolve import linalg
from pecsolve.basis import (
    DGField2D,
    legendre_derivs,
    legendre_values,
    quadrature_points,
)
from pecsolve.mesh import FaceTag, MeshRect2D


@dataclass
class _FaceData:
    elem_local: int
    trace: np.ndarray      # (nd, nq) basis traces on the face
    points_x: np.ndarray   # (nq,) physical coordinates along the face
    points_y: np.ndarray
    weights: np.ndarray    # (nq,) scaled quadrature weights (length/2 * w)
    normal_axis: int
    normal_sign: float


@dataclass
class Transport2DOperators:
    """Static LDG blocks for one carrier on side 'S' or 'E'."""

    mesh: MeshRect2D
    side: str
    degree: int
    mu: float = 1.0
    tau_tilde: float = 1.0
    beta: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]) / np.sqrt(2.0))

    def __post_init__(self):
        mesh, k = self.mesh, self.degree
        self.elements = mesh.side_elements(self.side)
        self.local_of = {int(g): i for i, g in enumerate(self.elements)}
        self.nd = (k + 1) ** 2
        self.n_el = self.elements.size
        self.n_dof = self.n_el * self.nd

        xi, w = quadrature_points(k)
        self.xi, self.wq = xi, w
        p = legendre_values(k, xi)
        dp = legendre_derivs(k, xi)
        tl = legendre_values(k, np.array([-1.0]))[:, 0]
        tr = legendre_values(k, np.array([1.0]))[:, 0]
        gref = np.einsum("iq,jq,q->ij", dp, p, w)
        eye = np.eye(k + 1)

        cols = sorted({int(g) // mesh.ny for g in self.elements})
        hx = mesh.hx(cols[0])
        for c in cols:
            if not np.isclose(mesh.hx(c), hx):
                raise ValueError("2D operators require uniform columns per side")
        hy = mesh.hy
        self.hx, self.hy = hx, hy
        diam = float(np.hypot(hx, hy))

        luu = linalg.SparseMatrix(self.n_dof, self.n_dof)
        luqx = linalg.SparseMatrix(self.n_dof, self.n_dof)
        luqy = linalg.SparseMatrix(self.n_dof, self.n_dof)
        mqxu = linalg.SparseMatrix(self.n_dof, self.n_dof)
        mqyu = linalg.SparseMatrix(self.n_dof, self.n_dof)

        gx = -(2.0 / hx) * np.kron(gref, eye)
        gy = -(2.0 / hy) * np.kron(eye, gref)
        for le in range(self.n_el):
            dofs = le * self.nd + np.arange(self.nd)
            luqx.add_block(dofs, dofs, gx)
            luqy.add_block(dofs, dofs, gy)
            mqxu.add_block(dofs, dofs, gx)
            mqyu.add_block(dofs, dofs, gy)

        # edge trace matrices: vertical faces vary in y, horizontal in x;
        # kron ordering matches local index L = mx * (k+1) + my
        sx, sy = np.sqrt(2.0 / hx), np.sqrt(2.0 / hy)
        tv_l = np.kron((tl * sx)[:, None], p * sy)   # (nd, nq) at xi_x = -1
        tv_r = np.kron((tr * sx)[:, None], p * sy)   # at xi_x = +1
        th_b = np.kron(p * sx, (tl * sy)[:, None])   # at xi_y = -1
        th_t = np.kron(p * sx, (tr * sy)[:, None])   # at xi_y = +1

        self.dirichlet_faces: list[_FaceData] = []
        self.interface_faces: list[_FaceData] = []
        bx, by = float(self.beta[0]), float(self.beta[1])

        for f in mesh.faces:
            own_minus = f.elem_minus in self.local_of
            own_plus = f.elem_plus in self.local_of
            if not (own_minus or own_plus):
                continue
            qpts = 0.5 * (f.lo + f.hi) + 0.5 * (f.hi - f.lo) * xi
            wsc = 0.5 * (f.hi - f.lo) * w
            if f.normal_axis == 0:
                t_minus, t_plus = tv_r, tv_l
                luq, mqu, bcomp = luqx, mqxu, bx
                px = np.full_like(qpts, f.position)
                py = qpts
            else:
                t_minus, t_plus = th_t, th_b
                luq, mqu, bcomp = luqy, mqyu, by
                px = qpts
                py = np.full_like(qpts, f.position)

            if f.tag is FaceTag.INTERIOR and own_minus and own_plus:
                lm = self.local_of[f.elem_minus]
                lp = self.local_of[f.elem_plus]
                dm = lm * self.nd + np.arange(self.nd)
                dpl = lp * self.nd + np.arange(self.nd)
                both = np.concatenate([dm, dpl])
                jump = np.vstack([t_minus, -t_plus])              # [w] . n_minus
                q_combo = np.vstack([(0.5 - bcomp) * t_minus, (0.5 + bcomp) * t_plus])
                r_combo = np.vstack([(0.5 + bcomp) * t_minus, (0.5 - bcomp) * t_plus])
                tau = self.tau_tilde / diam
                luu.add_block(both, both, tau * (jump * wsc) @ jump.T)
                luq.add_block(both, both, (jump * wsc) @ q_combo.T)
                mqu.add_block(both, both, (jump * wsc) @ r_combo.T)
                continue

            le = self.local_of[f.elem_minus] if own_minus else self.local_of[f.elem_plus]
            tmat = t_minus if own_minus else t_plus
            sign = 1.0 if own_minus else -1.0
            data = _FaceData(
                elem_local=le, trace=tmat, points_x=px, points_y=py,
                weights=wsc, normal_axis=f.normal_axis, normal_sign=sign,
            )
            dofs = le * self.nd + np.arange(self.nd)
            if f.tag is FaceTag.INTERFACE:
                # own-trace rho_hat in the flux equation; transfer flux per step
                mqu.add_block(dofs, dofs, sign * (tmat * wsc) @ tmat.T)
                self.interface_faces.append(data)
            elif f.tag in (FaceTag.GAMMA_C, FaceTag.GAMMA_A):
                tau = self.tau_tilde / diam
                luu.add_block(dofs, dofs, tau * (tmat * wsc) @ tmat.T)
                luq.add_block(dofs, dofs, sign * (tmat * wsc) @ tmat.T)
                self.dirichlet_faces.append(data)
            elif f.tag is FaceTag.GAMMA_N:
                mqu.add_block(dofs, dofs, sign * (tmat * wsc) @ tmat.T)

        self.interface_faces.sort(key=lambda d: float(np.min(d.points_y)))
        self.l_uu = luu.tocsr()
        self.l_uqx = luqx.tocsr()
        self.l_uqy = luqy.tocsr()
        self.m_qxu = mqxu.tocsr()
        self.m_qyu = mqyu.tocsr()
        self.identity = sp.identity(self.n_dof, format="csr")

        # volume quadrature caches
        self.p_ref = p
        mid_x = np.array([0.5 * sum(mesh.element_box(int(g))[:2]) for g in self.elements])
        mid_y = np.array([0.5 * sum(mesh.element_box(int(g))[2:]) for g in self.elements])
        self.xq = mid_x[:, None] + 0.5 * hx * xi[None, :]
        self.yq = mid_y[:, None] + 0.5 * hy * xi[None, :]
        self.pw = p * w  # (k+1, nq)

    def build_system(self, dt: float) -> sp.csc_matrix:
        return sp.bmat(
            [
                [self.identity + dt * self.l_uu, dt * self.l_uqx, dt * self.l_uqy],
                [self.m_qxu, (1.0 / self.mu) * self.identity, None],
                [self.m_qyu, None, (1.0 / self.mu) * self.identity],
            ],
            format="csc",
        )

    def volume_load(self, func, t: float) -> np.ndarray:
        """(w, func(x, y, t)) over all elements, flattened."""
        vals = func(self.xq[:, :, None], self.yq[:, None, :], t)  # (n_el, nq, nq)
        scale = 0.25 * self.hx * self.hy * np.sqrt(4.0 / (self.hx * self.hy))
        return scale * np.einsum("xq,yr,eqr->exy", self.pw, self.pw,
                                 np.broadcast_to(vals, self.xq.shape + (self.yq.shape[1],))
                                 ).reshape(self.n_el, self.nd).ravel()

    def dirichlet_loads(self, g, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Penalty load for the density equation and data loads for both flux rows."""
        diam = float(np.hypot(self.hx, self.hy))
        tau = self.tau_tilde / diam
        b_u = np.zeros(self.n_dof)
        b_qx = np.zeros(self.n_dof)
        b_qy = np.zeros(self.n_dof)
        for fd in self.dirichlet_faces:
            gv = g(fd.points_x, fd.points_y, t)
            dofs = fd.elem_local * self.nd + np.arange(self.nd)
            load = (fd.trace * fd.weights) @ np.asarray(gv, dtype=float)
            b_u[dofs] += tau * load
            if fd.normal_axis == 0:
                b_qx[dofs] += -fd.normal_sign * load
            else:
                b_qy[dofs] += -fd.normal_sign * load
        return b_u, b_qx, b_qy

    def interface_points(self) -> tuple[np.ndarray, np.ndarray]:
        ys = np.vstack([fd.points_y for fd in self.interface_faces])
        xs = np.vstack([fd.points_x for fd in self.interface_faces])
        return xs, ys

    def interface_trace_values(self, coeffs: np.ndarray) -> np.ndarray:
        """Own-side density traces at the interface quadrature points, (n_faces, nq)."""
        out = np.empty((len(self.interface_faces), self.wq.size))
        flat = coeffs.reshape(self.n_el, self.nd)
        for i, fd in enumerate(self.interface_faces):
            out[i] = flat[fd.elem_local] @ fd.trace
        return out

    def interface_load(self, flux_vals: np.ndarray) -> np.ndarray:
        """(w, n.q_hat) with the transfer flux given at the face quadrature points."""
        b = np.zeros(self.n_dof)
        for i, fd in enumerate(self.interface_faces):
            dofs = fd.elem_local * self.nd + np.arange(self.nd)
            b[dofs] += (fd.trace * fd.weights) @ flux_vals[i]
        return b


@dataclass
class ParabolicPairSolver:
    """First-order IMEX marching of the coupled u/v problem on both sides.

    Diffusion is implicit with constant matrices factorized once; the
    nonlinear interface flux n.q = u*v - data is explicit with step k-1
    traces.  Dirichlet data and volume sources are evaluated at the new
    time level.
    """

    mesh: MeshRect2D
    degree: int
    dt: float
    volume_source: object      # f(x, y, t)
    dirichlet_u: object
    dirichlet_v: object
    interface_data: object     # I(x, y, t)
    tau_tilde: float = 1.0

    def __post_init__(self):
        self.ops_u = Transport2DOperators(self.mesh, "S", self.degree, tau_tilde=self.tau_tilde)
        self.ops_v = Transport2DOperators(self.mesh, "E", self.degree, tau_tilde=self.tau_tilde)
        self.fact_u = linalg.factorize(self.ops_u.build_system(self.dt))
        self.fact_v = linalg.factorize(self.ops_v.build_system(self.dt))
        xs, ys = self.ops_u.interface_points()
        self.iface_x, self.iface_y = xs, ys
        xe, ye = self.ops_v.interface_points()
        if not (np.allclose(xs, xe) and np.allclose(ys, ye)):
            raise ValueError("interface quadrature points disagree between sides")

    def step(self, u: DGField2D, v: DGField2D, t_old: float) -> tuple[DGField2D, DGField2D]:
        dt = self.dt
        t_new = t_old + dt
        u_tr = self.ops_u.interface_trace_values(u.coeffs)
        v_tr = self.ops_v.interface_trace_values(v.coeffs)
        flux = u_tr * v_tr - self.interface_data(self.iface_x, self.iface_y, t_old)

        new_fields = []
        for ops, fact, fld, g in (
            (self.ops_u, self.fact_u, u, self.dirichlet_u),
            (self.ops_v, self.fact_v, v, self.dirichlet_v),
        ):
            b_u, b_qx, b_qy = ops.dirichlet_loads(g, t_new)
            rhs_u = fld.coeffs.ravel() + dt * (
                ops.volume_load(self.volume_source, t_new)
                + b_u
                - ops.interface_load(flux)
            )
            z = fact.solve(np.concatenate([rhs_u, b_qx, b_qy]))
            coeffs = z[: ops.n_dof].reshape(ops.n_el, ops.nd)
            new_fields.append(DGField2D(self.mesh, ops.side, self.degree, coeffs.copy()))
        return new_fields[0], new_fields[1]
