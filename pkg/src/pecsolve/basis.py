"""Modal Legendre bases, Gauss quadrature, and piecewise-polynomial fields.

The local basis on every element is the L2-orthonormal Legendre family
(Jacobian included in the normalization), so element mass matrices are
exactly the identity and global L2 norms reduce to Euclidean norms of the
coefficient vectors.  In 2D the basis is the tensor product on rectangles,
local index L = mx * (k+1) + my.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

from pecsolve.errors import InvalidDomainError
from pecsolve.mesh import IntervalGrid, MeshRect2D


def gauss_rule(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1], exact to degree 2n-1."""
    if not 1 <= n_points <= 20:
        raise ValueError(f"gauss_rule supports 1..20 points, got {n_points}")
    return npleg.leggauss(n_points)


def legendre_values(k: int, xi: np.ndarray) -> np.ndarray:
    """Orthonormalized Legendre values: out[m, j] = sqrt((2m+1)/2) P_m(xi_j)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    vander = npleg.legvander(xi, k)  # (npts, k+1)
    scale = np.sqrt((2.0 * np.arange(k + 1) + 1.0) / 2.0)
    return (vander * scale).T


def legendre_derivs(k: int, xi: np.ndarray) -> np.ndarray:
    """d/dxi of the orthonormalized Legendre family, same layout as values."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.zeros((k + 1, xi.size))
    for m in range(k + 1):
        coef = np.zeros(m + 1)
        coef[m] = np.sqrt((2.0 * m + 1.0) / 2.0)
        out[m] = npleg.legval(xi, npleg.legder(coef)) if m > 0 else 0.0
    return out


def quadrature_points(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference rule used everywhere: 2k+2 Gauss points per direction."""
    return gauss_rule(2 * k + 2)


@lru_cache(maxsize=None)
def _edge_values(k: int) -> tuple[np.ndarray, np.ndarray]:
    left = legendre_values(k, np.array([-1.0]))[:, 0]
    right = legendre_values(k, np.array([1.0]))[:, 0]
    left.setflags(write=False)
    right.setflags(write=False)
    return left, right


@dataclass
class DGField:
    """Per-element modal coefficients of a scalar unknown on a 1D grid."""

    grid: IntervalGrid
    degree: int
    coeffs: np.ndarray  # (n_elements, degree+1)

    def __post_init__(self):
        expected = (self.grid.n_elements, self.degree + 1)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape} != {expected}")

    @classmethod
    def zeros(cls, grid: IntervalGrid, degree: int) -> "DGField":
        return cls(grid, degree, np.zeros((grid.n_elements, degree + 1)))

    def copy(self) -> "DGField":
        return DGField(self.grid, self.degree, self.coeffs.copy())

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def _element_scale(self) -> np.ndarray:
        return np.sqrt(2.0 / self.grid.h)

    def eval(self, x, side: str = "right") -> np.ndarray | float:
        """Point values; `side` picks the element when x sits on a face."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(xs)
        edges = self.grid.edges
        scale = self._element_scale()
        for j, xv in enumerate(xs):
            e = self.grid.element_of(float(xv), side=side)
            xi = 2.0 * (xv - edges[e]) / (edges[e + 1] - edges[e]) - 1.0
            vals = legendre_values(self.degree, np.array([xi]))[:, 0]
            out[j] = scale[e] * (self.coeffs[e] @ vals)
        return out if np.ndim(x) else float(out[0])

    def values_at(self, ref_table: np.ndarray) -> np.ndarray:
        """Values at per-element reference points given a (k+1, nq) basis table."""
        return (self.coeffs @ ref_table) * self._element_scale()[:, None]

    def trace_left(self) -> float:
        """One-sided value at the grid's left endpoint."""
        vals = _edge_values(self.degree)[0]
        h = self.grid.edges[1] - self.grid.edges[0]
        return float(self.coeffs[0] @ vals) * float(np.sqrt(2.0 / h))

    def trace_right(self) -> float:
        vals = _edge_values(self.degree)[1]
        h = self.grid.edges[-1] - self.grid.edges[-2]
        return float(self.coeffs[-1] @ vals) * float(np.sqrt(2.0 / h))


def project_to_dg(f, grid: IntervalGrid, degree: int) -> DGField:
    """L2 projection of a callable onto the degree-k broken polynomial space."""
    xi, w = quadrature_points(degree)
    phi = legendre_values(degree, xi)              # (k+1, nq)
    edges = grid.edges
    h = grid.h
    mid = 0.5 * (edges[:-1] + edges[1:])
    xq = mid[:, None] + 0.5 * h[:, None] * xi[None, :]   # (n_el, nq)
    fq = np.asarray(f(xq), dtype=float)
    if fq.shape != xq.shape:
        fq = np.broadcast_to(fq, xq.shape)
    scale = np.sqrt(2.0 / h)
    # coeff[e, m] = sum_q (h/2) w_q f(x_q) * scale_e * phi[m, q]
    coeffs = 0.5 * h[:, None] * scale[:, None] * (fq * w[None, :]) @ phi.T
    return DGField(grid, degree, coeffs)


def eval_field(field: DGField, x, side: str = "right"):
    """Functional alias for DGField.eval."""
    return field.eval(x, side=side)


@dataclass
class DGField2D:
    """Tensor-product modal field on one side (S or E) of a rectangle mesh."""

    mesh: MeshRect2D
    side: str           # "S" or "E"
    degree: int
    coeffs: np.ndarray  # (n_side_elements, (degree+1)**2)

    def __post_init__(self):
        if self.side not in ("S", "E"):
            raise ValueError(f"side must be 'S' or 'E', got {self.side!r}")
        self.elements = self.mesh.side_elements(self.side)
        expected = (self.elements.size, (self.degree + 1) ** 2)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape} != {expected}")

    @classmethod
    def zeros(cls, mesh: MeshRect2D, side: str, degree: int) -> "DGField2D":
        n = mesh.side_elements(side).size
        return cls(mesh, side, degree, np.zeros((n, (degree + 1) ** 2)))

    def copy(self) -> "DGField2D":
        return DGField2D(self.mesh, self.side, self.degree, self.coeffs.copy())

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def local_index(self, mx: int, my: int) -> int:
        return mx * (self.degree + 1) + my

    def eval_on_element(self, local_e: int, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Values on the tensor grid (xi x eta) of reference points of one element."""
        k = self.degree
        e = self.elements[local_e]
        x0, x1, y0, y1 = self.mesh.element_box(int(e))
        px = legendre_values(k, xi) * np.sqrt(2.0 / (x1 - x0))
        py = legendre_values(k, eta) * np.sqrt(2.0 / (y1 - y0))
        c = self.coeffs[local_e].reshape(k + 1, k + 1)
        return px.T @ c @ py


def project_to_dg2d(f, mesh: MeshRect2D, side: str, degree: int) -> DGField2D:
    """L2 projection of f(x, y) onto the tensor DG space of one subdomain."""
    k = degree
    xi, w = quadrature_points(k)
    field = DGField2D.zeros(mesh, side, k)
    pref = legendre_values(k, xi)  # (k+1, nq)
    for le, e in enumerate(field.elements):
        x0, x1, y0, y1 = mesh.element_box(int(e))
        hx, hy = x1 - x0, y1 - y0
        xq = 0.5 * (x0 + x1) + 0.5 * hx * xi
        yq = 0.5 * (y0 + y1) + 0.5 * hy * xi
        fq = np.asarray(f(xq[:, None], yq[None, :]), dtype=float)
        fq = np.broadcast_to(fq, (xi.size, xi.size))
        px = pref * np.sqrt(2.0 / hx)
        py = pref * np.sqrt(2.0 / hy)
        # c[mx,my] = sum_{qx,qy} (hx/2)(hy/2) w_qx w_qy f * px[mx,qx] py[my,qy]
        wf = (w[:, None] * w[None, :]) * fq * (0.25 * hx * hy)
        field.coeffs[le] = (px @ wf @ py.T).reshape(-1)
    return field


def l2_error_2d(field: DGField2D, exact) -> float:
    """L2 distance between a 2D field and a callable exact(x, y)."""
    k = field.degree
    xi, w = quadrature_points(k)
    err2 = 0.0
    for le in range(field.elements.size):
        e = field.elements[le]
        x0, x1, y0, y1 = field.mesh.element_box(int(e))
        hx, hy = x1 - x0, y1 - y0
        xq = 0.5 * (x0 + x1) + 0.5 * hx * xi
        yq = 0.5 * (y0 + y1) + 0.5 * hy * xi
        vals = field.eval_on_element(le, xi, xi)
        diff = vals - np.asarray(exact(xq[:, None], yq[None, :]), dtype=float)
        err2 += 0.25 * hx * hy * float(np.einsum("i,j,ij->", w, w, diff**2))
    return float(np.sqrt(err2))


def project_between_grids(fine: DGField, coarse_grid: IntervalGrid) -> DGField:
    """L2-project a fine-grid field onto a coarser nested grid (same degree)."""
    k = fine.degree
    ratio_f = fine.grid.n_elements
    ratio_c = coarse_grid.n_elements
    if ratio_f % ratio_c:
        raise InvalidDomainError("grids are not nested (element counts not divisible)")
    if not (
        np.isclose(fine.grid.x_left, coarse_grid.x_left)
        and np.isclose(fine.grid.x_right, coarse_grid.x_right)
    ):
        raise InvalidDomainError("grids cover different intervals")
    m = ratio_f // ratio_c
    xi, w = quadrature_points(k)
    phi = legendre_values(k, xi)
    out = DGField.zeros(coarse_grid, k)
    h_c = coarse_grid.h
    scale_c = np.sqrt(2.0 / h_c)
    fine_edges = fine.grid.edges
    fine_h = fine.grid.h
    fine_scale = np.sqrt(2.0 / fine_h)
    for ec in range(ratio_c):
        acc = np.zeros(k + 1)
        for sub in range(m):
            ef = ec * m + sub
            xq = 0.5 * (fine_edges[ef] + fine_edges[ef + 1]) + 0.5 * fine_h[ef] * xi
            fvals = fine_scale[ef] * (fine.coeffs[ef] @ phi)
            xi_c = 2.0 * (xq - coarse_grid.edges[ec]) / h_c[ec] - 1.0
            phi_c = legendre_values(k, xi_c)
            acc += 0.5 * fine_h[ef] * scale_c[ec] * (phi_c @ (w * fvals))
        out.coeffs[ec] = acc
    return out


def prolong_to_fine(coarse: DGField, fine_grid: IntervalGrid) -> DGField:
    """Exact re-expansion of a coarse field on a nested finer grid (same degree)."""
    k = coarse.degree
    if fine_grid.n_elements % coarse.grid.n_elements:
        raise InvalidDomainError("grids are not nested (element counts not divisible)")
    xi, w = quadrature_points(k)
    phi = legendre_values(k, xi)
    out = DGField.zeros(fine_grid, k)
    fh = fine_grid.h
    fscale = np.sqrt(2.0 / fh)
    cedges = coarse.grid.edges
    ch = coarse.grid.h
    cscale = np.sqrt(2.0 / ch)
    m = fine_grid.n_elements // coarse.grid.n_elements
    for ef in range(fine_grid.n_elements):
        ec = ef // m
        xq = 0.5 * (fine_grid.edges[ef] + fine_grid.edges[ef + 1]) + 0.5 * fh[ef] * xi
        xi_c = 2.0 * (xq - cedges[ec]) / ch[ec] - 1.0
        cvals = cscale[ec] * (coarse.coeffs[ec] @ legendre_values(k, xi_c))
        out.coeffs[ef] = 0.5 * fh[ef] * fscale[ef] * (phi @ (w * cvals))
    return out
