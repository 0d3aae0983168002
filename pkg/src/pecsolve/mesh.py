"""Interval meshes split by a reactive interface, and tensor rectangle meshes.

All meshes are uniform within each subdomain and conform to the interface:
one mesh node (1D) or one column of vertical faces (2D) sits exactly on the
interface coordinate, so no element ever straddles it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from pecsolve.errors import InvalidDomainError


class FaceTag(Enum):
    GAMMA_C = "gamma_c"      # Ohmic contact (semiconductor Dirichlet boundary)
    GAMMA_A = "gamma_a"      # anode (electrolyte bulk Dirichlet boundary)
    GAMMA_N = "gamma_n"      # insulated boundary
    INTERFACE = "interface"  # semiconductor-electrolyte interface
    INTERIOR = "interior"


class BoundaryKind(Enum):
    """End condition of a 1D subdomain grid as seen by the transport solver."""

    DIRICHLET = "dirichlet"
    INTERFACE = "interface"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class IntervalGrid:
    """Uniformly spaced 1D element partition of one subdomain."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise InvalidDomainError("grid needs at least two edge coordinates")
        if not np.all(np.diff(edges) > 0.0):
            raise InvalidDomainError("grid edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)
        edges.setflags(write=False)

    @property
    def n_elements(self) -> int:
        return self.edges.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def h_min(self) -> float:
        return float(np.min(self.h))

    @property
    def x_left(self) -> float:
        return float(self.edges[0])

    @property
    def x_right(self) -> float:
        return float(self.edges[-1])

    @property
    def length(self) -> float:
        return self.x_right - self.x_left

    def element_of(self, x: float, side: str = "right") -> int:
        """Index of the element containing x; `side` breaks ties on edges."""
        edges = self.edges
        if x < edges[0] or x > edges[-1]:
            raise InvalidDomainError(f"point {x} outside grid [{edges[0]}, {edges[-1]}]")
        if x == edges[0]:
            return 0
        if x == edges[-1]:
            return self.n_elements - 1
        if side == "right":
            return int(np.searchsorted(edges, x, side="right") - 1)
        if side == "left":
            return int(np.searchsorted(edges, x, side="left") - 1)
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")


@dataclass(frozen=True)
class Mesh1D:
    """Interval mesh over both subdomains with tagged faces (= nodes in 1D)."""

    nodes: np.ndarray
    interface_node_index: int
    n_semiconductor: int
    n_electrolyte: int
    face_tags: tuple[FaceTag, ...]

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def interface_x(self) -> float:
        return float(self.nodes[self.interface_node_index])

    def semiconductor_grid(self) -> IntervalGrid:
        return IntervalGrid(self.nodes[: self.interface_node_index + 1].copy())

    def electrolyte_grid(self) -> IntervalGrid:
        return IntervalGrid(self.nodes[self.interface_node_index :].copy())

    def whole_grid(self) -> IntervalGrid:
        return IntervalGrid(self.nodes.copy())

    def element_h(self) -> np.ndarray:
        return np.diff(self.nodes)

    def is_semiconductor_element(self, e: int) -> bool:
        return e < self.n_semiconductor


def build_interval_mesh(
    x_left: float,
    x_interface: float,
    x_right: float,
    n_semiconductor: int,
    n_electrolyte: int,
) -> Mesh1D:
    """Uniform two-sided interval mesh with the interface on a shared node."""
    if not (x_left < x_interface < x_right):
        raise InvalidDomainError(
            f"need x_left < x_interface < x_right, got {x_left}, {x_interface}, {x_right}"
        )
    if n_semiconductor < 1 or n_electrolyte < 1:
        raise InvalidDomainError("element counts must be >= 1")
    left = np.linspace(x_left, x_interface, n_semiconductor + 1)
    right = np.linspace(x_interface, x_right, n_electrolyte + 1)
    nodes = np.concatenate([left, right[1:]])
    nodes.setflags(write=False)
    tags = [FaceTag.INTERIOR] * nodes.size
    tags[0] = FaceTag.GAMMA_C
    tags[-1] = FaceTag.GAMMA_A
    tags[n_semiconductor] = FaceTag.INTERFACE
    return Mesh1D(
        nodes=nodes,
        interface_node_index=n_semiconductor,
        n_semiconductor=n_semiconductor,
        n_electrolyte=n_electrolyte,
        face_tags=tuple(tags),
    )


@dataclass(frozen=True)
class Face2D:
    """One mesh face: `normal_axis` 0 for vertical faces (normal +x), 1 for horizontal."""

    index: int
    tag: FaceTag
    normal_axis: int
    elem_minus: int   # -1 when the face lies on the boundary with no minus-side element
    elem_plus: int    # -1 on the boundary with no plus-side element
    position: float   # x for vertical faces, y for horizontal
    lo: float         # extent of the face along its tangential direction
    hi: float

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class MeshRect2D:
    """Tensor-product rectangle mesh with a vertical interface column.

    Elements are indexed e = ix * ny + iy with ix counting columns from the
    left (semiconductor) side.  The interface sits between columns nx_s - 1
    and nx_s.  `neighbors[e]` lists the four face indices (left, right,
    bottom, top).
    """

    x_nodes: np.ndarray
    y_nodes: np.ndarray
    interface_x_index: int
    nx_semiconductor: int
    nx_electrolyte: int
    ny: int
    faces: tuple[Face2D, ...]
    neighbors: np.ndarray = field(repr=False)

    @property
    def nx(self) -> int:
        return self.nx_semiconductor + self.nx_electrolyte

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def interface_x(self) -> float:
        return float(self.x_nodes[self.interface_x_index])

    def hx(self, ix: int) -> float:
        return float(self.x_nodes[ix + 1] - self.x_nodes[ix])

    @property
    def hy(self) -> float:
        return float(self.y_nodes[1] - self.y_nodes[0])

    def element_diameter(self, e: int) -> float:
        ix = e // self.ny
        return float(np.hypot(self.hx(ix), self.hy))

    @property
    def max_diameter(self) -> float:
        return max(self.element_diameter(ix * self.ny) for ix in range(self.nx))

    def element_box(self, e: int) -> tuple[float, float, float, float]:
        ix, iy = divmod(e, self.ny)
        return (
            float(self.x_nodes[ix]),
            float(self.x_nodes[ix + 1]),
            float(self.y_nodes[iy]),
            float(self.y_nodes[iy + 1]),
        )

    def is_semiconductor_element(self, e: int) -> bool:
        return e // self.ny < self.nx_semiconductor

    def side_elements(self, side: str) -> np.ndarray:
        cols = (
            range(self.nx_semiconductor)
            if side == "S"
            else range(self.nx_semiconductor, self.nx)
        )
        return np.array([ix * self.ny + iy for ix in cols for iy in range(self.ny)])


def build_rect_mesh(
    lx: float,
    ly: float,
    interface_x: float,
    nx_semiconductor: int,
    nx_electrolyte: int,
    ny: int,
) -> MeshRect2D:
    """Tensor grid on [0,lx] x [0,ly] with a vertical interface at interface_x."""
    if not (0.0 < interface_x < lx):
        raise InvalidDomainError(f"interface_x={interface_x} not inside (0, {lx})")
    if min(nx_semiconductor, nx_electrolyte, ny) < 1:
        raise InvalidDomainError("element counts must be >= 1")
    xs = np.concatenate(
        [
            np.linspace(0.0, interface_x, nx_semiconductor + 1),
            np.linspace(interface_x, lx, nx_electrolyte + 1)[1:],
        ]
    )
    ys = np.linspace(0.0, ly, ny + 1)
    xs.setflags(write=False)
    ys.setflags(write=False)
    nx = nx_semiconductor + nx_electrolyte

    faces: list[Face2D] = []
    neighbors = np.full((nx * ny, 4), -1, dtype=int)

    def elem(ix: int, iy: int) -> int:
        return ix * ny + iy

    # Vertical faces: ix_f in 0..nx, between columns ix_f-1 and ix_f.
    for ix_f in range(nx + 1):
        if ix_f == 0:
            tag = FaceTag.GAMMA_C
        elif ix_f == nx:
            tag = FaceTag.GAMMA_A
        elif ix_f == nx_semiconductor:
            tag = FaceTag.INTERFACE
        else:
            tag = FaceTag.INTERIOR
        for iy in range(ny):
            em = elem(ix_f - 1, iy) if ix_f > 0 else -1
            ep = elem(ix_f, iy) if ix_f < nx else -1
            f = Face2D(
                index=len(faces),
                tag=tag,
                normal_axis=0,
                elem_minus=em,
                elem_plus=ep,
                position=float(xs[ix_f]),
                lo=float(ys[iy]),
                hi=float(ys[iy + 1]),
            )
            faces.append(f)
            if em >= 0:
                neighbors[em, 1] = f.index
            if ep >= 0:
                neighbors[ep, 0] = f.index

    # Horizontal faces: iy_f in 0..ny, between rows iy_f-1 and iy_f.
    for ix in range(nx):
        side_tag = FaceTag.GAMMA_C if ix < nx_semiconductor else FaceTag.GAMMA_A
        for iy_f in range(ny + 1):
            tag = side_tag if iy_f in (0, ny) else FaceTag.INTERIOR
            em = elem(ix, iy_f - 1) if iy_f > 0 else -1
            ep = elem(ix, iy_f) if iy_f < ny else -1
            f = Face2D(
                index=len(faces),
                tag=tag,
                normal_axis=1,
                elem_minus=em,
                elem_plus=ep,
                position=float(ys[iy_f]),
                lo=float(xs[ix]),
                hi=float(xs[ix + 1]),
            )
            faces.append(f)
            if em >= 0:
                neighbors[em, 3] = f.index
            if ep >= 0:
                neighbors[ep, 2] = f.index

    neighbors.setflags(write=False)
    return MeshRect2D(
        x_nodes=xs,
        y_nodes=ys,
        interface_x_index=nx_semiconductor,
        nx_semiconductor=nx_semiconductor,
        nx_electrolyte=nx_electrolyte,
        ny=ny,
        faces=tuple(faces),
        neighbors=neighbors,
    )
