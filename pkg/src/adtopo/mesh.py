"""Structured Q4 grids, DOF maps and the preset benchmark boundary conditions.

Nodes are numbered column-major: down each column (top to bottom), columns
left to right. Element ``e = ix * nely + iy`` has its local nodes ordered
counter-clockwise from the bottom-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

KINDS = ("elastic", "thermal")


@dataclass(frozen=True)
class GridMesh:
    nelx: int
    nely: int
    kind: str = "elastic"
    elem_size: float = 1.0

    def __post_init__(self):
        if int(self.nelx) < 1 or int(self.nely) < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.nelx}x{self.nely}")
        if self.kind not in KINDS:
            raise ValueError(f"mesh kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def dofs_per_node(self) -> int:
        return 2 if self.kind == "elastic" else 1

    @property
    def n_elem(self) -> int:
        return self.nelx * self.nely

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def ndof(self) -> int:
        return self.dofs_per_node * self.n_nodes

    @property
    def elem_area(self) -> float:
        return self.elem_size ** 2

    @property
    def area(self) -> float:
        return self.n_elem * self.elem_area

    def node(self, ix, iy):
        """Node id at column ``ix`` and row ``iy`` (row 0 is the top edge)."""
        return np.asarray(ix) * (self.nely + 1) + np.asarray(iy)

    def node_dofs(self, nodes):
        nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
        d = self.dofs_per_node
        return (d * nodes[:, None] + np.arange(d)).ravel()

    @cached_property
    def elem_nodes(self) -> np.ndarray:
        ix, iy = np.divmod(np.arange(self.n_elem), self.nely)
        top_left = self.node(ix, iy)
        bottom_left = top_left + 1
        step = self.nely + 1
        return np.column_stack([bottom_left, bottom_left + step, top_left + step, top_left])

    @cached_property
    def edof(self) -> np.ndarray:
        """Element DOF table, shape (n_elem, 4 * dofs_per_node)."""
        d = self.dofs_per_node
        nodes = self.elem_nodes
        return (d * nodes[:, :, None] + np.arange(d)).reshape(self.n_elem, 4 * d)

    @cached_property
    def scatter_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Global (row, col) targets of every element-matrix entry, each (n_elem, k*k)."""
        k = self.edof.shape[1]
        rows = np.repeat(self.edof, k, axis=1)
        cols = np.tile(self.edof, (1, k))
        return rows, cols

    @cached_property
    def centroids(self) -> np.ndarray:
        """Element centres as (x, row) in element lengths, row measured downward."""
        ix, iy = np.divmod(np.arange(self.n_elem), self.nely)
        return np.column_stack([ix + 0.5, iy + 0.5]) * self.elem_size

    def to_image(self, values) -> np.ndarray:
        """Per-element values as a (nely, nelx) array, top row first."""
        return np.asarray(values).reshape(self.nelx, self.nely).T


def build_grid(nelx: int, nely: int, kind: str = "elastic") -> GridMesh:
    return GridMesh(int(nelx), int(nely), kind)


@dataclass
class BoundaryConditions:
    """Supports, loads and attachments for one problem on one mesh.

    ``periodic`` holds (slave, master) DOF pairs; slaves are neither fixed nor
    free, they share the reduced unknown of their master.
    """

    ndof: int
    fixed_dofs: np.ndarray
    force: np.ndarray
    springs: list[tuple[int, float]] = field(default_factory=list)
    output_dof: int | None = None
    output_direction: float = 1.0
    input_dof: int | None = None
    periodic: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        self.force = np.asarray(self.force, dtype=float)
        if self.force.shape != (self.ndof,):
            raise ValueError(f"force vector must have length {self.ndof}")
        if np.any(self.force[self.fixed_dofs] != 0.0):
            raise ValueError("loads on fixed DOFs are not allowed")
        for dof, k in self.springs:
            if not k > 0:
                raise ValueError(f"spring stiffness must be positive, got {k} at DOF {dof}")

    @property
    def slave_dofs(self) -> np.ndarray:
        if self.periodic is None:
            return np.zeros(0, dtype=np.int64)
        return np.asarray(self.periodic[0], dtype=np.int64)

    @cached_property
    def free_dofs(self) -> np.ndarray:
        taken = np.zeros(self.ndof, dtype=bool)
        taken[self.fixed_dofs] = True
        taken[self.slave_dofs] = True
        return np.flatnonzero(~taken)

    @property
    def nfree(self) -> int:
        return self.free_dofs.size

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Reduced unknown of every global DOF, -1 where the DOF is fixed."""
        m = np.full(self.ndof, -1, dtype=np.int64)
        m[self.free_dofs] = np.arange(self.nfree)
        if self.periodic is not None:
            slaves, masters = self.periodic
            m[slaves] = m[masters]
        return m

    def reduce(self, full) -> np.ndarray:
        """Sum a global vector onto the reduced unknowns."""
        out = np.zeros(self.nfree)
        keep = self.dof_map >= 0
        np.add.at(out, self.dof_map[keep], np.asarray(full)[keep])
        return out

    def expand(self, reduced) -> np.ndarray:
        reduced = np.asarray(reduced)
        full = np.zeros(self.ndof)
        keep = self.dof_map >= 0
        full[keep] = reduced[self.dof_map[keep]]
        return full

    def output_load(self) -> np.ndarray:
        """Unit load ``l`` at the output DOF in the desired output direction."""
        if self.output_dof is None:
            raise ValueError("these boundary conditions define no output DOF")
        l = np.zeros(self.ndof)
        l[self.output_dof] = self.output_direction
        return l


PRESETS = ("cantilever", "thermal_plate", "inverter", "unit_cell")


def preset_problem(name: str, mesh: GridMesh, **params) -> BoundaryConditions:
    """Boundary conditions of a named benchmark; keyword params override defaults."""
    builders = {
        "cantilever": _cantilever,
        "thermal_plate": _thermal_plate,
        "inverter": _inverter,
        "unit_cell": _unit_cell,
    }
    if name not in builders:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    wants = "thermal" if name == "thermal_plate" else "elastic"
    if mesh.kind != wants:
        raise ValueError(f"preset {name!r} needs a {wants} mesh, got {mesh.kind}")
    return builders[name](mesh, **params)


def _cantilever(mesh, load="mid", magnitude=1.0):
    left = mesh.node(0, np.arange(mesh.nely + 1))
    if load == "mid":
        row = mesh.nely // 2
    elif load == "bottom":
        row = mesh.nely
    else:
        raise ValueError(f"cantilever load must be 'mid' or 'bottom', got {load!r}")
    f = np.zeros(mesh.ndof)
    f[2 * mesh.node(mesh.nelx, row) + 1] = -magnitude
    return BoundaryConditions(mesh.ndof, mesh.node_dofs(left), f)


def _thermal_plate(mesh, heat=0.01, sink_fraction=0.4):
    rows = np.arange(mesh.nely + 1)
    lo = 0.5 * (1.0 - sink_fraction) * mesh.nely
    hi = 0.5 * (1.0 + sink_fraction) * mesh.nely
    sink = mesh.node(0, rows[(rows >= lo - 1e-9) & (rows <= hi + 1e-9)])
    f = np.full(mesh.ndof, heat)
    f[sink] = 0.0
    return BoundaryConditions(mesh.ndof, sink, f)


def _inverter(mesh, k_in=0.1, k_out=0.1, f_in=1.0, symmetric=True):
    """Displacement inverter; ``symmetric`` models the upper half of the device.

    In the half model the top edge is the symmetry line: its vertical DOFs are
    fixed and the input/output nodes sit on it. The full model puts them at
    mid-height and clamps the top-left and bottom-left corners.
    """
    if symmetric:
        row = 0
        top = mesh.node(np.arange(mesh.nelx + 1), 0)
        corner = mesh.node(0, [mesh.nely - 1, mesh.nely]) if mesh.nely > 1 else mesh.node(0, [1])
        fixed = np.concatenate([2 * top + 1, mesh.node_dofs(corner)])
    else:
        row = mesh.nely // 2
        corners = mesh.node(0, [0, mesh.nely])
        fixed = mesh.node_dofs(corners)
    din = int(2 * mesh.node(0, row))
    dout = int(2 * mesh.node(mesh.nelx, row))
    f = np.zeros(mesh.ndof)
    f[din] = f_in
    return BoundaryConditions(
        mesh.ndof, fixed, f,
        springs=[(din, float(k_in)), (dout, float(k_out))],
        output_dof=dout,
        output_direction=-float(np.sign(f_in) or 1.0),
        input_dof=din,
    )


def _unit_cell(mesh):
    ix, iy = np.meshgrid(np.arange(mesh.nelx + 1), np.arange(mesh.nely + 1), indexing="ij")
    ix = ix.ravel()
    iy = iy.ravel()
    image = (ix == mesh.nelx) | (iy == mesh.nely)
    slaves = mesh.node(ix[image], iy[image])
    masters = mesh.node(ix[image] % mesh.nelx, iy[image] % mesh.nely)
    anchor = mesh.node(0, 0)
    return BoundaryConditions(
        mesh.ndof,
        mesh.node_dofs(anchor),
        np.zeros(mesh.ndof),
        periodic=(mesh.node_dofs(slaves), mesh.node_dofs(masters)),
    )
