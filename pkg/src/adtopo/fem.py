"""Element matrices, traced assembly of the reduced system, and the traced solve."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adgraph as ad
from .mesh import BoundaryConditions, GridMesh

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@dataclass(frozen=True)
class ElementBaseStiffness:
    D0: np.ndarray
    kind: str
    nu: float | None = None


def plane_stress_matrix(E: float = 1.0, nu: float = 0.3) -> np.ndarray:
    """Plane-stress constitutive matrix in Voigt order (11, 22, 12)."""
    return E / (1.0 - nu ** 2) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


def _shape_gradients(xi, eta, size):
    dxi = 0.25 * _CORNERS[:, 0] * (1.0 + _CORNERS[:, 1] * eta)
    deta = 0.25 * _CORNERS[:, 1] * (1.0 + _CORNERS[:, 0] * xi)
    # square element: dx/dxi = dy/deta = size/2
    return 2.0 / size * dxi, 2.0 / size * deta


def element_base_stiffness(kind: str = "elastic", nu: float = 0.3,
                           size: float = 1.0) -> ElementBaseStiffness:
    """Unit-modulus Q4 matrix by 2x2 Gauss quadrature (exact for this element)."""
    if kind == "elastic":
        if not -1.0 < nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
        C = plane_stress_matrix(1.0, nu)
        k = np.zeros((8, 8))
        for xi in _GAUSS:
            for eta in _GAUSS:
                dx, dy = _shape_gradients(xi, eta, size)
                B = np.zeros((3, 8))
                B[0, 0::2] = dx
                B[1, 1::2] = dy
                B[2, 0::2] = dy
                B[2, 1::2] = dx
                k += B.T @ C @ B * (size * size / 4.0)
        return ElementBaseStiffness(0.5 * (k + k.T), kind, nu)
    if kind == "thermal":
        k = np.zeros((4, 4))
        for xi in _GAUSS:
            for eta in _GAUSS:
                dx, dy = _shape_gradients(xi, eta, size)
                k += (np.outer(dx, dx) + np.outer(dy, dy)) * (size * size / 4.0)
        return ElementBaseStiffness(0.5 * (k + k.T), kind)
    raise ValueError(f"element kind must be 'elastic' or 'thermal', got {kind!r}")


def reduced_scatter_index(mesh: GridMesh, bc: BoundaryConditions):
    rows, cols = mesh.scatter_index
    return bc.dof_map[rows], bc.dof_map[cols]


def assemble(E, mesh: GridMesh, bc: BoundaryConditions, D0: np.ndarray,
             springs: bool = True):
    """Reduced stiffness ``sum_e E_e * D0`` over free DOFs, plus springs.

    ``E`` may be traced; the result is then a single scatter-add node.
    """
    Ev = ad.primal(E)
    if Ev.shape != (mesh.n_elem,):
        raise ad.ShapeError(f"assemble: expected {mesh.n_elem} moduli, got shape {Ev.shape}")
    if np.any(Ev <= 0.0):
        bad = int(np.flatnonzero(Ev <= 0.0)[0])
        raise ValueError(f"assemble: element moduli must be positive (element {bad}: {Ev[bad]})")
    n = bc.nfree
    K = ad.scatter_add(np.zeros((n, n)), reduced_scatter_index(mesh, bc),
                       ad.outer(E, np.ravel(D0)))
    if springs and bc.springs:
        dofs = bc.dof_map[np.array([d for d, _ in bc.springs])]
        K = ad.scatter_add(K, (dofs, dofs), np.array([k for _, k in bc.springs]))
    return K


def solve_reduced(K, rhs):
    return ad.linear_solve(K, rhs, symmetric=True)


def dense_solve(K, rhs) -> np.ndarray:
    """Untraced solve with its own factorization (the manual-sensitivity path)."""
    return ad.cho_solve(ad.factorize(np.asarray(K)), rhs)


def solve_with_bc(K, bc: BoundaryConditions, force=None):
    """Full-length solution of ``K u = f`` with zeros at fixed DOFs."""
    f = bc.force if force is None else force
    u_free = solve_reduced(K, bc.reduce(ad.primal(f)) if not isinstance(f, ad.DiffValue)
                           else ad.gather(f, bc.free_dofs))
    return ad.gather(u_free, bc.dof_map)


def element_energies(u, mesh: GridMesh, D0: np.ndarray) -> np.ndarray:
    """Per-element ``u_e^T D0 u_e`` for a plain full-length vector."""
    ue = np.asarray(u)[mesh.edof]
    return np.einsum("ei,ij,ej->e", ue, D0, ue)


def element_products(a, b, mesh: GridMesh, D0: np.ndarray) -> np.ndarray:
    """Per-element ``a_e^T D0 b_e``."""
    ae = np.asarray(a)[mesh.edof]
    be = np.asarray(b)[mesh.edof]
    return np.einsum("ei,ij,ej->e", ae, D0, be)
