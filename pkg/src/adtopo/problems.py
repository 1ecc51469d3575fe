"""Differentiable objectives: compliance, compliant mechanisms, microstructures.

Each objective is an ordinary function of the design vector written with the
traced primitives, so :func:`adtopo.adgraph.value_and_grad` differentiates it
end to end. The hand-derived sensitivities kept here exist to check AD.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import adgraph as ad
from . import fem
from .mesh import BoundaryConditions, GridMesh
from .models import DesignPipeline, MaterialParams


@dataclass
class Setup:
    """Everything an objective needs besides the design vector."""

    mesh: GridMesh
    bc: BoundaryConditions
    pipeline: DesignPipeline
    nu: float = 0.3
    D0: np.ndarray = field(init=False)

    def __post_init__(self):
        size = self.mesh.elem_size
        self.D0 = fem.element_base_stiffness(self.mesh.kind, self.nu, size).D0

    @property
    def material(self) -> MaterialParams:
        return self.pipeline.material

    def stiffness(self, rho, springs=True):
        return fem.assemble(self.pipeline.moduli(rho), self.mesh, self.bc, self.D0, springs)

    def reduced(self, full) -> np.ndarray:
        return self.bc.reduce(full)


# ---------------------------------------------------------------------------
# compliance


def compute_compliance(rho, setup: Setup):
    """``u^T K u`` for the configured load."""
    K = setup.stiffness(rho)
    u = fem.solve_reduced(K, setup.reduced(setup.bc.force))
    return ad.dot(u, ad.matvec(K, u))


def solve_state(rho, setup: Setup, force=None) -> np.ndarray:
    """Plain full-length solution for design ``rho`` (no tracing)."""
    K = ad.primal(setup.stiffness(np.asarray(rho, dtype=float)))
    f = setup.bc.force if force is None else force
    return setup.bc.expand(fem.dense_solve(K, setup.reduced(f)))


def analytical_compliance_sensitivity(rho, u, setup: Setup) -> np.ndarray:
    """``-dE/drho * u_e^T D0 u_e``, pulled back through filter and projection."""
    phys = setup.pipeline.physical_values(rho)
    dE = setup.material.derivative(phys)
    grad_phys = -dE * fem.element_energies(u, setup.mesh, setup.D0)
    return setup.pipeline.chain(rho, grad_phys)


# ---------------------------------------------------------------------------
# compliant mechanisms

CM_KINDS = ("output_displacement", "weighted", "ratio")


def output_displacement(rho, setup: Setup):
    """Raw displacement at the output DOF."""
    K = setup.stiffness(rho)
    u = fem.solve_reduced(K, setup.reduced(setup.bc.force))
    return u[int(setup.bc.dof_map[setup.bc.output_dof])]


def cm_objective(rho, setup: Setup, kind: str = "output_displacement", omega: float = 0.9):
    """Compliant-mechanism objective to minimize.

    ``output_displacement`` returns ``-l.u`` where ``l`` is the unit load in
    the desired output direction. ``weighted`` and ``ratio`` combine the
    mutual strain energy ``v.K.u`` (``v`` from the dummy load ``l``) with the
    strain energy ``u.K.u``; both solves share one factorization.
    """
    if kind not in CM_KINDS:
        raise ValueError(f"unknown compliant-mechanism objective {kind!r}")
    bc = setup.bc
    K = setup.stiffness(rho)
    u = fem.solve_reduced(K, setup.reduced(bc.force))
    l = setup.reduced(bc.output_load())
    if kind == "output_displacement":
        return -ad.dot(u, l)
    v = fem.solve_reduced(K, l)
    Ku = ad.matvec(K, u)
    mse = ad.dot(v, Ku)
    se = ad.dot(u, Ku)
    if kind == "weighted":
        if not 0.0 <= omega <= 1.0:
            raise ValueError(f"weight must lie in [0, 1], got {omega}")
        return -omega * mse + (1.0 - omega) * se
    if not ad.primal(se) > 0.0:
        raise ValueError("ratio objective undefined: strain energy is zero (no input load)")
    return -mse / se


def adjoint_output_sensitivity(rho, setup: Setup):
    """Two-solve sensitivity of the raw output displacement.

    Solves ``K u = f`` and the adjoint ``K lam = -l`` (``l`` the unit vector at
    the output DOF) with independent factorizations, then
    ``d u_out / d rho_e = lam_e^T dK/drho_e u_e``. Returns
    ``(u_out, grad, n_solves)``.
    """
    bc = setup.bc
    K = ad.primal(setup.stiffness(np.asarray(rho, dtype=float)))
    u = bc.expand(fem.dense_solve(K, setup.reduced(bc.force)))
    l = np.zeros(bc.ndof)
    l[bc.output_dof] = 1.0
    lam = bc.expand(fem.dense_solve(K, -setup.reduced(l)))
    phys = setup.pipeline.physical_values(rho)
    dE = setup.material.derivative(phys)
    grad_phys = dE * fem.element_products(lam, u, setup.mesh, setup.D0)
    return float(u[bc.output_dof]), setup.pipeline.chain(rho, grad_phys), 2


# ---------------------------------------------------------------------------
# homogenization

VOIGT = ("11", "22", "12")


@dataclass(frozen=True)
class TestStrainCase:
    __test__ = False

    label: str
    strain: np.ndarray
    local_displacement: np.ndarray


def unit_strain_cases(size: float = 1.0) -> list[TestStrainCase]:
    """Unit strains in Voigt order, engineering shear for ``12``."""
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) * size
    x, y = xy[:, 0], xy[:, 1]
    fields = {
        "11": (x, 0.0 * x),
        "22": (0.0 * x, y),
        "12": (0.5 * y, 0.5 * x),
    }
    cases = []
    for i, label in enumerate(VOIGT):
        ux, uy = fields[label]
        cases.append(TestStrainCase(label, np.eye(3)[i], np.column_stack([ux, uy]).ravel()))
    return cases


@dataclass
class HomogenizedTensor:
    """3x3 effective matrix in Voigt order; entries may be traced scalars."""

    entries: list[list]

    @property
    def CH(self) -> np.ndarray:
        return np.array([[float(ad.primal(c)) for c in row] for row in self.entries])

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]


def homogenize(rho, setup: Setup) -> HomogenizedTensor:
    """Effective plane-stress matrix of a periodic cell from three unit strains.

    Fluctuations are solved with periodic DOF identification and one pinned
    node; entries are cell-averaged energies of the total element fields.
    """
    mesh, bc = setup.mesh, setup.bc
    if bc.periodic is None:
        raise ValueError("homogenize needs periodic boundary conditions (unit_cell preset)")
    D0 = setup.D0
    E = setup.pipeline.moduli(rho)
    K = fem.assemble(E, mesh, bc, D0)
    rows = bc.dof_map[mesh.edof]
    n = bc.nfree
    chi = []
    for case in unit_strain_cases(mesh.elem_size):
        fe = D0 @ case.local_displacement
        F = ad.scatter_add(np.zeros(n), rows, ad.outer(E, fe))
        uA = fem.solve_reduced(K, F)
        chi.append(case.local_displacement - ad.gather(uA, rows))
    area = mesh.area
    entries = []
    for i in range(3):
        chi_i_D0 = ad.matmul(chi[i], D0)
        row = []
        for j in range(3):
            energy = ad.sum(chi_i_D0 * chi[j], axis=1)
            row.append(ad.sum(E * energy) / area)
        entries.append(row)
    return HomogenizedTensor(entries)


MICRO_KINDS = ("bulk", "shear", "npr")


def micro_objective(CH: HomogenizedTensor, kind: str, iteration: int = 0,
                    beta_npr: float = 0.8):
    """Microstructure objective to minimize.

    ``npr`` rewards negative lateral coupling: ``C_1122 - beta**l (C_1111 +
    C_2222)``, with the stiffness reward fading as the iteration count grows.
    """
    if kind == "bulk":
        return -(CH[0, 0] + CH[0, 1] + CH[1, 0] + CH[1, 1])
    if kind == "shear":
        return -CH[2, 2]
    if kind == "npr":
        if not 0.0 < beta_npr < 1.0:
            raise ValueError(f"relaxation factor must lie in (0, 1), got {beta_npr}")
        return CH[0, 1] - beta_npr ** int(iteration) * (CH[0, 0] + CH[1, 1])
    raise ValueError(f"unknown microstructure objective {kind!r}")
