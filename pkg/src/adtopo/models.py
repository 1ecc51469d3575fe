"""Material interpolation, density filtering and projection, all traceable."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import adgraph as ad
from . import kernels
from .mesh import GridMesh


@dataclass(frozen=True)
class MaterialParams:
    Emin: float = 1e-9
    Emax: float = 1.0
    penal: float = 3.0
    S: float = 8.0
    model: str = "SIMP"

    def __post_init__(self):
        if not 0.0 < self.Emin < self.Emax:
            raise ValueError(f"need 0 < Emin < Emax, got Emin={self.Emin}, Emax={self.Emax}")
        if self.penal < 1.0:
            raise ValueError(f"SIMP penalty must be >= 1, got {self.penal}")
        if self.S < 0.0:
            raise ValueError(f"RAMP parameter must be >= 0, got {self.S}")
        if self.model not in ("SIMP", "RAMP"):
            raise ValueError(f"material model must be SIMP or RAMP, got {self.model!r}")

    def derivative(self, rho) -> np.ndarray:
        """dE/drho, used only by the hand-derived sensitivity oracles."""
        rho = np.asarray(rho, dtype=float)
        if self.model == "SIMP":
            return (self.Emax - self.Emin) * self.penal * rho ** (self.penal - 1.0)
        return (self.Emax - self.Emin) * (1.0 + self.S) / (1.0 + self.S * (1.0 - rho)) ** 2


@dataclass(frozen=True)
class ProjectionParams:
    beta: float = 4.0
    c0: float = 0.5
    isOn: bool = False

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ValueError(f"projection sharpness must be positive, got {self.beta}")
        if not 0.0 < self.c0 < 1.0:
            raise ValueError(f"projection threshold must lie in (0, 1), got {self.c0}")

    def derivative(self, rho) -> np.ndarray:
        if not self.isOn:
            return np.ones_like(np.asarray(rho, dtype=float))
        t = np.tanh(self.beta * (np.asarray(rho) - self.c0))
        return self.beta * (1.0 - t * t) / self._denominator()

    def _denominator(self):
        return np.tanh(self.c0 * self.beta) + np.tanh(self.beta * (1.0 - self.c0))


def material_model(rho, params: MaterialParams):
    r = ad.primal(rho)
    if np.any(r < -1e-12) or np.any(r > 1.0 + 1e-12):
        raise ValueError("material_model: densities must lie in [0, 1]")
    if params.model == "SIMP":
        return params.Emin + (params.Emax - params.Emin) * rho ** params.penal
    # Emin offset keeps RAMP moduli in [Emin, Emax] and the stiffness definite
    return params.Emin + (params.Emax - params.Emin) * rho / (1.0 + params.S * (1.0 - rho))


def projection_filter(rho, params: ProjectionParams):
    if not params.isOn:
        return rho
    b, c0 = params.beta, params.c0
    return (np.tanh(c0 * b) + ad.tanh(b * (rho - c0))) / params._denominator()


@dataclass(frozen=True)
class FilterOperator:
    """Row-stochastic cone filter ``H`` (sparse, n_elem x n_elem)."""

    H: scipy.sparse.csr_matrix
    rmin: float

    @property
    def shape(self):
        return self.H.shape

    def dense(self) -> np.ndarray:
        return self.H.toarray()


def neighbourhood_operator(mesh: GridMesh, radius: float, kind: str = "cone"):
    """Row-normalized sparse averaging over elements within ``radius``.

    ``cone`` weights neighbours by ``radius - dist``; ``flat`` weights every
    element whose centroid lies strictly within ``radius`` equally.
    """
    rows, cols, w = kernels.cone_weights(mesh.nelx, mesh.nely, radius / mesh.elem_size)
    if kind == "flat":
        w = np.ones_like(w)
    elif kind != "cone":
        raise ValueError(f"unknown neighbourhood weighting {kind!r}")
    n = mesh.n_elem
    W = scipy.sparse.csr_matrix((w, (rows, cols)), shape=(n, n))
    inv = 1.0 / np.asarray(W.sum(axis=1)).ravel()
    return scipy.sparse.diags(inv) @ W


def build_filter(mesh: GridMesh, rmin: float = 1.5) -> FilterOperator:
    if rmin <= 0:
        raise ValueError(f"filter radius must be positive, got {rmin}")
    return FilterOperator(neighbourhood_operator(mesh, rmin).tocsr(), float(rmin))


def density_filter(rho, H: FilterOperator | None):
    if H is None:
        return rho
    n = ad.primal(rho).shape
    if n != (H.shape[1],):
        raise ad.ShapeError(f"density_filter: operator {H.shape} does not match density {n}")
    return ad.matvec(H.H, rho)


@dataclass(frozen=True)
class DesignPipeline:
    """Maps design variables to physical density and element moduli."""

    material: MaterialParams
    filter: FilterOperator | None = None
    projection: ProjectionParams = ProjectionParams()

    def physical(self, rho):
        return projection_filter(density_filter(rho, self.filter), self.projection)

    def moduli(self, rho):
        return material_model(self.physical(rho), self.material)

    def chain(self, rho, grad_phys) -> np.ndarray:
        """Pull a gradient w.r.t. physical density back to the design variables."""
        rho = np.asarray(rho, dtype=float)
        filtered = rho if self.filter is None else self.filter.H @ rho
        g = self.projection.derivative(filtered) * grad_phys
        return g if self.filter is None else self.filter.H.T @ g

    def physical_values(self, rho) -> np.ndarray:
        return np.asarray(self.physical(np.asarray(rho, dtype=float)), dtype=float)
