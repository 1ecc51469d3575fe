"""Design constraints as traceable scalar functions (feasible when <= 0)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import adgraph as ad
from .mesh import GridMesh
from .models import neighbourhood_operator


def global_volume_constraint(rho_bar, vf: float):
    """``mean(rho_bar) / vf - 1`` for uniform element volumes."""
    if not 0.0 < vf <= 1.0:
        raise ValueError(f"volume fraction must lie in (0, 1], got {vf}")
    return ad.mean(rho_bar) / vf - 1.0


@dataclass(frozen=True)
class LengthScaleParams:
    L: scipy.sparse.csr_matrix
    n: float = 1.0
    p_agg: float = 16.0
    vstar: float = 0.75

    def __post_init__(self):
        if self.p_agg < 1:
            raise ValueError(f"aggregation exponent must be >= 1, got {self.p_agg}")
        if not self.vstar > 0:
            raise ValueError(f"void budget must be positive, got {self.vstar}")

    @classmethod
    def build(cls, mesh: GridMesh, radius: float = 30.0, void_fraction: float = 0.75,
              n: float = 1.0, p_agg: float = 16.0) -> "LengthScaleParams":
        """Averaging window of ``radius``; ``void_fraction`` is the per-window
        void ratio (0.75 for a void area of 0.75*pi*r^2), scaled by the p-norm
        of a uniform field so the bound reads as a power mean."""
        L = neighbourhood_operator(mesh, radius, kind="flat").tocsr()
        return cls(L, n, p_agg, void_fraction * mesh.n_elem ** (1.0 / p_agg))


def max_length_scale_constraint(rho, params: LengthScaleParams):
    v = ad.matvec(params.L, (1.01 - rho) ** params.n)
    return 1.0 - ad.pnorm(v, params.p_agg) / params.vstar
