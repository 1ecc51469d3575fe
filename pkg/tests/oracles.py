"""Reference implementations that share no code with the package under test.

* ``oc_reference``: a compact optimality-criteria topology optimizer written in
  the style of the classic educational codes (closed-form element matrices,
  sparse assembly, explicit loops for the filter).
* ``mma_dual_bisection``: the MMA subproblem rebuilt from its textbook recipe
  and solved by (nested) bisection on the dual.
* ``plane_stress``: closed-form constitutive matrix.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse
import scipy.sparse.linalg


def plane_stress(E=1.0, nu=0.3):
    return E / (1 - nu * nu) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


def ke_elastic(nu=0.3):
    """Closed-form Q4 plane-stress element matrix (unit modulus, unit square)."""
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
                  -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8])
    idx = [[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 7, 6, 5, 4, 3, 2], [2, 7, 0, 5, 6, 3, 4, 1],
           [3, 6, 5, 0, 7, 2, 1, 4], [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 3, 2, 1, 0, 7, 6],
           [6, 3, 4, 1, 2, 7, 0, 5], [7, 2, 1, 4, 3, 6, 5, 0]]
    return 1 / (1 - nu ** 2) * k[np.array(idx)]


def ke_thermal():
    return np.array([[2 / 3, -1 / 6, -1 / 3, -1 / 6], [-1 / 6, 2 / 3, -1 / 6, -1 / 3],
                     [-1 / 3, -1 / 6, 2 / 3, -1 / 6], [-1 / 6, -1 / 3, -1 / 6, 2 / 3]])


def _edofs(nelx, nely, dpn):
    """Element connectivity with nodes numbered down each column (ccw from bottom-left)."""
    out = []
    for elx in range(nelx):
        for ely in range(nely):
            n1 = (nely + 1) * elx + ely
            n2 = (nely + 1) * (elx + 1) + ely
            nodes = [n1 + 1, n2 + 1, n2, n1]
            out.append([dpn * n + d for n in nodes for d in range(dpn)])
    return np.array(out)


def _filter(nelx, nely, rmin):
    rows, cols, vals = [], [], []
    r = int(np.ceil(rmin)) - 1
    for i in range(nelx):
        for j in range(nely):
            e = i * nely + j
            for k in range(max(i - r, 0), min(i + r + 1, nelx)):
                for m in range(max(j - r, 0), min(j + r + 1, nely)):
                    w = max(0.0, rmin - np.hypot(i - k, j - m))
                    if w > 0:
                        rows.append(e)
                        cols.append(k * nely + m)
                        vals.append(w)
    H = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(nelx * nely,) * 2).tocsr()
    return H, np.asarray(H.sum(axis=1)).ravel()


def oc_reference(problem, nelx, nely, vf=0.5, penal=3.0, rmin=1.5, Emin=None, Emax=1.0,
                 nu=0.3, max_iter=200, tol=0.01, move=0.2):
    """Density-filtered SIMP compliance design by optimality criteria.

    Returns ``(x_phys, compliance, iterations)``.
    """
    if problem == "cantilever":
        dpn, KE = 2, ke_elastic(nu)
        Emin = 1e-9 if Emin is None else Emin
        ndof = 2 * (nelx + 1) * (nely + 1)
        f = np.zeros(ndof)
        f[2 * ((nely + 1) * nelx + nely // 2) + 1] = -1.0
        fixed = np.arange(2 * (nely + 1))
    elif problem == "thermal_plate":
        dpn, KE = 1, ke_thermal()
        Emin = 1e-3 if Emin is None else Emin
        ndof = (nelx + 1) * (nely + 1)
        f = np.full(ndof, 0.01)
        fixed = np.array([j for j in range(nely + 1) if 0.3 * nely - 1e-9 <= j <= 0.7 * nely + 1e-9])
    else:
        raise ValueError(problem)
    f[fixed] = 0.0
    free = np.setdiff1d(np.arange(ndof), fixed)
    edof = _edofs(nelx, nely, dpn)
    k = edof.shape[1]
    iK = np.repeat(edof, k, axis=1).ravel()
    jK = np.tile(edof, (1, k)).ravel()
    H, Hs = _filter(nelx, nely, rmin)
    n = nelx * nely
    x = np.full(n, vf)
    phys = x.copy()
    it = 0
    for it in range(1, max_iter + 1):
        phys = (H @ x) / Hs
        E = Emin + phys ** penal * (Emax - Emin)
        K = scipy.sparse.coo_matrix((np.outer(E, KE.ravel()).ravel(), (iK, jK)),
                                    shape=(ndof, ndof)).tocsc()
        u = np.zeros(ndof)
        u[free] = scipy.sparse.linalg.spsolve(K[free][:, free], f[free])
        ce = np.einsum("ij,jk,ik->i", u[edof], KE, u[edof])
        dc = -penal * phys ** (penal - 1) * (Emax - Emin) * ce
        dc = H @ (dc / Hs)
        dv = H @ (np.ones(n) / Hs)
        lo, hi = 0.0, 1e9
        while (hi - lo) / (hi + lo) > 1e-6:
            mid = 0.5 * (lo + hi)
            xn = np.clip(x * np.sqrt(np.maximum(-dc, 0) / dv / mid),
                         np.maximum(0.0, x - move), np.minimum(1.0, x + move))
            if ((H @ xn) / Hs).mean() > vf:
                lo = mid
            else:
                hi = mid
        change = np.max(np.abs(xn - x))
        x = xn
        if change <= tol:
            break
    phys = (H @ x) / Hs
    E = Emin + phys ** penal * (Emax - Emin)
    K = scipy.sparse.coo_matrix((np.outer(E, KE.ravel()).ravel(), (iK, jK)),
                                shape=(ndof, ndof)).tocsc()
    u = np.zeros(ndof)
    u[free] = scipy.sparse.linalg.spsolve(K[free][:, free], f[free])
    return phys, float(f @ u), it


def mma_dual_bisection(x, dJ, g, dg, low=None, upp=None, asyinit=0.5, move=0.5, albefa=0.1,
                       raa0=1e-5, xmin=0.0, xmax=1.0, c=1000.0, d=1.0, normalize=True):
    """First-iteration MMA subproblem solved on its dual by bisection (m <= 2)."""
    x = np.asarray(x, float)
    dJ = np.asarray(dJ, float)
    g = np.atleast_1d(np.asarray(g, float))
    dg = np.atleast_2d(np.asarray(dg, float))
    m = g.size
    if m > 2:
        raise ValueError("oracle supports at most two constraints")
    span = xmax - xmin
    L = x - asyinit * span if low is None else low
    U = x + asyinit * span if upp is None else upp
    lo_box = np.maximum(np.maximum(L + albefa * (x - L), x - move * span), xmin)
    hi_box = np.minimum(np.minimum(U - albefa * (U - x), x + move * span), xmax)
    if normalize and np.max(np.abs(dJ)) > 0:
        dJ = dJ / np.max(np.abs(dJ))

    def pq(grad):
        gp, gm = np.maximum(grad, 0), np.maximum(-grad, 0)
        p = (U - x) ** 2 * (1.001 * gp + 0.001 * gm + raa0 / span)
        q = (x - L) ** 2 * (0.001 * gp + 1.001 * gm + raa0 / span)
        return p, q

    p0, q0 = pq(dJ)
    pq_c = [pq(dg[i]) for i in range(m)]
    r = [g[i] - np.sum(pq_c[i][0] / (U - x) + pq_c[i][1] / (x - L)) for i in range(m)]

    def primal(lam):
        P = p0 + sum(lam[i] * pq_c[i][0] for i in range(m))
        Q = q0 + sum(lam[i] * pq_c[i][1] for i in range(m))
        xs = (np.sqrt(P) * L + np.sqrt(Q) * U) / (np.sqrt(P) + np.sqrt(Q))
        xs = np.minimum(np.maximum(xs, lo_box), hi_box)
        y = np.maximum(0.0, (np.asarray(lam) - c) / d)
        return xs, y

    def residual(lam, i):
        xs, y = primal(lam)
        return np.sum(pq_c[i][0] / (U - xs) + pq_c[i][1] / (xs - L)) + r[i] - y[i]

    def root(fn, hi=1e6, iters=200):
        # fn is nonincreasing in its argument; returns the dual maximizer on [0, inf)
        if fn(0.0) <= 0.0:
            return 0.0
        lo = 0.0
        while fn(hi) > 0.0:
            hi *= 10.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if fn(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    if m == 1:
        lam = np.array([root(lambda t: residual([t], 0))])
    else:
        def inner(l1):
            return root(lambda t: residual([l1, t], 1))
        l1 = root(lambda t: residual([t, inner(t)], 0), iters=100)
        lam = np.array([l1, inner(l1)])
    xs, _ = primal(lam)
    return xs, lam
