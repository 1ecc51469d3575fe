"""Method of Moving Asymptotes: one design update per call.

The convex separable subproblem is

    min   sum_j p0_j/(U_j-x_j) + q0_j/(x_j-L_j) + a0 z + sum_i (c_i y_i + d_i y_i^2/2)
    s.t.  sum_j P_ij/(U_j-x_j) + Q_ij/(x_j-L_j) - a_i z - y_i <= b_i
          alpha <= x <= beta,  y >= 0,  z >= 0

with artificial variables ``y`` keeping it feasible. It is solved by a
primal-dual interior-point method on the m x m reduced Newton system, then
polished with the closed-form minimizer for the final multipliers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MMAError(RuntimeError):
    pass


@dataclass(frozen=True)
class MMAParams:
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    move: float = 0.5
    albefa: float = 0.1
    raa0: float = 1e-5
    xmin: float = 0.0
    xmax: float = 1.0
    a0: float = 1.0
    c: float = 1000.0
    d: float = 1.0
    kkt_tol: float = 1e-9
    artificial: bool = True
    normalize_objective: bool = True

    def __post_init__(self):
        if not 0.0 < self.asydecr < 1.0 < self.asyincr:
            raise ValueError("need 0 < asydecr < 1 < asyincr")
        if not 0.0 < self.move <= 1.0:
            raise ValueError(f"move limit must lie in (0, 1], got {self.move}")
        if not self.xmin < self.xmax:
            raise ValueError("need xmin < xmax")


@dataclass
class MMAState:
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    x_prev1: np.ndarray | None = None
    x_prev2: np.ndarray | None = None
    iter: int = 0
    kkt: float = float("nan")


@dataclass
class Subproblem:
    low: np.ndarray
    upp: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    b: np.ndarray
    a0: float
    a: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def n(self):
        return self.p0.size

    @property
    def m(self):
        return self.b.size

    def constraints(self, x):
        return self.P @ (1.0 / (self.upp - x)) + self.Q @ (1.0 / (x - self.low))

    def objective(self, x, y, z):
        f = np.sum(self.p0 / (self.upp - x) + self.q0 / (x - self.low))
        return f + self.a0 * z + np.sum(self.c * y + 0.5 * self.d * y * y)

    def x_of(self, lam):
        """Box-constrained minimizer of the Lagrangian in x for multipliers ``lam``."""
        sp = np.sqrt(self.p0 + self.P.T @ lam)
        sq = np.sqrt(self.q0 + self.Q.T @ lam)
        x = (sp * self.low + sq * self.upp) / (sp + sq)
        return np.clip(x, self.alpha, self.beta)

    def y_of(self, lam):
        return np.maximum(0.0, (lam - self.c) / self.d)


@dataclass
class SubSolution:
    x: np.ndarray
    y: np.ndarray
    z: float
    lam: np.ndarray
    kkt: float
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def _asymptotes(x, state: MMAState, params: MMAParams):
    span = np.full_like(x, params.xmax - params.xmin)
    if state.iter < 2 or state.low is None:
        return x - params.asyinit * span, x + params.asyinit * span
    x1, x2 = state.x_prev1, state.x_prev2
    trend = (x - x1) * (x1 - x2)
    factor = np.ones_like(x)
    factor[trend > 0] = params.asyincr
    factor[trend < 0] = params.asydecr
    low = x - factor * (x1 - state.low)
    upp = x + factor * (state.upp - x1)
    low = np.clip(low, x - 10.0 * span, x - 0.01 * span)
    upp = np.clip(upp, x + 0.01 * span, x + 10.0 * span)
    return low, upp


def _split(grad, ux, xl, floor):
    pos = np.maximum(grad, 0.0)
    neg = np.maximum(-grad, 0.0)
    p = ux ** 2 * (1.001 * pos + 0.001 * neg + floor)
    q = xl ** 2 * (0.001 * pos + 1.001 * neg + floor)
    return p, q


def build_subproblem(x, dJ, g, dg, state: MMAState, params: MMAParams) -> Subproblem:
    x = np.asarray(x, dtype=float)
    dJ = np.asarray(dJ, dtype=float)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    dg = np.atleast_2d(np.asarray(dg, dtype=float))
    low, upp = _asymptotes(x, state, params)
    span = params.xmax - params.xmin
    alpha = np.maximum.reduce([low + params.albefa * (x - low),
                               x - params.move * span,
                               np.full_like(x, params.xmin)])
    beta = np.minimum.reduce([upp - params.albefa * (upp - x),
                              x + params.move * span,
                              np.full_like(x, params.xmax)])
    if params.normalize_objective:
        scale = np.max(np.abs(dJ))
        if scale > 0.0:
            dJ = dJ / scale
    ux, xl = upp - x, x - low
    floor = params.raa0 / span
    p0, q0 = _split(dJ, ux, xl, floor)
    P, Q = _split(dg, ux[None, :], xl[None, :], floor)
    b = P @ (1.0 / ux) + Q @ (1.0 / xl) - g
    m = g.size
    c = params.c if params.artificial else 1e10
    return Subproblem(low, upp, alpha, beta, p0, q0, P, Q, b, params.a0,
                      np.zeros(m), np.full(m, c), np.full(m, params.d))


def kkt_residual(sub: Subproblem, x, y, z, lam) -> float:
    """Max-norm KKT violation, measured from the subproblem data alone."""
    x, y, lam = np.asarray(x), np.asarray(y), np.asarray(lam)
    plam = sub.p0 + sub.P.T @ lam
    qlam = sub.q0 + sub.Q.T @ lam
    gx = plam / (sub.upp - x) ** 2 - qlam / (x - sub.low) ** 2
    r_x = np.abs(x - np.clip(x - gx, sub.alpha, sub.beta))
    gy = sub.c + sub.d * y - lam
    r_y = np.abs(y - np.maximum(0.0, y - gy))
    gz = sub.a0 - sub.a @ lam
    r_z = abs(z - max(0.0, z - gz))
    h = sub.constraints(x) - sub.a * z - y - sub.b
    parts = [r_x.max(initial=0.0), r_y.max(initial=0.0), r_z,
             np.maximum(h, 0.0).max(initial=0.0),
             np.maximum(-lam, 0.0).max(initial=0.0),
             np.abs(lam * h).max(initial=0.0),
             max(0.0, np.max(sub.alpha - x, initial=0.0)),
             max(0.0, np.max(x - sub.beta, initial=0.0)),
             max(0.0, np.max(-y, initial=0.0))]
    return float(max(parts))


def solve_subproblem(sub: Subproblem, epsimin: float = 1e-11,
                     max_inner: int = 200) -> SubSolution:
    n, m = sub.n, sub.m
    alpha, beta, low, upp = sub.alpha, sub.beta, sub.low, sub.upp
    a, c, d, a0 = sub.a, sub.c, sub.d, sub.a0
    x = 0.5 * (alpha + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / (x - alpha), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(1.0, 0.5 * c)
    zet = 1.0
    s = np.ones(m)
    total = 0

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux, xl = upp - x, x - low
        plam = sub.p0 + sub.P.T @ lam
        qlam = sub.q0 + sub.Q.T @ lam
        gvec = sub.P @ (1.0 / ux) + sub.Q @ (1.0 / xl)
        rex = plam / ux ** 2 - qlam / xl ** 2 - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - sub.b
        r = np.concatenate([rex, rey, [rez], relam,
                            xsi * (x - alpha) - epsi, eta * (beta - x) - epsi,
                            mu * y - epsi, [zet * z - epsi], lam * s - epsi])
        return np.linalg.norm(r), np.abs(r).max()

    epsi = 1.0
    while epsi > epsimin:
        norm, _ = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        inner = 0
        while norm > 0.9 * epsi and inner < max_inner:
            inner += 1
            ux, xl = upp - x, x - low
            plam = sub.p0 + sub.P.T @ lam
            qlam = sub.q0 + sub.Q.T @ lam
            gvec = sub.P @ (1.0 / ux) + sub.Q @ (1.0 / xl)
            GG = sub.P / ux ** 2 - sub.Q / xl ** 2
            delx = plam / ux ** 2 - qlam / xl ** 2 - epsi / (x - alpha) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - sub.b + epsi / lam
            diagx = 2.0 * (plam / ux ** 3 + qlam / xl ** 3) + xsi / (x - alpha) + eta / (beta - x)
            diagy = d + mu / y
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            Alam = np.diag(s / lam + 1.0 / diagy) + (GG / diagx) @ GG.T
            AA = np.block([[Alam, a[:, None]], [a[None, :], np.array([[-zet / z]])]])
            sol = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
            dlam, dz = sol[:m], sol[m]
            dx = -delx / diagx - (GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alpha) - xsi * dx / (x - alpha)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam

            ratios = [(-1.01 * dw / w).max() for w, dw in
                      ((y, dy), (np.array([z]), np.array([dz])), (lam, dlam), (xsi, dxsi),
                       (eta, deta), (mu, dmu), (np.array([zet]), np.array([dzet])), (s, ds))]
            ratios.append((-1.01 * dx / (x - alpha)).max())
            ratios.append((1.01 * dx / (beta - x)).max())
            step = 1.0 / max(1.0, *ratios)

            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            for _ in range(60):
                trial = (x + step * dx, y + step * dy, z + step * dz, lam + step * dlam,
                         xsi + step * dxsi, eta + step * deta, mu + step * dmu,
                         zet + step * dzet, s + step * ds)
                new_norm, _ = residual(*trial, epsi)
                if new_norm < norm:
                    break
                step *= 0.5
            else:
                trial = old
                new_norm = norm
            x, y, z, lam, xsi, eta, mu, zet, s = trial
            if new_norm >= norm:
                break
            norm = new_norm
        total += inner
        epsi *= 0.1

    lam = np.maximum(lam, 0.0)
    xp, yp, lamp = _polish(sub, lam, s)
    kkt_raw = kkt_residual(sub, x, y, z, lam)
    kkt_pol = kkt_residual(sub, xp, yp, 0.0, lamp)
    if kkt_pol <= kkt_raw:
        x, y, z, lam = xp, yp, 0.0, lamp
    return SubSolution(x, y, float(z), lam, min(kkt_pol, kkt_raw), total,
                       {"kkt_interior": kkt_raw})


def _dual_jacobian(sub: Subproblem, lam, x):
    """d h / d lam for h(lam) = constraints(x(lam)) - y(lam) - b."""
    sp = np.sqrt(sub.p0 + sub.P.T @ lam)
    sq = np.sqrt(sub.q0 + sub.Q.T @ lam)
    r = sq / sp
    dx_dr = (sub.upp - sub.low) / (1.0 + r) ** 2
    dr = sub.Q / (2.0 * sq * sp) - sub.P * sq / (2.0 * sp ** 3)  # (m, n)
    free = (x > sub.alpha) & (x < sub.beta)
    dx = dr * (dx_dr * free)
    GG = sub.P / (sub.upp - x) ** 2 - sub.Q / (x - sub.low) ** 2
    jac = GG @ dx.T
    jac -= np.diag((lam > sub.c) / sub.d)
    return jac


def _polish(sub: Subproblem, lam, s, iters: int = 30):
    """Active-set Newton on the dual; inactive multipliers are set to zero.

    Requires ``a = 0`` (z decoupled), which is how subproblems are built here.
    """
    active = lam > s
    lam = np.where(active, lam, 0.0)
    for _ in range(iters):
        x = sub.x_of(lam)
        h = sub.constraints(x) - sub.y_of(lam) - sub.b
        if not active.any():
            break
        idx = np.flatnonzero(active)
        jac = _dual_jacobian(sub, lam, x)[np.ix_(idx, idx)]
        try:
            step = np.linalg.solve(jac, h[idx])
        except np.linalg.LinAlgError:
            break
        trial = lam.copy()
        trial[idx] -= step
        if np.any(trial[idx] < 0.0):
            trial = np.maximum(trial, 0.0)
            active = trial > 0.0
        if np.array_equal(trial, lam):
            break
        lam = trial
    return sub.x_of(lam), sub.y_of(lam), lam


def mma_update(x, J, dJ, g, dg, state: MMAState | None = None,
               params: MMAParams | None = None):
    """One MMA step; returns ``(x_new, new_state)``."""
    params = params or MMAParams()
    state = state or MMAState()
    x = np.asarray(x, dtype=float)
    arrays = [np.asarray(J, dtype=float), np.asarray(dJ, dtype=float),
              np.asarray(g, dtype=float), np.asarray(dg, dtype=float)]
    if not all(np.all(np.isfinite(arr)) for arr in arrays):
        raise ValueError("mma_update: objective/constraint values and gradients must be finite")
    g = np.atleast_1d(arrays[2])
    dg = np.atleast_2d(arrays[3])
    if g.size < 1 or dg.shape != (g.size, x.size):
        raise ValueError(f"mma_update: constraint gradients must be ({g.size}, {x.size})")
    sub = build_subproblem(x, arrays[1], g, dg, state, params)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        sol = solve_subproblem(sub, epsimin=min(1e-11, 1e-2 * params.kkt_tol))
    if not np.all(np.isfinite(sol.x)):
        raise MMAError("mma_update: subproblem solver diverged")
    if not params.artificial and np.any(sol.y > 1e-9):
        raise MMAError("mma_update: subproblem infeasible without artificial variables")
    new_state = MMAState(sub.low, sub.upp, x.copy(),
                         x.copy() if state.x_prev1 is None else state.x_prev1,
                         state.iter + 1, sol.kkt)
    return sol.x, new_state

