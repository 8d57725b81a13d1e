"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

Solves::

    min 1/2 x^T H x + g^T x   s.t.  lower <= C x <= upper

for small dense problems with H symmetric positive definite.  Infinite
bounds are dropped.  The dual method starts from the unconstrained
minimiser, so no feasible starting point is required.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QPError(RuntimeError):
    pass


class QPMaxIterations(QPError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    status: str                 # "optimal" | "infeasible"
    lower_multipliers: np.ndarray
    upper_multipliers: np.ndarray
    iterations: int
    active: list

    @property
    def ok(self):
        return self.status == "optimal"


def _one_sided(C, lower, upper):
    rows, rhs, origin = [], [], []
    for i in range(C.shape[0]):
        if np.isfinite(lower[i]):
            rows.append(C[i])
            rhs.append(lower[i])
            origin.append((i, +1))
        if np.isfinite(upper[i]):
            rows.append(-C[i])
            rhs.append(-upper[i])
            origin.append((i, -1))
    n = C.shape[1]
    N = np.array(rows, dtype=float).reshape(-1, n)
    return N, np.array(rhs, dtype=float), origin


def solve_qp(H, g, C=None, lower=None, upper=None, max_iter=None, tol=1e-12) -> QPResult:
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    if C is None:
        C = np.zeros((0, n))
        lower = upper = np.zeros(0)
    C = np.atleast_2d(np.asarray(C, dtype=float)).reshape(-1, n)
    m = C.shape[0]
    lower = np.full(m, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(m, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if max_iter is None:
        max_iter = max(10 * m, 10)

    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise QPError("Hessian is not positive definite") from None
    Linv = np.linalg.solve(L, np.eye(n))
    Hinv = Linv.T @ Linv

    N, b, origin = _one_sided(C, lower, upper)
    x = -Hinv @ g
    active: list[int] = []
    u = np.zeros(0)
    scale = 1.0 + np.abs(b)
    status = "optimal"
    it = 0

    def step_dirs(act, npv):
        if not act:
            return Hinv @ npv, np.zeros(0), None
        Na = N[act].T
        HN = Hinv @ Na
        S = Na.T @ HN
        Nstar = np.linalg.solve(S, HN.T)
        z = Hinv @ npv - HN @ (Nstar @ npv)
        return z, Nstar @ npv, Nstar

    while True:
        slack = N @ x - b
        cand = np.full(len(b), np.inf)
        free = np.ones(len(b), dtype=bool)
        free[active] = False
        cand[free] = slack[free] / scale[free]
        p = int(np.argmin(cand)) if len(b) else -1
        if p < 0 or cand[p] >= -tol:
            break
        npv = N[p]
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise QPMaxIterations(f"no convergence within {max_iter} iterations")
            z, r, _ = step_dirs(active, npv)
            t1, k = np.inf, -1
            for j in range(len(active)):
                if r[j] > 1e-14:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            zn = z @ npv
            # zn is the curvature of n_p in the null space of the working set;
            # a tiny ratio means n_p is (numerically) a combination of active rows
            if zn > 1e-10 * (npv @ Hinv @ npv):
                t2 = -(npv @ x - b[p]) / zn
            else:
                t2 = np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                status = "infeasible"
                break
            if np.isfinite(t2):
                x = x + t * z
            if len(active):
                u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_p)
                break
            del active[k]
            u = np.delete(u, k)
        if status != "optimal":
            break

    if status == "optimal" and active:
        # polish on the final working set
        # with one step of iterative refinement on the full KKT system
        Na = N[active]
        k = len(active)
        K = np.block([[H, -Na.T], [Na, np.zeros((k, k))]])
        rhs = np.concatenate([-g, b[active]])
        sol = np.linalg.solve(K, rhs)
        sol += np.linalg.solve(K, rhs - K @ sol)
        x, u = sol[:n], sol[n:]

    lo_mult = np.zeros(m)
    up_mult = np.zeros(m)
    for j, a in enumerate(active):
        row, sign = origin[a]
        if sign > 0:
            lo_mult[row] = u[j]
        else:
            up_mult[row] = u[j]
    return QPResult(x, status, lo_mult, up_mult, it, [origin[a] for a in active])


def kkt_residuals(H, g, C, lower, upper, res: QPResult):
    """Stationarity, primal violation, complementarity and dual sign residuals."""
    x = res.x
    Cx = C @ x
    stat = H @ x + g - C.T @ (res.lower_multipliers - res.upper_multipliers)
    prim = np.concatenate([np.maximum(lower - Cx, 0.0), np.maximum(Cx - upper, 0.0)])
    fin_l = np.isfinite(lower)
    fin_u = np.isfinite(upper)
    comp = np.concatenate([res.lower_multipliers[fin_l] * (Cx - lower)[fin_l],
                           res.upper_multipliers[fin_u] * (upper - Cx)[fin_u]])
    dual = np.minimum(np.concatenate([res.lower_multipliers, res.upper_multipliers]), 0.0)
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": float(prim.max(initial=0.0)),
        "complementarity": float(np.abs(comp).max(initial=0.0)),
        "dual": float(-dual.min(initial=0.0)),
    }
