"""Dense dual active-set QP solver for small strictly convex problems.

Solves ``min 0.5 w'Gw + a'w  s.t.  C w <= d`` with the Goldfarb-Idnani
method. The dimension here never exceeds a handful of variables, so the
projection operators are recomputed from scratch at every change of the
working set instead of being updated by rank-one QR modifications.
"""

from __future__ import annotations

import numpy as np

from .errors import NoFeasibleVirtualInput


class QPResult:
    __slots__ = ("x", "active", "multipliers", "iterations")

    def __init__(self, x, active, multipliers, iterations):
        self.x = x
        self.active = active
        self.multipliers = multipliers
        self.iterations = iterations


def _operators(Ginv, Nmat):
    """Return (H, Nstar) for the working-set normals in the columns of ``Nmat``."""
    if Nmat.shape[1] == 0:
        return Ginv, np.zeros((0, Ginv.shape[0]))
    GN = Ginv @ Nmat
    Nstar = np.linalg.solve(Nmat.T @ GN, GN.T)
    return Ginv - GN @ Nstar, Nstar


def solve_qp(G, a, C, d, tol=1e-12, max_iter=None) -> QPResult:
    """Minimise ``0.5 x'Gx + a'x`` subject to ``C x <= d``.

    Parameters
    ----------
    G : (n, n) symmetric positive definite
    a : (n,)
    C : (m, n), d : (m,)
    tol : float
        A row counts as violated when ``C_i x - d_i > tol * max(1, |C_i|)``.

    Raises
    ------
    NoFeasibleVirtualInput
        When the constraints admit no solution.
    """
    G = np.asarray(G, float)
    a = np.asarray(a, float)
    n = a.shape[0]
    C = np.asarray(C, float).reshape(-1, n)
    d = np.asarray(d, float).ravel()
    m = C.shape[0]
    # constraints in the n'x >= b convention
    Nall = -C
    b = -d
    norms = np.maximum(1.0, np.sqrt(np.einsum("ij,ij->i", C, C)))
    Ginv = np.linalg.inv(G)
    Ginv = 0.5 * (Ginv + Ginv.T)
    x = -Ginv @ a
    A = []
    u = np.zeros(0)
    max_iter = max_iter or 50 * (m + n + 1)
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise NoFeasibleVirtualInput("QP active-set iteration limit reached")
        if m == 0:
            break
        slack = (b - Nall @ x) / norms  # > 0 means violated
        if A:
            slack[A] = -np.inf
        p = int(np.argmax(slack))
        if slack[p] <= tol:
            break
        npv = Nall[p]
        uplus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise NoFeasibleVirtualInput("QP active-set iteration limit reached")
            H, Nstar = _operators(Ginv, Nall[A].T if A else np.zeros((n, 0)))
            z = H @ npv if len(A) < n else np.zeros(n)
            r = Nstar @ npv
            if np.linalg.norm(z) <= 1e-10 * np.linalg.norm(npv):
                z = np.zeros(n)  # npv depends linearly on the working set
            t1, k = np.inf, -1
            for j in range(len(A)):
                if r[j] > 1e-14:
                    tj = uplus[j] / r[j]
                    if tj < t1:
                        t1, k = tj, j
            zn = z @ npv
            t2 = (b[p] - npv @ x) / zn if zn > 0.0 else np.inf
            tt = min(t1, t2)
            if not np.isfinite(tt):
                raise NoFeasibleVirtualInput("linear constraints on the virtual input are infeasible")
            step = np.append(-r, 1.0)
            if not np.isfinite(t2):
                uplus = uplus + t1 * step
                del A[k]
                uplus = np.delete(uplus, k)
                continue
            x = x + tt * z
            uplus = uplus + tt * step
            if t2 <= t1:
                A.append(p)
                u = uplus
                break
            del A[k]
            uplus = np.delete(uplus, k)
    return QPResult(x, list(A), u, it)
