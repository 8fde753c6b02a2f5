"""Stacked equality system, rank-based feasibility test and motion basis.

The kinematic codistribution rows and the task equality rows are stacked into
``Omega P' = T``. The task is feasible at ``(P, t)`` when ``rank(Omega)`` equals
``rank([Omega | T])``; all feasible joint velocities are then
``Kbar + K w`` with ``Kbar`` the minimum-norm solution and ``K`` an
orthonormal null-space basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import EPS_ACT, active_mask, evaluate
from .errors import DimensionMismatch, InfeasibleSystem
from .kinematics import JointState, Layout, stack_kinematics

RANK_TOL = 1e-10
PIVOT_TOL = 1e-6


class ConstraintStack:
    """Labeled rows of the velocity-level system at one ``(P, t)``.

    Attributes
    ----------
    omega, rhs : ndarray
        Kinematic rows followed by equality rows.
    labels : list of (source, constraint id, row)
    inequality_omega, inequality_rhs : ndarray
        Active inequality rows only.
    inequality_labels : list of (constraint id, row)
    ineq : dict
        Every inequality row (``omega``, ``rhs``, ``values``, ``scales``,
        ``labels``, ``active``), used by the discrete-time filter.
    equality_values : ndarray
        Residuals of the state-level equality rows (velocity rows excluded).
    """

    def __init__(self, layout, omega, rhs, labels, ineq, equality_values=None):
        self.layout = layout
        self.omega = omega
        self.rhs = rhs
        self.labels = list(labels)
        self.ineq = ineq
        act = ineq["active"]
        self.inequality_omega = ineq["omega"][act]
        self.inequality_rhs = ineq["rhs"][act]
        self.inequality_labels = [lab for lab, a in zip(ineq["labels"], act) if a]
        self.equality_values = np.zeros(0) if equality_values is None else equality_values

    @property
    def N(self):
        return self.omega.shape[1]

    @property
    def M(self):
        return self.omega.shape[0]

    def with_rows(self, rows, rhs, source="equality", cid="extra"):
        """Copy of the stack with extra equality rows appended."""
        rows = np.atleast_2d(np.asarray(rows, float))
        rhs = np.atleast_1d(np.asarray(rhs, float))
        if rows.shape[1] != self.N or rows.shape[0] != rhs.shape[0]:
            raise DimensionMismatch("extra rows do not match the stack width")
        labels = self.labels + [(source, cid, r) for r in range(rows.shape[0])]
        return ConstraintStack(self.layout, np.vstack([self.omega, rows]),
                               np.concatenate([self.rhs, rhs]), labels, self.ineq,
                               self.equality_values)


def _empty_ineq(N):
    return {"omega": np.zeros((0, N)), "rhs": np.zeros(0), "values": np.zeros(0),
            "scales": np.zeros(0), "labels": [], "active": np.zeros(0, bool)}


def inequality_rows(layout, inequality_cs, x, t, eps_act=EPS_ACT):
    N = layout.N
    if not inequality_cs:
        return _empty_ineq(N)
    Ws, Ts, gs, ss, labels = [], [], [], [], []
    for c in inequality_cs:
        g, J, T, s = evaluate(c, layout, x, t)
        Ws.append(J)
        Ts.append(T)
        gs.append(g)
        ss.append(s)
        labels += [(c.id, r) for r in range(c.row_count)]
    g, s = np.concatenate(gs), np.concatenate(ss)
    return {"omega": np.vstack(Ws), "rhs": np.concatenate(Ts), "values": g,
            "scales": s, "labels": labels, "active": active_mask(g, s, eps_act)}


def assemble(models, equality_cs, inequality_cs, P, t, eps_act=EPS_ACT):
    """Build the :class:`ConstraintStack` at ``(P, t)``."""
    if isinstance(P, JointState):
        layout, x = P.layout, P.x
    else:
        layout = Layout(models)
        x = np.asarray(P, float)
        if x.shape != (layout.N,):
            raise DimensionMismatch(f"joint state needs length {layout.N}, got {x.shape}")
    WK, TK = stack_kinematics(layout.models, JointState(layout, x))
    labels = []
    for i, m in enumerate(layout.models):
        labels += [("kinematic", f"vehicle{i}", r) for r in range(m.n - m.l)]
    Ws, Ts, eqv = [WK], [TK], []
    for c in equality_cs:
        if c.flavor != "equality":
            raise DimensionMismatch(f"constraint {c.id!r} is not an equality")
        g, J, T, _ = evaluate(c, layout, x, t)
        Ws.append(J)
        Ts.append(T)
        if not c.is_velocity_level:
            eqv.append(g)
        labels += [("equality", c.id, r) for r in range(c.row_count)]
    for c in inequality_cs:
        if c.flavor != "inequality":
            raise DimensionMismatch(f"constraint {c.id!r} is not an inequality")
    ineq = inequality_rows(layout, inequality_cs, x, t, eps_act)
    return ConstraintStack(layout, np.vstack(Ws), np.concatenate(Ts), labels, ineq,
                           np.concatenate(eqv) if eqv else np.zeros(0))


# --------------------------------------------------------------------------
# rank test

def numerical_rank(A, tol=RANK_TOL):
    A = np.atleast_2d(A)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0] * max(A.shape)))


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    rank: int
    rank_augmented: int
    kappa: int

    @property
    def status(self):
        return "Feasible" if self.feasible else "Infeasible"

    def __bool__(self):
        return self.feasible


def check_feasibility(stack: ConstraintStack, tol=RANK_TOL) -> Feasibility:
    r = numerical_rank(stack.omega, tol)
    ra = numerical_rank(np.column_stack([stack.omega, stack.rhs]), tol) if stack.M else 0
    return Feasibility(r == ra, r, ra, stack.N - r)


# --------------------------------------------------------------------------
# motion basis

@dataclass
class MotionBasis:
    """Special solution ``special`` and orthonormal null basis ``K`` (N x kappa)."""

    special: np.ndarray
    K: np.ndarray
    rank: int
    residual: float

    @property
    def kappa(self):
        return self.K.shape[1]

    @property
    def basis(self):
        return [self.K[:, l] for l in range(self.kappa)]


def canonical_null_basis(Z):
    """Deterministic orthonormal basis of ``span(Z)``.

    Ordered Gram-Schmidt on the projections of the unit coordinate vectors,
    so the result depends only on the subspace, not on the SVD's choice of
    basis; each vector has a positive entry at its pivot coordinate.
    """
    N, k = Z.shape
    if k == 0:
        return np.zeros((N, 0))
    Q = []
    for i in range(N):
        v = Z @ Z[i]  # projection of e_i onto span(Z)
        for _ in range(2):
            for q in Q:
                v = v - q * (q @ v)
        nv = np.linalg.norm(v)
        if nv > PIVOT_TOL:
            Q.append(v / nv)
            if len(Q) == k:
                break
    if len(Q) < k:  # pathological; fall back to the raw basis
        return Z.copy()
    return np.column_stack(Q)


def solve_basis(stack: ConstraintStack, tol=RANK_TOL, residual_tol=1e-8, canonical=True) -> MotionBasis:
    """Minimum-norm special solution and null-space basis.

    With ``canonical`` (the default) the basis is put in the deterministic
    form of :func:`canonical_null_basis`; otherwise the raw SVD basis is
    returned, which is enough when only the null-space projector is needed.
    """
    A, b = stack.omega, stack.rhs
    N = stack.N
    if stack.M == 0:
        return MotionBasis(np.zeros(N), np.eye(N), 0, 0.0)
    U, s, Vt = np.linalg.svd(A)
    r = int(np.sum(s > tol * s[0] * max(A.shape))) if s[0] > 0 else 0
    special = Vt[:r].T @ ((U[:, :r].T @ b) / s[:r])
    residual = float(abs(A @ special - b).max())
    scale = max(1.0, float(abs(b).max()), float(abs(A).max()) * float(abs(special).max()))
    if residual > residual_tol * scale:
        raise InfeasibleSystem(f"equality system is inconsistent (residual {residual:.3g}, rank {r})")
    K = canonical_null_basis(Vt[r:].T) if canonical else Vt[r:].T
    return MotionBasis(special, K, r, residual)


def affine_projection(A, b, v, tol=1e-12):
    """Closest point to ``v`` on ``{x : A x = b}`` (min-norm solution plus projected ``v``).

    Uses the normal equations when they reproduce ``b`` accurately and
    falls back to a minimum-norm least-squares solve otherwise; for ``v`` in the null space this equals
    ``Kbar + K K' v``.
    """
    if A.shape[0] == 0:
        return v.copy()
    r = b - A @ v
    if A.shape[0] == 1:
        a = A[0]
        aa = float(a @ a)
        if aa > tol:
            return v + a * (r[0] / aa)
    try:
        out = v + A.T @ np.linalg.solve(A @ A.T, r)
        scale = max(1.0, float(np.abs(b).max()), float(np.abs(A).max()) * float(np.abs(out).max()))
        if np.abs(A @ out - b).max() <= 1e-10 * scale:
            return out
    except np.linalg.LinAlgError:
        pass
    return v + np.linalg.lstsq(A, r, rcond=RANK_TOL * max(A.shape))[0]


def verify_solution_membership(basis, stack, candidate) -> float:
    candidate = np.asarray(candidate, float)
    if candidate.shape != (stack.N,):
        raise DimensionMismatch(f"candidate needs length {stack.N}")
    if stack.M == 0:
        return 0.0
    return float(np.max(np.abs(stack.omega @ candidate - stack.rhs)))
