"""Virtual-input selection, abstract motion and control recovery.

Given a motion basis ``(Kbar, K)`` every joint velocity ``Kbar + K w`` meets
the stacked equalities. The virtual input ``w`` is picked by a small convex
QP that keeps each active inequality row non-increasing
(``Omega_I P' <= T_I``) and stays inside a box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoFeasibleVirtualInput, RankDeficientFields
from .kinematics import JointState, Layout
from .qp import solve_qp

OBJECTIVES = ("min_slew", "zero", "fixed", "random")
REG = 1e-10


@dataclass(frozen=True)
class VirtualInputPolicy:
    """How ``w`` is chosen among the admissible virtual inputs.

    objective
        ``min_slew`` keeps ``P'`` close to the previous step's velocity,
        ``zero`` picks the smallest admissible ``w``, ``fixed`` tracks
        ``fixed_w`` as closely as the constraints allow and ``random`` tracks
        a seeded random target redrawn every ``random_hold`` seconds.
    w_box
        ``(w_min, w_max)``, scalars or per-component sequences.
    """

    objective: str = "min_slew"
    w_box: tuple = (-10.0, 10.0)
    fixed_w: tuple = None
    qp_tolerance: float = 1e-9
    seed: int = 0
    random_hold: float = 0.5

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        lo, hi = (np.asarray(v, float) for v in self.w_box)
        if np.any(lo > hi):
            raise ValueError("w_box requires w_min <= w_max")
        if self.objective == "fixed" and self.fixed_w is None:
            raise ValueError("fixed objective needs fixed_w")
        if self.fixed_w is not None:
            object.__setattr__(self, "fixed_w", tuple(float(v) for v in self.fixed_w))

    def bounds(self, kappa):
        lo, hi = (np.full(kappa, float(v)) if np.ndim(v) == 0
                  else np.asarray(v, float) for v in self.w_box)
        if lo.shape != (kappa,) or hi.shape != (kappa,):
            raise DimensionMismatch(f"w_box has {lo.shape[0]} components, basis has {kappa}")
        return lo, hi


def abstract_motion(basis, w):
    w = np.asarray(w, float).ravel()
    if w.shape[0] != basis.kappa:
        raise DimensionMismatch(f"w needs length {basis.kappa}, got {w.shape[0]}")
    return basis.special + basis.K @ w


def select_virtual_inputs(basis, active_rows, policy, prev_Pdot=None, dt=1e-3, target=None):
    """QP over ``w`` subject to ``A (Kbar + K w) <= b`` and the box.

    Parameters
    ----------
    active_rows : (A, b)
        Linear inequality rows on ``P'``; usually the active inequality rows.
    prev_Pdot : ndarray, optional
        Reference for ``min_slew``; needed only by that objective.
    target : ndarray, optional
        Target ``w`` for the ``random`` objective (``fixed`` uses ``fixed_w``).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    A, b = active_rows
    N = basis.special.shape[0]
    A = np.asarray(A, float).reshape(-1, N)
    b = np.asarray(b, float).ravel()
    if A.shape[0] != b.shape[0]:
        raise DimensionMismatch("active rows and right-hand side differ in length")
    kappa = basis.kappa
    K, Kbar = basis.K, basis.special
    if kappa == 0:
        viol = float(np.max(A @ Kbar - b, initial=-np.inf))
        if viol > policy.qp_tolerance:
            raise NoFeasibleVirtualInput(f"no freedom left and an active row is violated by {viol:.3g}")
        return np.zeros(0)

    lo, hi = policy.bounds(kappa)
    C = np.vstack([A @ K, np.eye(kappa), -np.eye(kappa)])
    d = np.concatenate([b - A @ Kbar, hi, -lo])

    obj = policy.objective
    if obj == "min_slew":
        if prev_Pdot is None:
            raise ValueError("min_slew needs prev_Pdot")
        # argmin is unchanged by the 1/dt^2 factor, so it is dropped
        G = K.T @ K
        a = K.T @ (Kbar - np.asarray(prev_Pdot, float))
    else:
        G = np.eye(kappa)
        if obj == "zero":
            a = np.zeros(kappa)
        else:
            tgt = policy.fixed_w if obj == "fixed" else target
            if tgt is None:
                raise ValueError(f"{obj} objective needs a target w")
            tgt = np.asarray(tgt, float)
            if tgt.shape != (kappa,):
                raise DimensionMismatch(f"target w has length {tgt.shape[0]}, basis has {kappa}")
            a = -tgt
    scale = max(1.0, float(np.max(np.abs(np.diag(G)))))
    G = G / scale + REG * np.eye(kappa)
    a = a / scale
    w = solve_qp(G, a, C, d).x
    viol = float(np.max(C @ w - d))
    if viol > policy.qp_tolerance:
        raise NoFeasibleVirtualInput(f"QP solution violates the rows by {viol:.3g}")
    return w


def recover_controls(models, P, Pdot_target):
    """Least-squares controls ``u_i = (F_i'F_i)^-1 F_i' (P'_i - f0_i)`` per vehicle."""
    if isinstance(P, JointState):
        layout, x = P.layout, P.x
    else:
        layout = Layout(models)
        x = np.asarray(P, float)
    Pdot_target = np.asarray(Pdot_target, float)
    if Pdot_target.shape != (layout.N,) or x.shape != (layout.N,):
        raise DimensionMismatch(f"joint vectors need length {layout.N}")
    out = []
    for i, m in enumerate(layout.models):
        s = layout.slice(i)
        p = x[s]
        F = m.control_fields(p)
        FtF = F.T @ F
        lo, hi = _gram_extremes(FtF)
        if lo <= 1e-12 * max(1.0, hi):
            raise RankDeficientFields(f"vehicle {i} ({m.kind}) control fields lost column rank")
        out.append(np.linalg.solve(FtF, F.T @ (Pdot_target[s] - m.drift(p))))
    return out


def _gram_extremes(G):
    """Smallest and largest eigenvalue of a small symmetric Gram matrix."""
    l = G.shape[0]
    if l == 1:
        return G[0, 0], G[0, 0]
    if l == 2:
        m, d = 0.5 * (G[0, 0] + G[1, 1]), 0.5 * (G[0, 0] - G[1, 1])
        r = math.hypot(d, G[0, 1])
        return m - r, m + r
    ev = np.linalg.eigvalsh(G)
    return ev[0], ev[-1]


def realized_motion(models, P, controls):
    """``F0(P) + F(P) u`` for per-vehicle controls."""
    if isinstance(P, JointState):
        layout, x = P.layout, P.x
    else:
        layout = Layout(models)
        x = np.asarray(P, float)
    v = np.zeros(layout.N)
    for i, (m, u) in enumerate(zip(layout.models, controls)):
        s = layout.slice(i)
        v[s] = m.drift(x[s]) + m.control_fields(x[s]) @ np.asarray(u, float)
    return v


def filter_rows(ineq, eps, h, gamma=50.0):
    """Discrete-time inequality rows for one step of size ``h``.

    Active rows (``ineq['active']``) must not increase, and rows that sit
    past the middle of the activation band are pushed back at rate
    ``gamma``. Inactive rows get a one-step guard so they cannot jump over
    the band within a single step. Every returned bound is at most ``T`` on
    active rows, so the continuous tangency condition is always implied.
    """
    g, T, s = ineq["values"], ineq["rhs"], ineq["scales"]
    if g.size == 0:
        return ineq["omega"], T
    band = eps * np.maximum(1.0, np.abs(s))
    act = ineq["active"]
    b = np.where(act,
                 T - gamma * np.maximum(0.0, g + 0.5 * band),
                 T + (-0.5 * band - g) / h)
    return ineq["omega"], b
