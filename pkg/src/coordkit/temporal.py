"""Runtime viability predicates for time-varying inequality sets.

For ``g(P, t) <= 0`` the temporal contingent cone at a boundary point is
``{v : grad_x g . v + grad_t g <= 0}`` over the active rows; away from the
boundary it is the whole space. These checks are diagnostic: enforcement
happens in the virtual-input QP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import EPS_ACT, active_mask, evaluate
from .kinematics import JointState, Layout
from .motion_gen import realized_motion

EPS_CONE = 1e-8


@dataclass
class ConeQuery:
    """Velocity ``v`` and the active rows as ``(gradient, grad_t g)`` pairs."""

    v: np.ndarray
    active_rows: list = field(default_factory=list)

    def __post_init__(self):
        self.v = np.asarray(self.v, float)
        for grad, _ in self.active_rows:
            if np.shape(grad) != self.v.shape:
                raise ValueError("gradient rows must have the same length as v")


def cone_margins(q: ConeQuery):
    return np.array([float(np.dot(grad, q.v)) + float(gt) for grad, gt in q.active_rows])


def temporal_cone_membership(q: ConeQuery, eps=EPS_CONE) -> bool:
    return all(float(np.dot(grad, q.v)) + float(gt) <= eps for grad, gt in q.active_rows)


def set_invariance_condition(rows, v, eps=EPS_CONE) -> bool:
    """Time-invariant condition: ``<grad g, v> <= 0`` on every active row."""
    return all(float(np.dot(grad, v)) <= eps for grad in rows)


def active_rows(models, P, constraints, t, eps_act=EPS_ACT):
    """Gradients, time partials (grad_t g = -T) and labels of active inequality rows."""
    if isinstance(P, JointState):
        layout, x = P.layout, P.x
    else:
        layout = Layout(models)
        x = np.asarray(P, float)
    grads, gts, labels = [], [], []
    for c in constraints:
        if c.flavor != "inequality":
            continue
        g, J, T, s = evaluate(c, layout, x, t)
        for r in np.flatnonzero(active_mask(g, s, eps_act)):
            grads.append(J[r])
            gts.append(-T[r])
            labels.append((c.id, int(r)))
    return grads, gts, labels


def controlled_invariance_residuals(models, P, u, constraints, t, eps_act=EPS_ACT):
    """``grad_P g . (f0 + F u) + grad_t g`` for each active inequality row."""
    v = realized_motion(models, P, u)
    grads, gts, _ = active_rows(models, P, constraints, t, eps_act)
    return np.array([float(gr @ v) + gt for gr, gt in zip(grads, gts)])


def rank_deficient_active_set(grads, tol=1e-9) -> bool:
    """True when the active gradients are linearly dependent (flagged, not resolved)."""
    if len(grads) < 2:
        return len(grads) == 1 and not np.any(grads[0])
    G = np.vstack(grads)
    s = np.linalg.svd(G, compute_uv=False)
    return bool(len(s) < G.shape[0] or s[-1] <= tol * max(1.0, s[0]))
