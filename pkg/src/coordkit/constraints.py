"""Task-constraint families with value, gradient and time-partial evaluators.

Sign conventions: equality rows return a residual (0 when satisfied),
inequality rows return ``g`` with ``g <= 0`` when satisfied. ``time_partial``
returns the right-hand side ``T = -dg/dt`` so rows read ``Omega P' = T``
(equalities) or ``Omega P' <= T`` (active inequalities).

``velocity_track`` is a velocity-level equality: its rows constrain ``P'``
directly and its residual is ``Omega P' - T``, so evaluating it needs ``Pdot``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, DimensionMismatch, InvalidParameter, SchemaError
from .expr import TimeExpr
from .kinematics import JointState, Layout

EPS_ACT = 1e-6
MIN_SEPARATION = 1e-9

FAMILIES = {
    # family: (flavor, required params, optional params, edge arity)
    "distance_eq": ("equality", (), ("d", "delta"), 2),
    "distance_band": ("inequality", ("d_min", "d_max"), (), 2),
    "relative_pose": ("equality", ("delta_x", "delta_y"), ("delta_theta",), 2),
    "heading_eq": ("equality", ("delta",), (), 2),
    "visibility": ("inequality", ("alpha",), (), 2),
    "velocity_track": ("equality", (), ("v_r", "u_r"), 1),
}


def wrap_angle(a):
    """Map an angle difference into [-pi, pi]."""
    return math.remainder(a, 2.0 * math.pi)


@dataclass(frozen=True, eq=True)
class ConstraintSpec:
    """One task constraint on an edge ``(i, j)`` or a single vehicle ``(i,)``.

    Build with :func:`make_constraint`, which validates the family, edge and
    parameters and turns every parameter into a :class:`TimeExpr`.
    """

    id: str
    flavor: str
    family: str
    edge: tuple
    params: dict = field(default_factory=dict, hash=False)

    @property
    def row_count(self) -> int:
        f = self.family
        if f == "distance_band":
            return 2
        if f == "relative_pose":
            return 3 if "delta_theta" in self.params else 2
        if f == "velocity_track":
            return len(self.params)
        return 1

    @property
    def is_velocity_level(self) -> bool:
        return self.family == "velocity_track"

    @property
    def time_varying(self) -> bool:
        return any(not e.is_constant for e in self.params.values())

    def vehicles(self):
        return tuple(self.edge)

    def __hash__(self):
        return hash((self.id, self.family, self.edge))


def make_constraint(id, family, edge, params=None, flavor=None) -> ConstraintSpec:
    if family not in FAMILIES:
        raise SchemaError(f"unknown constraint family {family!r}", ("family",))
    fl, required, optional, arity = FAMILIES[family]
    if flavor is not None and flavor != fl:
        raise SchemaError(f"{family} is an {fl} family, not {flavor}", ("flavor",))
    edge = tuple(int(e) for e in (edge if np.ndim(edge) else (edge,)))
    if len(edge) != arity:
        raise SchemaError(f"{family} needs {arity} vehicle index(es), got {len(edge)}", ("edge",))
    if arity == 2 and edge[0] == edge[1]:
        raise SchemaError("edge must join two distinct vehicles", ("edge",))
    params = dict(params or {})
    unknown = set(params) - set(required) - set(optional)
    if unknown:
        raise SchemaError(f"unknown parameter(s) {sorted(unknown)} for {family}", ("params",))
    for name in required:
        if name not in params:
            raise SchemaError(f"{family} requires parameter {name!r}", ("params",))
    if family == "distance_eq" and len(params) != 1:
        raise SchemaError("distance_eq takes exactly one of 'd' or 'delta'", ("params",))
    if family == "velocity_track" and not params:
        raise SchemaError("velocity_track needs at least one of 'v_r', 'u_r'", ("params",))
    parsed = {k: TimeExpr.coerce(v) for k, v in params.items()}
    return ConstraintSpec(str(id), fl, family, edge, parsed)


# --------------------------------------------------------------------------
# core evaluator

def _heading_col(layout, i, family):
    m = layout.models[i]
    if m.heading is None:
        raise DimensionMismatch(f"{family} needs a heading but vehicle {i} is {m.kind}")
    return layout.column(i, m.heading)


def _check_edge(c, layout):
    for v in c.edge:
        if not 0 <= v < len(layout):
            raise DimensionMismatch(f"constraint {c.id!r} references vehicle {v}, fleet has {len(layout)}")


def evaluate(c: ConstraintSpec, layout: Layout, x, t, Pdot=None, jac=True):
    """Return ``(value, jacobian, rhs, scale)`` for all rows of ``c``.

    ``jacobian`` is ``None`` when ``jac`` is false. ``scale`` is the
    per-row magnitude used by the activity tolerance.
    """
    _check_edge(c, layout)
    N = layout.N
    p = c.params
    fam = c.family
    J = np.zeros((c.row_count, N)) if jac or fam == "velocity_track" else None

    if fam == "velocity_track":
        i = c.edge[0]
        m = layout.models[i]
        o = layout.offsets[i]
        rhs, r = [], 0
        if "v_r" in p:
            if m.heading is None:
                raise DimensionMismatch(f"velocity_track speed row needs a heading; vehicle {i} is {m.kind}")
            if m.kind == "constant_speed":
                raise DimensionMismatch("constant_speed vehicles have a fixed speed; use u_r only")
            th = x[o + m.heading]
            J[r, o] = math.cos(th)
            J[r, o + 1] = math.sin(th)
            rhs.append(p["v_r"](t))
            r += 1
        if "u_r" in p:
            if m.steer is None:
                raise DimensionMismatch(f"velocity_track turn row needs a steering coordinate; vehicle {i} is {m.kind}")
            J[r, o + m.steer] = 1.0
            rhs.append(p["u_r"](t))
        rhs = np.array(rhs)
        if Pdot is None:
            value = np.full(c.row_count, np.nan)
        else:
            value = J @ np.asarray(Pdot, float) - rhs
        return value, J, rhs, np.ones(c.row_count)

    i, j = c.edge
    oi, oj = layout.offsets[i], layout.offsets[j]
    dx = x[oi] - x[oj]
    dy = x[oi + 1] - x[oj + 1]

    if fam == "distance_eq":
        half = 0.5 * (dx * dx + dy * dy)
        if "d" in p:
            d = p["d"](t)
            value = np.array([half - 0.5 * d * d])
            rhs = np.array([d * p["d"].deriv(t)])
            scale = np.array([max(1.0, d * d)])
        else:
            value = np.array([half - p["delta"](t)])
            rhs = np.array([p["delta"].deriv(t)])
            scale = np.array([max(1.0, abs(p["delta"](t)))])
        if jac:
            J[0, oi], J[0, oi + 1] = dx, dy
            J[0, oj], J[0, oj + 1] = -dx, -dy
        return value, J, rhs, scale

    if fam == "distance_band":
        dmin, dmax = p["d_min"](t), p["d_max"](t)
        if not dmin < dmax:
            raise InvalidParameter(f"constraint {c.id!r}: d_min={dmin:.6g} >= d_max={dmax:.6g} at t={t:.6g}")
        half = 0.5 * (dx * dx + dy * dy)
        value = np.array([half - 0.5 * dmax * dmax, 0.5 * dmin * dmin - half])
        rhs = np.array([dmax * p["d_max"].deriv(t), -dmin * p["d_min"].deriv(t)])
        s = max(1.0, dmax * dmax)
        if jac:
            J[0, oi], J[0, oi + 1], J[0, oj], J[0, oj + 1] = dx, dy, -dx, -dy
            J[1, oi], J[1, oi + 1], J[1, oj], J[1, oj + 1] = -dx, -dy, dx, dy
        return value, J, rhs, np.array([s, s])

    if fam == "relative_pose":
        vals = [dx - p["delta_x"](t), dy - p["delta_y"](t)]
        rhs = [p["delta_x"].deriv(t), p["delta_y"].deriv(t)]
        if jac:
            J[0, oi], J[0, oj] = 1.0, -1.0
            J[1, oi + 1], J[1, oj + 1] = 1.0, -1.0
        if "delta_theta" in p:
            ci, cj = _heading_col(layout, i, fam), _heading_col(layout, j, fam)
            vals.append(wrap_angle(x[ci] - x[cj] - p["delta_theta"](t)))
            rhs.append(p["delta_theta"].deriv(t))
            if jac:
                J[2, ci], J[2, cj] = 1.0, -1.0
        return np.array(vals), J, np.array(rhs), np.ones(c.row_count)

    if fam == "heading_eq":
        ci, cj = _heading_col(layout, i, fam), _heading_col(layout, j, fam)
        value = np.array([wrap_angle(x[ci] - x[cj] - p["delta"](t))])
        if jac:
            J[0, ci], J[0, cj] = 1.0, -1.0
        return value, J, np.array([p["delta"].deriv(t)]), np.ones(1)

    if fam == "visibility":
        # vehicle j keeps vehicle i inside a cone of half-angle alpha
        alpha = p["alpha"](t)
        if not 0.0 < alpha < math.pi:
            raise InvalidParameter(f"constraint {c.id!r}: alpha={alpha:.6g} outside (0, pi) at t={t:.6g}")
        r = math.hypot(dx, dy)
        if r < MIN_SEPARATION:
            raise DegenerateGeometry(f"constraint {c.id!r}: vehicles {i} and {j} coincide")
        cj = _heading_col(layout, j, fam)
        th = x[cj]
        bx, by = math.cos(th), math.sin(th)
        value = np.array([math.cos(alpha) - (dx * bx + dy * by) / r])
        rhs = np.array([math.sin(alpha) * p["alpha"].deriv(t)])
        if jac:
            ac = -dx * by + dy * bx  # <a, c_j> with c_j = (-sin, cos)
            k = ac / r ** 3
            gx, gy = -dy * k, dx * k
            J[0, oi], J[0, oi + 1] = gx, gy
            J[0, oj], J[0, oj + 1] = -gx, -gy
            J[0, cj] = -ac / r
        return value, J, rhs, np.ones(1)

    raise SchemaError(f"unknown constraint family {fam!r}")


def _layout_x(P, layout=None):
    if isinstance(P, JointState):
        return P.layout, P.x
    if layout is None:
        raise DimensionMismatch("a JointState (or an explicit layout) is required")
    return layout, np.asarray(P, float)


def eval_constraint(c, P, t, Pdot=None):
    layout, x = _layout_x(P)
    return evaluate(c, layout, x, t, Pdot=Pdot, jac=False)[0]


def constraint_jacobian(c, P, t):
    layout, x = _layout_x(P)
    return evaluate(c, layout, x, t)[1]


def time_partial(c, P, t):
    layout, x = _layout_x(P)
    return evaluate(c, layout, x, t, jac=False)[2]


def row_scales(c, P, t):
    layout, x = _layout_x(P)
    return evaluate(c, layout, x, t, jac=False)[3]


# --------------------------------------------------------------------------
# active set

class ActiveSet:
    """Inequality rows at (or within tolerance of) their boundary."""

    def __init__(self, entries=()):
        self.entries = tuple(entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, item):
        return tuple(item) in self.entries

    def __eq__(self, other):
        return isinstance(other, ActiveSet) and self.entries == other.entries

    def __repr__(self):
        return f"ActiveSet({list(self.entries)!r})"


def active_mask(values, scales, eps):
    return values >= -eps * np.maximum(1.0, np.abs(scales))


def active_set(cs, P, t, eps_act=EPS_ACT) -> ActiveSet:
    if not eps_act > 0:
        raise ValueError("eps_act must be positive")
    layout, x = _layout_x(P)
    entries = []
    for c in cs:
        if c.flavor != "inequality":
            continue
        g, _, _, s = evaluate(c, layout, x, t, jac=False)
        for r in np.flatnonzero(active_mask(g, s, eps_act)):
            entries.append((c.id, int(r)))
    return ActiveSet(entries)


# --------------------------------------------------------------------------
# gradient verification

def _rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if np.size(a) else 0.0


def finite_diff_check(c, P, t, h=1e-6) -> float:
    """Max relative error of the analytic Jacobian and time partial.

    Errors are measured as ``|analytic - numeric| / max(1, |numeric|)``.
    For velocity-level rows the derivative is taken with respect to ``P'``
    and the right-hand side is checked against the residual at ``P' = 0``.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-8, 1e-4]")
    layout, x = _layout_x(P)
    N = layout.N
    if c.is_velocity_level:
        _, J, rhs, _ = evaluate(c, layout, x, t, Pdot=np.zeros(N))
        base = np.ones(N)
        num = np.empty_like(J)
        for k in range(N):
            e = np.zeros(N)
            e[k] = h
            num[:, k] = (evaluate(c, layout, x, t, Pdot=base + e, jac=False)[0]
                         - evaluate(c, layout, x, t, Pdot=base - e, jac=False)[0]) / (2 * h)
        r0 = -evaluate(c, layout, x, t, Pdot=np.zeros(N), jac=False)[0]
        return max(_rel(J, num), _rel(rhs, r0))

    g0, J, rhs, _ = evaluate(c, layout, x, t)
    num = np.empty_like(J)
    for k in range(N):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        gp = evaluate(c, layout, xp, t, jac=False)[0]
        gm = evaluate(c, layout, xm, t, jac=False)[0]
        num[:, k] = (gp - gm) / (2 * h)
    if t - h >= 0:
        gt = (evaluate(c, layout, x, t + h, jac=False)[0]
              - evaluate(c, layout, x, t - h, jac=False)[0]) / (2 * h)
    else:
        # second-order one-sided difference near t = 0
        gt = (-3.0 * g0 + 4.0 * evaluate(c, layout, x, t + h, jac=False)[0]
              - evaluate(c, layout, x, t + 2 * h, jac=False)[0]) / (2 * h)
    return max(_rel(J, num), _rel(rhs, -gt))
