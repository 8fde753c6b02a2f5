"""Closed-loop simulation: assemble, solve, filter, recover, integrate, project.

Each step picks ``w`` once at the step's start state and holds it over a
classical RK4 step. Inside the step the held null-space velocity is projected
onto the null space at every stage state, so the equality rows stay exact at
each stage while the motion varies smoothly. After the step, state-level
equalities are pulled back onto their manifold by Gauss-Newton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import active_mask, evaluate
from .errors import (
    CoordkitError,
    InitialStateInfeasible,
    ProjectionDiverged,
)
from .feasibility import affine_projection, assemble, numerical_rank, solve_basis
from .kinematics import JointState, Layout, stack_fields
from .leader_follower import cascade_solve, topological_order
from .motion_gen import (
    VirtualInputPolicy,
    filter_rows,
    realized_motion,
    recover_controls,
    select_virtual_inputs,
)
from .temporal import EPS_CONE, rank_deficient_active_set

INEQ_TOL = 1e-3
EQ_TOL = 1e-6


@dataclass(frozen=True)
class SimConfig:
    h: float = 1e-3
    T: float = 10.0
    eps_act: float = 1e-3
    projection_enabled: bool = True
    projection_tol: float = 1e-10
    projection_max_iters: int = 10
    policy: VirtualInputPolicy = field(default_factory=VirtualInputPolicy)
    mode: str = "centralized"
    gamma: float = 50.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.T >= self.h:
            raise ValueError("T must be at least h")
        if not self.projection_tol > 0:
            raise ValueError("projection_tol must be positive")
        if self.mode not in ("centralized", "leader_follower"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def n_steps(self):
        return int(math.floor(self.T / self.h + 1e-9))


class Pipeline:
    """Everything a step needs: fleet layout, constraints, tree and policy."""

    def __init__(self, models, constraints, policy=None, mode="centralized", tree=None):
        self.layout = Layout(models)
        self.models = self.layout.models
        self.constraints = list(constraints)
        self.equality = [c for c in self.constraints if c.flavor == "equality"]
        self.state_equality = [c for c in self.equality if not c.is_velocity_level]
        self.inequality = [c for c in self.constraints if c.flavor == "inequality"]
        self.policy = policy or VirtualInputPolicy()
        self.mode = mode
        self.tree = tree
        self.order = None
        if mode == "leader_follower":
            if tree is None:
                raise ValueError("leader_follower mode needs a CoordinationTree")
            self.order = topological_order(tree)
        self.row_labels = [(c.id, r, c.flavor) for c in self.constraints for r in range(c.row_count)]
        self.ineq_labels = [(c.id, r) for c in self.inequality for r in range(c.row_count)]


@dataclass
class Record:
    t: float
    P: np.ndarray
    u: list
    w: np.ndarray
    values: np.ndarray
    active: np.ndarray
    cone: bool
    rank: int
    kappa: int


@dataclass
class TrajectoryLog:
    layout: Layout
    row_labels: list
    ineq_labels: list
    samples: list = field(default_factory=list)
    error: str = None
    error_t: float = None

    def __len__(self):
        return len(self.samples)

    @property
    def times(self):
        return np.array([s.t for s in self.samples])

    @property
    def states(self):
        return np.array([s.P for s in self.samples])

    @property
    def values(self):
        return np.array([s.values for s in self.samples]).reshape(len(self.samples), len(self.row_labels))

    def column(self, cid, row=0):
        k = [(a, b) for a, b, _ in self.row_labels].index((cid, row))
        return self.values[:, k]


# --------------------------------------------------------------------------
# motion at one state

class _Motion:
    __slots__ = ("Pdot", "w", "hold", "rank", "kappa", "ineq")


def _solve_motion(pipe, cfg, x, t, prev_Pdot=None, target=None, hold=None):
    """Joint velocity at ``(x, t)``; selects ``w`` unless ``hold`` is given."""
    P = JointState(pipe.layout, x)
    out = _Motion()
    eps = cfg.eps_act
    if pipe.mode == "leader_follower":
        res = cascade_solve(pipe.tree, cfg.policy, P, t, cfg.policy, prev_Pdot, cfg.h, eps,
                            row_filter=lambda rows: filter_rows(rows, eps, cfg.h, cfg.gamma),
                            targets=target, hold=hold, order=pipe.order)
        out.Pdot = res.Pdot
        if hold is not None:
            return out
        out.w = np.concatenate([res.w[j] for j in pipe.order]) if res.w else np.zeros(0)
        out.hold = res.held
        out.rank = sum(b.rank for b in res.bases.values())
        out.kappa = sum(b.kappa for b in res.bases.values())
        out.ineq = None
        return out
    if hold is not None:
        # inside an integration step: keep the held direction, re-solve the rows
        stack = assemble(pipe.models, pipe.equality, [], P, t, eps)
        out.Pdot = affine_projection(stack.omega, stack.rhs, hold)
        return out
    stack = assemble(pipe.models, pipe.equality, pipe.inequality, P, t, eps)
    basis = solve_basis(stack)
    out.rank, out.kappa = basis.rank, basis.kappa
    A, b = filter_rows(stack.ineq, eps, cfg.h, cfg.gamma)
    out.w = select_virtual_inputs(basis, (A, b), cfg.policy, prev_Pdot, cfg.h, target)
    out.hold = basis.K @ out.w
    out.ineq = stack.ineq
    out.Pdot = basis.special + out.hold
    return out


def _make_record(pipe, cfg, x, t, motion):
    P = JointState(pipe.layout, x)
    u = recover_controls(pipe.models, P, motion.Pdot)
    v = realized_motion(pipe.models, P, u)
    # one pass over the constraints: row values plus the inequality rows
    vals, Ws, Ts, gs, ss = [], [], [], [], []
    for c in pipe.constraints:
        ineq_row = c.flavor == "inequality"
        g, J, T, s = evaluate(c, pipe.layout, x, t, Pdot=v, jac=ineq_row)
        vals.append(g)
        if ineq_row:
            Ws.append(J)
            Ts.append(T)
            gs.append(g)
            ss.append(s)
    values = np.concatenate(vals) if vals else np.zeros(0)
    if Ws:
        g, s = np.concatenate(gs), np.concatenate(ss)
        active = active_mask(g, s, cfg.eps_act)
        cone = not np.any(np.vstack(Ws)[active] @ v - np.concatenate(Ts)[active] > EPS_CONE)
    else:
        active, cone = np.zeros(0, bool), True
    return Record(t, x.copy(), u, np.asarray(motion.w, float), values,
                  active, cone, motion.rank, motion.kappa)


# --------------------------------------------------------------------------
# projection

def project_equalities(P, equality_cs, t, cfg, layout=None, return_iters=False):
    """Gauss-Newton pull-back onto ``Phi(P, t) = 0`` for state-level equalities.

    ``P`` is a JointState or a flat vector (then ``layout`` is required).
    With ``return_iters`` the number of Gauss-Newton updates is returned too.
    """
    out, it = _project(P, equality_cs, t, cfg, layout)
    return (out, it) if return_iters else out


def _project(P, equality_cs, t, cfg, layout=None):
    if isinstance(P, JointState):
        layout, x = P.layout, P.x.copy()
    else:
        x = np.array(P, float)
    cs = [c for c in equality_cs if c.flavor == "equality" and not c.is_velocity_level]
    if not cs:
        return (JointState(layout, x) if isinstance(P, JointState) else x), 0
    for it in range(cfg.projection_max_iters + 1):
        parts = [evaluate(c, layout, x, t) for c in cs]
        phi = np.concatenate([p[0] for p in parts])
        if np.max(np.abs(phi)) <= cfg.projection_tol:
            return (JointState(layout, x) if isinstance(P, JointState) else x), it
        if it == cfg.projection_max_iters:
            break
        J = np.vstack([p[1] for p in parts])
        if numerical_rank(J, 1e-10) < J.shape[0]:
            raise ProjectionDiverged("equality Jacobian lost row rank during projection")
        x = x - J.T @ np.linalg.solve(J @ J.T, phi)
        if not np.all(np.isfinite(x)):
            raise ProjectionDiverged("projection produced non-finite states")
    raise ProjectionDiverged(f"equality residual {np.max(np.abs(phi)):.3g} after {cfg.projection_max_iters} iterations")


# --------------------------------------------------------------------------
# integration

def _rk4(pipe, cfg, x, t, k1, hold):
    h = cfg.h

    def f(xs, ts):
        return _solve_motion(pipe, cfg, xs, ts, hold=hold).Pdot

    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Targets:
    """Seeded random targets for the ``random`` objective, redrawn every ``hold`` seconds."""

    def __init__(self, policy):
        self.policy = policy
        self.rng = np.random.default_rng(policy.seed)
        self.next_t = -np.inf
        self.value = None

    def get(self, t, kappa):
        if self.policy.objective != "random":
            return None
        if t >= self.next_t - 1e-12 or self.value is None or self.value.shape != (kappa,):
            lo, hi = self.policy.bounds(kappa)
            self.value = self.rng.uniform(lo, hi)
            self.next_t = t + self.policy.random_hold
        return self.value


def _kappa_hint(pipe, cfg, x, t):
    if pipe.mode == "leader_follower":
        return None
    stack = assemble(pipe.models, pipe.equality, [], JointState(pipe.layout, x), t, cfg.eps_act)
    return stack.N - numerical_rank(stack.omega)


def step(P, t, pipeline, cfg, prev_Pdot=None, target=None):
    """One RK4 step with ``w`` held; returns ``(P_next, record, Pdot)``.

    The record describes the start state (time ``t``), including the
    controls applied over the step. ``Pdot`` is the start-state velocity,
    the slew reference for the next step.
    """
    x = P.x if isinstance(P, JointState) else np.asarray(P, float)
    try:
        if prev_Pdot is None:
            prev_Pdot = stack_fields(pipeline.models, JointState(pipeline.layout, x))[0]
        m = _solve_motion(pipeline, cfg, x, t, prev_Pdot, target)
        rec = _make_record(pipeline, cfg, x, t, m)
        xn = _rk4(pipeline, cfg, x, t, m.Pdot, m.hold)
        if cfg.projection_enabled:
            xn = project_equalities(xn, pipeline.state_equality, t + cfg.h, cfg, pipeline.layout)
        for i, model in enumerate(pipeline.models):
            model.check_admissible(xn[pipeline.layout.slice(i)])
    except CoordkitError as exc:
        raise exc.annotate(t)
    return (JointState(pipeline.layout, xn) if isinstance(P, JointState) else xn), rec, m.Pdot


def check_initial_state(pipe, x, cfg, t=0.0):
    """Strict inequality satisfaction and equality feasibility after one projection."""
    x = np.asarray(x, float)
    if x.shape != (pipe.layout.N,):
        raise InitialStateInfeasible(f"initial state has length {x.shape[0]}, fleet needs {pipe.layout.N}")
    for i, model in enumerate(pipe.models):
        try:
            model.check_admissible(x[pipe.layout.slice(i)])
        except CoordkitError as exc:
            raise InitialStateInfeasible(f"vehicle {i}: {exc}") from exc
    for c in pipe.inequality:
        g = evaluate(c, pipe.layout, x, t, jac=False)[0]
        if np.any(g >= 0):
            r = int(np.argmax(g))
            raise InitialStateInfeasible(f"inequality {c.id!r} row {r} not strictly satisfied (g={g[r]:.6g})")
    if pipe.state_equality:
        one = replace(cfg, projection_max_iters=1)
        try:
            x = project_equalities(x, pipe.state_equality, t, one, pipe.layout)
        except ProjectionDiverged:
            phi = np.concatenate([evaluate(c, pipe.layout, x, t, jac=False)[0] for c in pipe.state_equality])
            raise InitialStateInfeasible(
                f"equality residual {np.max(np.abs(phi)):.3g} exceeds projection_tol after one projection")
    return x


def run(scenario_or_pipeline, cfg=None, x0=None):
    """Simulate over ``[0, T]`` and return the :class:`TrajectoryLog`.

    Accepts a scenario (anything with ``pipeline()``, ``initial_state`` and
    ``sim_config()``) or a :class:`Pipeline` with an explicit ``x0``. On a
    step error the exception carries ``log`` (the partial log) and ``t``.
    """
    if isinstance(scenario_or_pipeline, Pipeline):
        pipe = scenario_or_pipeline
        if cfg is None:
            cfg = SimConfig()
    else:
        sc = scenario_or_pipeline
        pipe = sc.pipeline()
        cfg = cfg or sc.sim_config()
        x0 = sc.initial_state if x0 is None else x0
    log = TrajectoryLog(pipe.layout, pipe.row_labels, pipe.ineq_labels)
    x = check_initial_state(pipe, x0, cfg)
    targets = _Targets(cfg.policy)
    kappa = _kappa_hint(pipe, cfg, x, 0.0) if cfg.policy.objective == "random" else None
    prev = None
    n = cfg.n_steps
    tgt_lf = {}
    for k in range(n + 1):
        t = k * cfg.h
        try:
            target = None
            if cfg.policy.objective == "random":
                if pipe.mode == "leader_follower":
                    target = _lf_targets(pipe, cfg, x, t, targets, tgt_lf)
                else:
                    if log.samples:
                        kappa = log.samples[-1].kappa
                    target = targets.get(t, kappa)
            if k == n:
                if prev is None:
                    prev = stack_fields(pipe.models, JointState(pipe.layout, x))[0]
                try:
                    m = _solve_motion(pipe, cfg, x, t, prev, target)
                    log.samples.append(_make_record(pipe, cfg, x, t, m))
                except CoordkitError as exc:
                    raise exc.annotate(t)
                break
            x, rec, prev = step(x, t, pipe, cfg, prev, target)
            log.samples.append(rec)
        except CoordkitError as exc:
            log.error, log.error_t = str(exc), t
            exc.log = log
            raise
    return log


def _lf_targets(pipe, cfg, x, t, targets, cache):
    """Per-vehicle random targets in leader-follower mode (local kappas)."""
    res = cascade_solve(pipe.tree, replace(cfg.policy, objective="zero"), JointState(pipe.layout, x), t,
                        replace(cfg.policy, objective="zero"), None, cfg.h, cfg.eps_act,
                        row_filter=lambda rows: filter_rows(rows, cfg.eps_act, cfg.h, cfg.gamma),
                        order=pipe.order)
    kap = {j: b.kappa for j, b in res.bases.items()}
    total = sum(kap.values())
    flat = targets.get(t, total)
    out, o = {}, 0
    for j in pipe.order:
        out[j] = flat[o:o + kap[j]]
        o += kap[j]
    return out


# --------------------------------------------------------------------------
# monitor

@dataclass
class RowReport:
    id: str
    row: int
    flavor: str
    max: float
    argmax_t: float
    violations: int


@dataclass
class ViolationReport:
    rows: list = field(default_factory=list)
    cone_failures: int = 0
    rank_deficient: int = 0  # samples whose active gradients are dependent (flagged only)
    samples: int = 0
    ineq_tol: float = INEQ_TOL
    eq_tol: float = EQ_TOL

    @property
    def total_violations(self):
        return sum(r.violations for r in self.rows) + self.cone_failures

    def row(self, cid, r=0):
        for rr in self.rows:
            if rr.id == cid and rr.row == r:
                return rr
        raise KeyError((cid, r))


def monitor(log, constraints, ineq_tol=INEQ_TOL, eq_tol=EQ_TOL, eps_act=None):
    """Recompute every constraint row from the logged states and controls.

    Inequality rows report their max ``g``; equality rows their max
    ``|residual|`` (velocity rows use ``P' = f0 + F u``). A sample fails the
    cone test when some active row has ``grad g . P' - T > 1e-8``. Samples
    whose active gradients are linearly dependent are counted in
    ``rank_deficient``, where the cone test is not conclusive.
    """
    if eps_act is None:
        eps_act = 1e-3
    rep = ViolationReport(ineq_tol=ineq_tol, eq_tol=eq_tol)
    if not len(log.samples):
        return rep
    layout = log.layout
    vals, cone_fail, deficient = [], 0, 0
    for s in log.samples:
        v = realized_motion(layout.models, JointState(layout, s.P), s.u)
        row, bad, grads = [], False, []
        for c in constraints:
            ineq = c.flavor == "inequality"
            g, J, T, sc = evaluate(c, layout, s.P, s.t, Pdot=v, jac=ineq)
            row.append(g)
            if ineq:
                a = active_mask(g, sc, eps_act)
                if np.any(a):
                    grads.extend(J[a])
                    bad = bad or bool(np.any(J[a] @ v - T[a] > EPS_CONE))
        vals.append(np.concatenate(row) if row else np.zeros(0))
        cone_fail += bad
        deficient += rank_deficient_active_set(grads)
    V = np.array(vals)
    ts = np.array([s.t for s in log.samples])
    k = 0
    for c in constraints:
        for r in range(c.row_count):
            col = V[:, k] if c.flavor == "inequality" else np.abs(V[:, k])
            j = int(np.argmax(col))
            tol = ineq_tol if c.flavor == "inequality" else eq_tol
            rep.rows.append(RowReport(c.id, r, c.flavor, float(col[j]), float(ts[j]), int(np.sum(col > tol))))
            k += 1
    rep.cone_failures = int(cone_fail)
    rep.rank_deficient = int(deficient)
    rep.samples = len(log.samples)
    return rep
