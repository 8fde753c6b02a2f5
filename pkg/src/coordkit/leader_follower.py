"""Sequential leader-follower solving over a directed coordination tree.

Each follower enforces only the constraints on its in-edge. Given the
leader's velocity ``p'_i`` the follower's rows become

    Omega_Kj p'_j = T_Kj
    dPhi/dp_j p'_j = T_E - dPhi/dp_i p'_i
    dI/dp_j  p'_j <= T_I - dI/dp_i p'_i

(the time partial is kept on the inequality line as well), so every follower
solves a small system over its own state only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .constraints import EPS_ACT, active_mask, evaluate
from .errors import InfeasibleFollower, InfeasibleSystem, NotATree
from .feasibility import RANK_TOL, ConstraintStack, affine_projection, check_feasibility, solve_basis
from .kinematics import JointState, Layout
from .motion_gen import select_virtual_inputs


@dataclass
class CoordinationTree:
    """Directed tree of leader -> follower edges.

    ``constraints`` maps a vehicle index to the constraints it enforces:
    for a follower, those on its in-edge (and any single-vehicle rows on it);
    for the root, its reference rows (typically ``velocity_track``).
    """

    n: int
    edges: list
    root: int = 0
    constraints: dict = field(default_factory=dict)

    def parent(self, j):
        for i, k in self.edges:
            if k == j:
                return i
        return None

    def children(self, i):
        return sorted(k for p, k in self.edges if p == i)


def topological_order(tree: CoordinationTree):
    """Root first, then breadth-first with siblings in ascending index."""
    n = tree.n
    if not 0 <= tree.root < n:
        raise NotATree(f"root {tree.root} outside 0..{n - 1}")
    indeg = [0] * n
    for i, j in tree.edges:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise NotATree(f"invalid edge ({i}, {j})")
        indeg[j] += 1
    if indeg[tree.root]:
        raise NotATree("the root has a leader")
    multi = [j for j in range(n) if indeg[j] > 1]
    if multi:
        raise NotATree(f"vehicle(s) {multi} have more than one leader")
    order, seen = [], {tree.root}
    queue = deque([tree.root])
    while queue:
        i = queue.popleft()
        order.append(i)
        for k in tree.children(i):
            if k in seen:
                raise NotATree("cycle in the coordination graph")
            seen.add(k)
            queue.append(k)
    if len(order) != n:
        missing = sorted(set(range(n)) - seen)
        raise NotATree(f"vehicle(s) {missing} not reachable from the root")
    return order


@lru_cache(maxsize=256)
def _layout(models):
    return Layout(models)


@lru_cache(maxsize=1024)
def _reindexed(c, edge):
    return replace(c, edge=edge)


def _local(constraints, remap, follower):
    """Re-index constraints onto the local layout given by ``remap``."""
    out = []
    for c in constraints:
        try:
            edge = tuple(remap[v] for v in c.edge)
        except KeyError as exc:
            raise InfeasibleFollower(f"constraint {c.id!r} reaches outside the edge of vehicle {follower}",
                                     follower) from exc
        out.append((c, _reindexed(c, edge)))
    return out


def follower_system(model_j, p_j, leader_pdot_i, p_i, edge_constraints, t, eps_act=EPS_ACT,
                    *, model_i=None, leader_index=None, follower_index=1, inequalities=True,
                    raw=False):
    """Follower-local :class:`ConstraintStack` (leader velocity moved to the right).

    With ``raw`` only the equality rows ``(omega, rhs)`` are returned.
    """
    p_j = np.asarray(p_j, float)
    if model_i is None:
        layout = _layout((model_j,))
        x = p_j
        remap = {follower_index: 0}
        pd_i = np.zeros(0)
    else:
        layout = _layout((model_i, model_j))
        x = np.concatenate([np.asarray(p_i, float), p_j])
        remap = {leader_index: 0, follower_index: 1}
        pd_i = np.asarray(leader_pdot_i, float)
    local = _local(edge_constraints, remap, follower_index)
    return _system(model_j, p_j, pd_i, x, layout, local, t, eps_act, follower_index, inequalities, raw)


def _system(model_j, p_j, pd_i, x, layout, local, t, eps_act, follower_index, inequalities, raw):
    lo = layout.N - model_j.n
    W = model_j.codistribution(p_j)
    Ws, Ts = [W], [model_j.drift_image(p_j)]
    iW, iT, ig, iS, ilab = [], [], [], [], []
    for c, cl in local:
        if c.flavor != "equality" and not inequalities:
            continue
        g, J, T, s = evaluate(cl, layout, x, t)
        rhs = T - J[:, :lo] @ pd_i if lo else T
        if c.flavor == "equality":
            Ws.append(J[:, lo:])
            Ts.append(rhs)
        else:
            iW.append(J[:, lo:])
            iT.append(rhs)
            ig.append(g)
            iS.append(s)
            ilab += [(c.id, r) for r in range(c.row_count)]
    if raw:
        return np.vstack(Ws), np.concatenate(Ts)
    labels = [("kinematic", f"vehicle{follower_index}", r) for r in range(W.shape[0])]
    for c, _ in local:
        if c.flavor == "equality":
            labels += [("equality", c.id, r) for r in range(c.row_count)]
    nj = model_j.n
    if iW:
        g, s = np.concatenate(ig), np.concatenate(iS)
        rows = {"omega": np.vstack(iW), "rhs": np.concatenate(iT), "values": g, "scales": s,
                "labels": ilab, "active": active_mask(g, s, eps_act)}
    else:
        rows = {"omega": np.zeros((0, nj)), "rhs": np.zeros(0), "values": np.zeros(0),
                "scales": np.zeros(0), "labels": [], "active": np.zeros(0, bool)}
    return ConstraintStack(_layout((model_j,)), np.vstack(Ws), np.concatenate(Ts), labels, rows)


def follower_feasibility(model_j, p_j, leader_pdot_i, p_i, edge_constraints, t, eps_act=EPS_ACT,
                         *, model_i=None, leader_index=None, follower_index=1, tol=RANK_TOL,
                         rank_test=True):
    """Motion basis of a follower given its leader's state and velocity.

    Parameters
    ----------
    model_j, p_j : follower model and state.
    leader_pdot_i, p_i : leader velocity and state (ignored for the root,
        which passes ``model_i=None``).
    edge_constraints : constraints referencing ``leader_index`` and/or
        ``follower_index`` by their global vehicle indices.

    Returns
    -------
    MotionBasis over the follower's own ``n_j`` coordinates; its ``rows``
    attribute carries every inequality row (matrix, right-hand side, values,
    scales, labels, active mask) with the leader term moved to the right.
    With ``rank_test`` false only the least-squares residual decides
    consistency, which saves two SVDs per call inside the simulator.
    """
    stack = follower_system(model_j, p_j, leader_pdot_i, p_i, edge_constraints, t, eps_act,
                            model_i=model_i, leader_index=leader_index, follower_index=follower_index)
    return _follower_basis(stack, follower_index, tol, rank_test)


def _follower_basis(stack, j, tol=RANK_TOL, rank_test=True):
    feas = check_feasibility(stack, tol) if rank_test else True
    if not feas:
        raise InfeasibleFollower(
            f"vehicle {j}: rank(Omega)={feas.rank} < rank([Omega|T])={feas.rank_augmented}", j)
    try:
        basis = solve_basis(stack, tol)
    except InfeasibleSystem as exc:
        raise InfeasibleFollower(f"vehicle {j}: {exc}", j) from exc
    basis.rows = stack.ineq
    basis.stack = stack
    return basis


@dataclass
class CascadeResult:
    Pdot: np.ndarray
    w: dict
    bases: dict
    held: dict


def _plan(tree, layout, order):
    """Per-vehicle local layouts and re-indexed constraints, cached on the tree."""
    cache = tree.__dict__.setdefault("_plans", {})
    # keyed on identities; the entry holds the keyed objects so no id is reused while cached
    cons = tuple(tuple(tree.constraints.get(j, ())) for j in order)
    key = (id(layout), order, tuple(map(tuple, tree.edges)), tuple(tuple(map(id, c)) for c in cons))
    if key not in cache:
        plan = []
        for j in order:
            i = tree.parent(j)
            cj = tree.constraints.get(j, [])
            if i is None:
                loc, remap, si = _layout((layout.models[j],)), {j: 0}, None
            else:
                loc, remap, si = _layout((layout.models[i], layout.models[j])), {i: 0, j: 1}, layout.slice(i)
            plan.append((j, layout.slice(j), si, layout.models[j], loc, _local(cj, remap, j)))
        cache[key] = (layout, cons, plan)
    return cache[key][2]


def cascade_solve(tree, leader_policy, P, t, policies, prev_Pdot=None, dt=1e-3, eps_act=EPS_ACT,
                  row_filter=None, targets=None, hold=None, order=None):
    """Per-vehicle motions in topological order.

    ``row_filter(rows) -> (A, b)`` turns a vehicle's inequality rows into QP
    rows (default: active rows only). When ``hold`` maps a vehicle to a
    velocity in its null space, the QP is skipped and the held velocity is
    projected onto the current null space instead (used inside one
    integration step); the result then carries only ``Pdot``.
    """
    layout = P.layout
    x = P.x
    order = order or topological_order(tree)
    Pdot = np.zeros(layout.N)
    ws, bases, held = {}, {}, {}
    plan = _plan(tree, layout, tuple(order))
    if hold is not None:
        # inside an integration step: keep the held directions, re-solve the rows
        for j, sj, si, model_j, loc_layout, local in plan:
            if j not in hold:
                break
            pj = x[sj]
            if si is None:
                xl, pd_i = pj, None
            else:
                xl, pd_i = np.concatenate([x[si], pj]), Pdot[si]
            A, b = _system(model_j, pj, pd_i, xl, loc_layout, local, t, eps_act, j, False, True)
            Pdot[sj] = affine_projection(A, b, hold[j])
        else:
            return CascadeResult(Pdot, ws, bases, held)
    for j, sj, si, model_j, loc_layout, local in plan:
        pj = x[sj]
        if si is None:
            xl, pd_i = pj, np.zeros(0)
        else:
            xl, pd_i = np.concatenate([x[si], pj]), Pdot[si]
        stack = _system(model_j, pj, pd_i, xl, loc_layout, local, t, eps_act, j, True, False)
        basis = _follower_basis(stack, j, rank_test=False)
        policy = leader_policy if si is None else (policies.get(j) if isinstance(policies, dict) else policies)
        rows = basis.rows
        A, b = row_filter(rows) if row_filter else (rows["omega"][rows["active"]], rows["rhs"][rows["active"]])
        prev = None if prev_Pdot is None else np.asarray(prev_Pdot, float)[sj]
        tgt = None if targets is None else targets.get(j)
        w = select_virtual_inputs(basis, (A, b), policy, prev, dt, tgt)
        v = basis.K @ w
        Pdot[sj] = basis.special + v
        ws[j], bases[j], held[j] = w, basis, v
    return CascadeResult(Pdot, ws, bases, held)


def cascade_motion(tree, leader_policy, P, t, policies, prev_Pdot=None, dt=1e-3, eps_act=EPS_ACT):
    """Joint velocity assembled leader-first; see :func:`cascade_solve`."""
    if not isinstance(P, JointState):
        raise TypeError("cascade_motion needs a JointState")
    return cascade_solve(tree, leader_policy, P, t, policies, prev_Pdot, dt, eps_act).Pdot
