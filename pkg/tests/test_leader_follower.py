import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import coordkit.leader_follower as lf
from coordkit.constraints import active_mask, make_constraint
from coordkit.errors import InfeasibleFollower, NotATree
from coordkit.feasibility import assemble
from coordkit.kinematics import JointState, make_vehicle
from coordkit.leader_follower import (
    CoordinationTree,
    cascade_motion,
    cascade_solve,
    follower_feasibility,
    topological_order,
)
from coordkit.motion_gen import VirtualInputPolicy

U = make_vehicle("unicycle")
CAR = make_vehicle("car_like", {"wheelbase": 1.0})
ZERO = VirtualInputPolicy("zero")


def test_orders():
    assert topological_order(CoordinationTree(3, [(0, 1), (1, 2)])) == [0, 1, 2]
    assert topological_order(CoordinationTree(3, [(0, 2), (0, 1)])) == [0, 1, 2]
    assert topological_order(CoordinationTree(4, [(2, 0), (2, 3), (0, 1)], root=2)) == [2, 0, 3, 1]


@pytest.mark.parametrize("n, edges, root", [
    (2, [(0, 1), (1, 0)], 0),
    (3, [(0, 2), (1, 2)], 0),
    (3, [(0, 1)], 0),
    (2, [(0, 0)], 0),
    (2, [(0, 5)], 0),
    (2, [(0, 1)], 1),
    (2, [(0, 1)], 4),
])
def test_not_a_tree(n, edges, root):
    with pytest.raises(NotATree):
        topological_order(CoordinationTree(n, edges, root))


def test_free_unicycle_follower():
    b = follower_feasibility(U, [0, 0, 0.3], None, None, [], 0.0, follower_index=0)
    assert b.kappa == 2 and np.allclose(b.special, 0)


def test_forwarded_band_row_is_respected():
    band = make_constraint("b", "distance_band", (0, 1), {"d_min": 0.5, "d_max": 1.0})
    b = follower_feasibility(U, [-1.0, 0, 0.0], np.zeros(3), [0, 0, 0], [band], 0.0,
                             model_i=U, leader_index=0, follower_index=1)
    rows = b.rows
    assert rows["active"].tolist() == [True, False]
    A, rhs = rows["omega"][rows["active"]], rows["rhs"][rows["active"]]
    from coordkit.motion_gen import select_virtual_inputs
    w = select_virtual_inputs(b, (A, rhs), VirtualInputPolicy("random"), target=np.array([-5.0, 3.0]))
    v = b.special + b.K @ w
    assert np.all(A @ v <= rhs + 1e-8)


def test_overconstrained_car_follower():
    rel = make_constraint("r", "relative_pose", (0, 1), {"delta_x": 1.0, "delta_y": 0.0, "delta_theta": 0.0})
    with pytest.raises(InfeasibleFollower) as ei:
        follower_feasibility(CAR, [-1, 0, 0, 0.0], np.array([1.0, 0, 0.5]), [0, 0, 0], [rel], 0.0,
                             model_i=U, leader_index=0, follower_index=1)
    assert ei.value.vehicle == 1


def test_edge_constraint_outside_edge():
    d = make_constraint("d", "distance_eq", (0, 2), {"d": 1})
    with pytest.raises(InfeasibleFollower):
        follower_feasibility(U, [0, 0, 0], np.zeros(3), [1, 0, 0], [d], 0.0,
                             model_i=U, leader_index=0, follower_index=1)


def test_single_root_tracks_reference():
    ref = make_constraint("ref", "velocity_track", (0,), {"v_r": 1.5, "u_r": 0.4})
    tree = CoordinationTree(1, [], 0, {0: [ref]})
    Pdot = cascade_motion(tree, ZERO, JointState([U], [0, 0, 0.7]), 0.0, ZERO)
    assert np.allclose(Pdot, [1.5 * math.cos(0.7), 1.5 * math.sin(0.7), 0.4])


def _chain(models, P0):
    ref = make_constraint("ref", "velocity_track", (0,), {"v_r": "1+0.1*sin(t)", "u_r": "sin(t)"})
    d01 = make_constraint("d01", "distance_eq", (0, 1), {"d": 1.0})
    d12 = make_constraint("d12", "distance_eq", (1, 2), {"d": 1.0})
    tree = CoordinationTree(3, [(0, 1), (1, 2)], 0, {0: [ref], 1: [d01], 2: [d12]})
    return tree, [ref, d01, d12], JointState(models, P0)


def test_equality_tree_matches_centralized_stack():
    models = [CAR, U, U]
    tree, cs, P = _chain(models, [0, 0, 0, 0.2, -1, 0, 0.3, -2, 0, -0.1])
    Pdot = cascade_motion(tree, ZERO, P, 0.7, ZERO)
    st_ = assemble(models, cs, [], P, 0.7)
    assert np.max(np.abs(st_.omega @ Pdot - st_.rhs)) <= 1e-9


def test_leaders_ignore_their_followers():
    models = [CAR, U, U]
    tree, _, P = _chain(models, [0, 0, 0, 0.2, -1, 0, 0.3, -2, 0, -0.1])
    a = cascade_motion(tree, ZERO, P, 0.3, ZERO)
    x = P.x.copy()
    x[7:10] += [0.05, -0.1, 0.4]  # move only the last follower
    b = cascade_motion(tree, ZERO, P.with_x(x), 0.3, ZERO)
    assert np.array_equal(a[:7], b[:7])


def test_follower_reads_only_its_edge(monkeypatch):
    models = [CAR, U, U]
    tree, _, P = _chain(models, [0, 0, 0, 0.2, -1, 0, 0.3, -2, 0, -0.1])
    parents = {0: None, 1: 0, 2: 1}
    seen = []
    real = lf._system

    def spy(model_j, p_j, pd_i, x, layout, local, *args):
        j = args[2]
        i = parents[j]
        assert np.array_equal(p_j, P.block(j))
        blocks = [P.block(j)] if i is None else [P.block(i), P.block(j)]
        assert np.array_equal(x, np.concatenate(blocks))
        assert len(layout) == len(blocks)
        for orig, c in local:
            assert set(orig.edge) <= {i, j} and all(v < len(layout) for v in c.edge)
        seen.append((j, i))
        return real(model_j, p_j, pd_i, x, layout, local, *args)

    monkeypatch.setattr(lf, "_system", spy)
    cascade_motion(tree, ZERO, P, 0.0, ZERO)
    assert seen == [(0, None), (1, 0), (2, 1)]


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_sibling_order_does_not_matter(a, b):
    ref = make_constraint("ref", "velocity_track", (0,), {"v_r": 1.0, "u_r": 0.2})
    band1 = make_constraint("b1", "distance_band", (0, 1), {"d_min": 0.5, "d_max": 1.5})
    band2 = make_constraint("b2", "distance_band", (0, 2), {"d_min": 0.5, "d_max": 1.5})
    tree = CoordinationTree(3, [(0, 1), (0, 2)], 0, {0: [ref], 1: [band1], 2: [band2]})
    P = JointState([U, U, U], [0, 0, 0, -1, a, 0.1, 0.2, 1 + b, -0.1])
    fwd = cascade_solve(tree, ZERO, P, 0.0, ZERO, order=[0, 1, 2]).Pdot
    rev = cascade_solve(tree, ZERO, P, 0.0, ZERO, order=[0, 2, 1]).Pdot
    assert np.allclose(fwd, rev)


def test_time_term_on_follower_inequality():
    # a band shrinking in time forces the follower to close in even when the leader is still
    band = make_constraint("b", "distance_band", (0, 1), {"d_min": 0.2, "d_max": "1.0-0.5*t"})
    b = follower_feasibility(U, [-1.0, 0, 0.0], np.zeros(3), [0, 0, 0], [band], 0.0,
                             model_i=U, leader_index=0, follower_index=1)
    rows = b.rows
    assert active_mask(rows["values"], rows["scales"], 1e-6)[0]
    assert rows["rhs"][0] == pytest.approx(1.0 * -0.5)
