import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordkit.constraints import make_constraint
from coordkit.errors import DimensionMismatch, NoFeasibleVirtualInput
from coordkit.feasibility import MotionBasis, assemble, solve_basis
from coordkit.kinematics import JointState, make_vehicle, stack_fields
from coordkit.motion_gen import (
    VirtualInputPolicy,
    abstract_motion,
    filter_rows,
    realized_motion,
    recover_controls,
    select_virtual_inputs,
)

import oracles

U = make_vehicle("unicycle")
CS = make_vehicle("constant_speed", {"v": 1.0})
CAR = make_vehicle("car_like", {"wheelbase": 0.5})
INT = make_vehicle("integrator")
KINDS = [U, CS, CAR, INT]


def test_abstract_motion():
    b = MotionBasis(np.array([1.0, 0, 0]), np.array([[0, 0], [1, 0], [0, 1.0]]), 1, 0.0)
    assert np.allclose(abstract_motion(b, [2, 3]), [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        abstract_motion(b, [1])


def _basis_two_unicycles(p):
    P = JointState([U, U], p)
    d = make_constraint("d", "distance_eq", (0, 1), {"d": 1.0})
    return solve_basis(assemble([U, U], [d], [], P, 0.0))


def test_objectives():
    b = _basis_two_unicycles([0, 0, 0, 1, 0, 0.5])
    empty = (np.zeros((0, 6)), np.zeros(0))
    assert np.allclose(select_virtual_inputs(b, empty, VirtualInputPolicy("zero")), 0)
    w = select_virtual_inputs(b, empty, VirtualInputPolicy("fixed", fixed_w=(0.1, -0.2, 0.3)))
    assert np.allclose(w, [0.1, -0.2, 0.3], atol=1e-8)
    w = select_virtual_inputs(b, empty, VirtualInputPolicy("random"), target=np.array([20.0, 0, 0]))
    assert w[0] == pytest.approx(10.0)  # clipped to the default box
    prev = b.special + b.K @ np.array([0.5, 0.1, -0.2])
    w = select_virtual_inputs(b, empty, VirtualInputPolicy("min_slew"), prev_Pdot=prev)
    assert np.allclose(w, [0.5, 0.1, -0.2], atol=1e-7)
    with pytest.raises(ValueError):
        select_virtual_inputs(b, empty, VirtualInputPolicy("min_slew"))
    with pytest.raises(ValueError):
        select_virtual_inputs(b, empty, VirtualInputPolicy("random"))


def test_policy_validation():
    with pytest.raises(ValueError):
        VirtualInputPolicy("greedy")
    with pytest.raises(ValueError):
        VirtualInputPolicy("fixed")
    with pytest.raises(ValueError):
        VirtualInputPolicy(w_box=(1, -1))
    p = VirtualInputPolicy(w_box=([-1, -2], [1, 2]))
    with pytest.raises(DimensionMismatch):
        p.bounds(3)


def test_rows_are_respected():
    b = _basis_two_unicycles([0, 0, 0, 1, 0, 0.5])
    # forbid turning vehicle 0 left and vehicle 1 right
    A = np.array([[0, 0, -1.0, 0, 0, 0], [0, 0, 0, 0, 0, 1.0]])
    rhs = np.array([-0.3, -0.4])
    w = select_virtual_inputs(b, (A, rhs), VirtualInputPolicy("zero"))
    v = abstract_motion(b, w)
    assert np.all(A @ v <= rhs + 1e-9)
    assert v[2] == pytest.approx(0.3, abs=1e-8) and v[5] == pytest.approx(-0.4, abs=1e-8)


def test_no_freedom_left():
    b = MotionBasis(np.array([1.0, 0.0]), np.zeros((2, 0)), 2, 0.0)
    assert select_virtual_inputs(b, (np.array([[1.0, 0]]), np.array([2.0])), VirtualInputPolicy()).shape == (0,)
    with pytest.raises(NoFeasibleVirtualInput):
        select_virtual_inputs(b, (np.array([[1.0, 0]]), np.array([0.5])), VirtualInputPolicy())


def test_box_infeasible():
    b = _basis_two_unicycles([0, 0, 0, 1, 0, 0])
    A = np.array([[0, 0, 1.0, 0, 0, 0]])
    with pytest.raises(NoFeasibleVirtualInput):
        select_virtual_inputs(b, (A, np.array([-20.0])), VirtualInputPolicy("zero"))


def test_remark_controls():
    rng = np.random.default_rng(5)
    for _ in range(100):
        p = oracles.sample_two_vehicle(rng)
        w = rng.normal(size=3)
        Pdot = sum(wk * K for wk, K in zip(w, oracles.two_unicycles_fields(p)))
        u = recover_controls([U, U], JointState([U, U], p), Pdot)
        ref = oracles.two_unicycle_remark_controls(p, w)
        assert np.allclose(u[0], ref[0], atol=1e-9) and np.allclose(u[1], ref[1], atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(range(4)), min_size=1, max_size=4), st.integers(0, 10_000))
def test_control_round_trip(kinds, seed):
    rng = np.random.default_rng(seed)
    models = [KINDS[k] for k in kinds]
    blocks = []
    for m in models:
        p = rng.uniform(-2, 2, size=m.n)
        if m.kind == "car_like":
            p[3] = rng.uniform(-1.4, 1.4)
        blocks.append(p)
    P = JointState.from_blocks(models, blocks)
    F0, F = stack_fields(models, P)
    u_true = rng.normal(size=F.shape[1])
    Pdot = F0 + F @ u_true
    u = recover_controls(models, P, Pdot)
    assert np.max(np.abs(realized_motion(models, P, u) - Pdot)) <= 1e-9
    assert np.allclose(np.concatenate(u), u_true, atol=1e-9)


def test_integrator_controls_equal_velocity():
    u = recover_controls([INT], JointState([INT], [1, 2]), np.array([0.3, -0.7]))
    assert np.array_equal(u[0], [0.3, -0.7])


def test_recover_dimension_check():
    with pytest.raises(DimensionMismatch):
        recover_controls([U], JointState([U], [0, 0, 0]), np.zeros(4))


def test_filter_rows_bounds():
    ineq = {"omega": np.eye(3), "rhs": np.array([0.5, 0.5, 0.5]),
            "values": np.array([0.0, -0.8e-3, -0.5]), "scales": np.ones(3),
            "active": np.array([True, True, False])}
    A, b = filter_rows(ineq, 1e-3, 1e-3, gamma=50.0)
    assert A is ineq["omega"]
    assert b[0] == pytest.approx(0.5 - 50 * 0.5e-3)
    assert b[1] == pytest.approx(0.5)  # deep half of the band: plain tangency
    assert b[2] == pytest.approx(0.5 + (0.5 - 0.5e-3) / 1e-3)
    assert np.all(b[:2] <= ineq["rhs"][:2])


def test_constant_speed_keeps_speed():
    P = JointState([CS], [0, 0, 0.7])
    u = recover_controls([CS], P, np.array([math.cos(0.7), math.sin(0.7), 0.25]))
    assert np.allclose(u[0], [0.25])
