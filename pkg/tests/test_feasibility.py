import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordkit.constraints import make_constraint
from coordkit.errors import DimensionMismatch, InfeasibleSystem
from coordkit.feasibility import (
    affine_projection,
    assemble,
    canonical_null_basis,
    check_feasibility,
    numerical_rank,
    solve_basis,
    verify_solution_membership,
)
from coordkit.kinematics import JointState, make_vehicle

import oracles

U = make_vehicle("unicycle")
CS = make_vehicle("constant_speed", {"v": 1.5})
CAR = make_vehicle("car_like", {"wheelbase": 0.6})
INT = make_vehicle("integrator")
D1 = make_constraint("d", "distance_eq", (0, 1), {"d": 1.0})


def stack_for(models, p, eq, ineq=(), t=0.0):
    P = JointState(models, p)
    return assemble(models, list(eq), list(ineq), P, t)


def residual(stack, v):
    return float(np.max(np.abs(stack.omega @ v - stack.rhs)))


def null_residual(stack, v):
    return float(np.max(np.abs(stack.omega @ v)))


def test_two_unicycles_fields():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = oracles.sample_two_vehicle(rng)
        st_ = stack_for([U, U], p, [D1])
        assert check_feasibility(st_).kappa == 3
        for K in oracles.two_unicycles_fields(p):
            assert null_residual(st_, K) <= 1e-9


def test_constspeed_unicycle_special():
    rng = np.random.default_rng(1)
    guard = lambda p: oracles.constspeed_unicycle_special(p, 1.5)[1]  # noqa: E731
    for _ in range(50):
        p = oracles.sample_two_vehicle(rng, guard=guard)
        st_ = stack_for([CS, U], p, [D1])
        assert check_feasibility(st_).kappa == 2
        Kbar, _ = oracles.constspeed_unicycle_special(p, 1.5)
        assert residual(st_, Kbar) <= 1e-9


def test_unicycle_car_fields():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p = oracles.sample_two_vehicle(rng, n2=4)
        st_ = stack_for([U, CAR], p, [D1])
        assert check_feasibility(st_).kappa == 3
        for K in oracles.unicycle_car_fields(p, 0.6):
            assert null_residual(st_, K) <= 1e-9


def test_heterogeneous_fields():
    rng = np.random.default_rng(3)
    rel = make_constraint("c12", "relative_pose", (0, 1), {"delta_x": 1.0, "delta_y": 0.5, "delta_theta": 0.0})
    c13 = make_constraint("c13", "distance_eq", (0, 2), {"delta": "2+0.5*sin(t/5)"})
    for _ in range(50):
        x1, y1, th = rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-math.pi, math.pi)
        t = rng.uniform(0, 10)
        r = math.sqrt(2 * c13.params["delta"](t))
        while True:
            a = rng.uniform(-math.pi, math.pi)
            x3, y3 = x1 + r * math.cos(a), y1 + r * math.sin(a)
            if abs(y3 - y1) > 1e-2:
                break
        p = [x1, y1, th, x1 - 1.0, y1 - 0.5, th, x3, y3]
        st_ = stack_for([CS, U, INT], p, [rel, c13], t=t)
        assert check_feasibility(st_).kappa == 2
        gamma = c13.params["delta"].deriv(t)
        Kbar, K1, K2 = oracles.heterogeneous_fields(p, 1.5, gamma)
        assert residual(st_, Kbar) <= 1e-9
        assert null_residual(st_, K1) <= 1e-9 and null_residual(st_, K2) <= 1e-9


def test_sideways_unicycle_is_infeasible():
    st_ = stack_for([U], [0, 0, 0], [])
    side = st_.with_rows([[0.0, 1.0, 0.0]], [1.0], cid="sideways")
    feas = check_feasibility(side)
    assert not feas and feas.status == "Infeasible"
    assert feas.rank == 1 and feas.rank_augmented == 2
    with pytest.raises(InfeasibleSystem):
        solve_basis(side)
    # the same row asking for zero lateral speed is redundant, not contradictory
    assert check_feasibility(st_.with_rows([[0.0, 1.0, 0.0]], [0.0]))


def test_stack_layout_and_labels():
    band = make_constraint("b", "distance_band", (0, 1), {"d_min": 0.5, "d_max": 1.0})
    st_ = stack_for([U, U], [0, 0, 0, 1, 0, 0], [D1], [band])
    assert st_.omega.shape == (3, 6)
    assert st_.labels[0] == ("kinematic", "vehicle0", 0)
    assert st_.labels[2] == ("equality", "d", 0)
    assert st_.inequality_labels == [("b", 0)]
    assert st_.inequality_omega.shape == (1, 6)
    with pytest.raises(DimensionMismatch):
        assemble([U, U], [band], [], JointState([U, U], np.zeros(6)), 0.0)
    with pytest.raises(DimensionMismatch):
        st_.with_rows(np.ones((1, 5)), [0.0])


def test_empty_stack():
    st_ = stack_for([INT], [1, 2], [])
    feas = check_feasibility(st_)
    assert feas and feas.kappa == 2
    b = solve_basis(st_)
    assert np.array_equal(b.K, np.eye(2)) and np.array_equal(b.special, [0, 0])


def test_numerical_rank():
    assert numerical_rank(np.zeros((2, 3))) == 0
    assert numerical_rank(np.array([[1, 0], [1, 1e-14]])) == 1
    assert numerical_rank(np.eye(3)) == 3


def test_canonical_basis_is_subspace_invariant():
    rng = np.random.default_rng(4)
    Z, _ = np.linalg.qr(rng.normal(size=(6, 3)))
    R, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    A = canonical_null_basis(Z)
    B = canonical_null_basis(Z @ R)
    assert np.allclose(A, B, atol=1e-12)
    assert np.allclose(A.T @ A, np.eye(3), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_solution_family_property(seed):
    rng = np.random.default_rng(seed)
    p = oracles.sample_two_vehicle(rng, n2=4)
    st_ = stack_for([U, CAR], p, [D1])
    basis = solve_basis(st_)
    assert basis.kappa == 3 and np.allclose(basis.K.T @ basis.K, np.eye(3), atol=1e-10)
    w = rng.normal(size=3)
    cand = basis.special + basis.K @ w
    assert verify_solution_membership(basis, st_, cand) <= 1e-9
    # min-norm special solution is orthogonal to the null space
    assert np.allclose(basis.K.T @ basis.special, 0, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_affine_projection_is_closest_point(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 5), 6
    A = rng.normal(size=(m, n))
    if rng.random() < 0.3:
        A[-1] = A[0]  # dependent but consistent rows
    x0 = rng.normal(size=n)
    b = A @ x0
    v = rng.normal(size=n)
    out = affine_projection(A, b, v)
    assert np.allclose(A @ out, b, atol=1e-9)
    # the correction lies in the row space
    Q, _ = np.linalg.qr(A.T)
    d = out - v
    assert np.allclose(d, Q @ (Q.T @ d), atol=1e-9)


def test_membership_dimension_check():
    st_ = stack_for([U], [0, 0, 0], [])
    with pytest.raises(DimensionMismatch):
        verify_solution_membership(solve_basis(st_), st_, np.zeros(4))
