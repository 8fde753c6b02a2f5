"""Feasibility checking and motion generation for constrained heterogeneous vehicle groups."""

from .constraints import (
    ActiveSet,
    ConstraintSpec,
    active_set,
    constraint_jacobian,
    eval_constraint,
    finite_diff_check,
    make_constraint,
    time_partial,
)
from .errors import *  # noqa: F401,F403
from .expr import TimeExpr, parse_expr
from .feasibility import (
    ConstraintStack,
    MotionBasis,
    assemble,
    check_feasibility,
    solve_basis,
    verify_solution_membership,
)
from .kinematics import JointState, Layout, VehicleModel, make_vehicle, stack_kinematics, verify_annihilation
from .leader_follower import CoordinationTree, cascade_motion, follower_feasibility, topological_order
from .motion_gen import VirtualInputPolicy, abstract_motion, recover_controls, select_virtual_inputs
from .scenarios import Scenario, builtin_scenarios, load_scenario, serialize
from .sim import SimConfig, TrajectoryLog, monitor, project_equalities, run, step
from .temporal import ConeQuery, controlled_invariance_residuals, temporal_cone_membership

__version__ = "0.1.0"
