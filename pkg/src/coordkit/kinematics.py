"""Control-affine vehicle models and the stacked kinematic codistribution.

Every model describes ``p' = f0(p) + F(p) u`` together with a codistribution
``Omega(p)`` whose rows annihilate the control fields, so that the admissible
velocities are exactly ``{p' : Omega(p) p' = T(p)}`` with ``T = Omega f0``.
Planar position ``(x, y)`` always occupies the first two state coordinates.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DimensionMismatch,
    InadmissibleState,
    MissingParam,
    NonPositiveParam,
    UnknownKind,
)

KINDS = ("unicycle", "constant_speed", "car_like", "integrator")
STEER_MARGIN = 1e-3
PHI_MAX = math.pi / 2 - STEER_MARGIN


class VehicleModel:
    """Base class; concrete kinds override the field evaluators.

    Attributes
    ----------
    kind : str
    n : int
        State dimension.
    l : int
        Control dimension.
    params : dict
        Read-only copy of the model parameters.
    state_names, control_names : tuple of str
    heading : int or None
        Index of the heading angle inside the vehicle state.
    steer : int or None
        Coordinate driven by the rotational input (used by velocity tracking).
    """

    kind = ""
    n = 0
    l = 0
    state_names = ()
    control_names = ()
    heading = None
    steer = None

    def __init__(self, params=None):
        self._hash = hash((self.kind, tuple(sorted((params or {}).items()))))
        self._params = dict(params or {})

    @property
    def params(self):
        return dict(self._params)

    def __setattr__(self, name, value):
        if hasattr(self, "_params") and name != "_params":
            raise AttributeError("vehicle models are immutable")
        object.__setattr__(self, name, value)

    def __eq__(self, other):
        return type(self) is type(other) and self._params == other._params

    def __hash__(self):
        return self._hash

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self._params.items()))
        return f"{type(self).__name__}({args})"

    def _check(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n,):
            raise DimensionMismatch(f"{self.kind} state needs length {self.n}, got shape {p.shape}")
        return p

    def check_admissible(self, p):
        self._check(p)

    def drift(self, p):
        self._check(p)
        return np.zeros(self.n)

    def control_fields(self, p):
        raise NotImplementedError

    def codistribution(self, p):
        raise NotImplementedError

    def drift_image(self, p):
        self._check(p)
        return np.zeros(self.n - self.l)


class Unicycle(VehicleModel):
    kind = "unicycle"
    n, l = 3, 2
    state_names = ("x", "y", "theta")
    control_names = ("v", "omega")
    heading = 2
    steer = 2

    def control_fields(self, p):
        p = self._check(p)
        c, s = math.cos(p[2]), math.sin(p[2])
        return np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])

    def codistribution(self, p):
        p = self._check(p)
        c, s = math.cos(p[2]), math.sin(p[2])
        return np.array([[s, -c, 0.0]])


class ConstantSpeed(VehicleModel):
    kind = "constant_speed"
    n, l = 3, 1
    state_names = ("x", "y", "theta")
    control_names = ("omega",)
    heading = 2
    steer = 2

    def drift(self, p):
        p = self._check(p)
        v = self._params["v"]
        return np.array([v * math.cos(p[2]), v * math.sin(p[2]), 0.0])

    def control_fields(self, p):
        self._check(p)
        return np.array([[0.0], [0.0], [1.0]])

    def codistribution(self, p):
        p = self._check(p)
        c, s = math.cos(p[2]), math.sin(p[2])
        return np.array([[s, -c, 0.0], [c, s, 0.0]])

    def drift_image(self, p):
        self._check(p)
        return np.array([0.0, self._params["v"]])


class CarLike(VehicleModel):
    kind = "car_like"
    n, l = 4, 2
    state_names = ("x", "y", "theta", "phi")
    control_names = ("v", "phidot")
    heading = 2
    steer = 3

    def check_admissible(self, p):
        p = self._check(p)
        if not abs(p[3]) <= PHI_MAX:
            raise InadmissibleState(f"steering angle {p[3]:.6g} outside |phi| <= pi/2 - {STEER_MARGIN:g}")
        return p

    def control_fields(self, p):
        p = self.check_admissible(p)
        th, phi = p[2], p[3]
        L = self._params["wheelbase"]
        return np.array([
            [math.cos(th), 0.0],
            [math.sin(th), 0.0],
            [math.tan(phi) / L, 0.0],
            [0.0, 1.0],
        ])

    def codistribution(self, p):
        p = self.check_admissible(p)
        th, phi = p[2], p[3]
        L = self._params["wheelbase"]
        return np.array([
            [math.sin(th + phi), -math.cos(th + phi), -L * math.cos(phi), 0.0],
            [math.sin(th), -math.cos(th), 0.0, 0.0],
        ])


class Integrator(VehicleModel):
    kind = "integrator"
    n, l = 2, 2
    state_names = ("x", "y")
    control_names = ("vx", "vy")

    def control_fields(self, p):
        self._check(p)
        return np.eye(2)

    def codistribution(self, p):
        self._check(p)
        return np.zeros((0, 2))


_CLASSES = {cls.kind: cls for cls in (Unicycle, ConstantSpeed, CarLike, Integrator)}
_REQUIRED = {"constant_speed": ("v",), "car_like": ("wheelbase",)}


def make_vehicle(kind, params=None) -> VehicleModel:
    """Construct one of the four vehicle kinds.

    Parameters
    ----------
    kind : {'unicycle', 'constant_speed', 'car_like', 'integrator'}
    params : dict, optional
        ``v`` (speed, m/s) for ``constant_speed``; ``wheelbase`` (m) for
        ``car_like``. Unrecognised keys are rejected.
    """
    if kind not in _CLASSES:
        raise UnknownKind(f"unknown vehicle kind {kind!r}; expected one of {', '.join(KINDS)}")
    params = dict(params or {})
    required = _REQUIRED.get(kind, ())
    extra = set(params) - set(required)
    if extra:
        raise MissingParam(f"{kind} takes no parameter(s) {sorted(extra)}")
    clean = {}
    for name in required:
        if name not in params:
            raise MissingParam(f"{kind} requires parameter {name!r}")
        value = float(params[name])
        if not value > 0.0 or not math.isfinite(value):
            raise NonPositiveParam(f"{kind} parameter {name!r} must be positive, got {value!r}")
        clean[name] = value
    return _CLASSES[kind](clean)


def verify_annihilation(model: VehicleModel, p) -> float:
    """Max of ``|Omega F|`` and ``|Omega f0 - T|`` at state ``p``."""
    p = model._check(p)
    W = model.codistribution(p)
    if W.shape[0] == 0:
        return 0.0
    r1 = np.abs(W @ model.control_fields(p)).max()
    r2 = np.abs(W @ model.drift(p) - model.drift_image(p)).max()
    return float(max(r1, r2))


class Layout:
    """Block structure of a fleet: per-vehicle offsets into the joint state."""

    def __init__(self, models):
        self.models = tuple(models)
        self.dims = tuple(m.n for m in self.models)
        self.offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.dims)]))
        self.N = self.offsets[-1]
        self.L = sum(m.l for m in self.models)

    def __len__(self):
        return len(self.models)

    def slice(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def column(self, i, k):
        """Joint index of coordinate ``k`` of vehicle ``i``."""
        return self.offsets[i] + k

    def names(self):
        return [f"{i}.{nm}" for i, m in enumerate(self.models) for nm in m.state_names]


class JointState:
    """Composite state ``P`` of a fleet.

    Headings are stored unwrapped; ``blocks`` returns views per vehicle.
    """

    __slots__ = ("layout", "x")

    def __init__(self, layout, x):
        if not isinstance(layout, Layout):
            layout = Layout(layout)
        x = np.array(x, dtype=float).ravel()
        if x.shape[0] != layout.N:
            raise DimensionMismatch(f"joint state needs length {layout.N}, got {x.shape[0]}")
        self.layout = layout
        self.x = x

    @classmethod
    def from_blocks(cls, models, blocks):
        layout = Layout(models)
        if len(blocks) != len(layout):
            raise DimensionMismatch(f"{len(layout)} vehicles but {len(blocks)} state blocks")
        for i, (m, b) in enumerate(zip(layout.models, blocks)):
            if len(b) != m.n:
                raise DimensionMismatch(f"vehicle {i} ({m.kind}) needs {m.n} states, got {len(b)}")
        return cls(layout, np.concatenate([np.asarray(b, float) for b in blocks]) if blocks else [])

    @property
    def models(self):
        return self.layout.models

    @property
    def N(self):
        return self.layout.N

    def block(self, i):
        return self.x[self.layout.slice(i)]

    @property
    def blocks(self):
        return [self.block(i) for i in range(len(self.layout))]

    def position(self, i):
        o = self.layout.offsets[i]
        return self.x[o:o + 2]

    def with_x(self, x):
        return JointState(self.layout, x)


def _as_joint(models, P):
    if isinstance(P, JointState):
        if tuple(P.models) != tuple(models):
            if len(P.models) != len(models) or any(a.n != b.n for a, b in zip(P.models, models)):
                raise DimensionMismatch("joint state blocks do not match the models")
        return P
    return JointState(Layout(models), P)


def stack_kinematics(models, P):
    """Block-row stacked ``Omega_K(P)`` and ``T_K(P)`` in vehicle order."""
    P = _as_joint(models, P)
    layout = P.layout
    rows = sum(m.n - m.l for m in models)
    W = np.zeros((rows, layout.N))
    T = np.zeros(rows)
    r = 0
    for i, m in enumerate(models):
        k = m.n - m.l
        if k == 0:
            m.check_admissible(P.block(i))
            continue
        p = P.block(i)
        W[r:r + k, layout.slice(i)] = m.codistribution(p)
        T[r:r + k] = m.drift_image(p)
        r += k
    return W, T


def stack_fields(models, P):
    """Joint drift ``F0(P)`` (length N) and block-diagonal ``F(P)`` (N x L)."""
    P = _as_joint(models, P)
    layout = P.layout
    F0 = np.zeros(layout.N)
    F = np.zeros((layout.N, layout.L))
    c = 0
    for i, m in enumerate(models):
        p = P.block(i)
        s = layout.slice(i)
        F0[s] = m.drift(p)
        F[s, c:c + m.l] = m.control_fields(p)
        c += m.l
    return F0, F
