"""Scenario files: JSON schema, loading, serialization and built-in scenarios.

A scenario document looks like::

    {
      "name": "two_unicycles_distance",
      "vehicles": [{"kind": "unicycle", "state": [0, 0, 0]}, ...],
      "constraints": [{"id": "d01", "family": "distance_eq",
                       "edge": [0, 1], "params": {"d": 1.0}}],
      "mode": {"type": "centralized"},
      "policy": {"objective": "min_slew", "w_box": [-10, 10]},
      "sim": {"h": 0.001, "T": 10}
    }

Parameters accept numbers or expression strings in ``t`` (see
:mod:`coordkit.expr`). In leader-follower mode every two-vehicle constraint
must lie on a tree edge; single-vehicle constraints belong to that vehicle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .constraints import FAMILIES, make_constraint
from .errors import (
    MissingParam,
    NonPositiveParam,
    NotATree,
    ParseError,
    SchemaError,
    UnknownKind,
    UnknownScenario,
)
from .kinematics import KINDS, make_vehicle
from .leader_follower import CoordinationTree
from .motion_gen import OBJECTIVES, VirtualInputPolicy
from .sim import Pipeline, SimConfig, check_initial_state

BUILTINS = (
    "two_unicycles_distance",
    "unicycle_constspeed",
    "unicycle_car",
    "complex_three",
    "heterogeneous_timevarying",
    "leader_follower_tv",
)

_param = {"oneOf": [{"type": "number"}, {"type": "string"}]}
_bound = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 1}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "vehicles", "constraints"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "vehicles": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind", "state"],
                "properties": {
                    "kind": {"enum": list(KINDS)},
                    "params": {"type": "object", "additionalProperties": {"type": "number"}},
                    "state": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "constraints": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "family", "edge"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "family": {"enum": sorted(FAMILIES)},
                    "flavor": {"enum": ["equality", "inequality"]},
                    "edge": {"type": "array", "items": {"type": "integer", "minimum": 0},
                             "minItems": 1, "maxItems": 2},
                    "params": {"type": "object", "additionalProperties": _param},
                },
            },
        },
        "mode": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["centralized", "leader_follower"]},
                "root": {"type": "integer", "minimum": 0},
                "edges": {"type": "array", "items": {
                    "type": "array", "items": {"type": "integer", "minimum": 0},
                    "minItems": 2, "maxItems": 2}},
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "objective": {"enum": list(OBJECTIVES)},
                "w_box": {"type": "array", "items": _bound, "minItems": 2, "maxItems": 2},
                "fixed_w": {"type": "array", "items": {"type": "number"}},
                "qp_tolerance": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "random_hold": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "eps_act": {"type": "number", "exclusiveMinimum": 0},
                "projection": {"type": "boolean"},
                "projection_tol": {"type": "number", "exclusiveMinimum": 0},
                "projection_max_iters": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "minimum": 0},
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


@dataclass
class Scenario:
    name: str
    models: list
    states: list
    constraints: list
    mode: str = "centralized"
    root: int = 0
    tree_edges: list = field(default_factory=list)
    policy: VirtualInputPolicy = field(default_factory=VirtualInputPolicy)
    sim: dict = field(default_factory=dict)
    description: str = ""

    @property
    def initial_state(self):
        return np.concatenate([np.asarray(s, float) for s in self.states])

    def tree(self):
        if self.mode != "leader_follower":
            return None
        owned = {j: [] for j in range(len(self.models))}
        parent = {j: i for i, j in self.tree_edges}
        for c in self.constraints:
            if len(c.edge) == 1:
                owned[c.edge[0]].append(c)
                continue
            a, b = c.edge
            if parent.get(b) == a:
                owned[b].append(c)
            elif parent.get(a) == b:
                owned[a].append(c)
            else:
                raise NotATree(f"constraint {c.id!r} on ({a}, {b}) is not on a tree edge")
        return CoordinationTree(len(self.models), [tuple(e) for e in self.tree_edges], self.root, owned)

    def pipeline(self):
        return Pipeline(self.models, self.constraints, self.policy, self.mode, self.tree())

    def sim_config(self, **overrides):
        s = dict(self.sim)
        s.update({k: v for k, v in overrides.items() if v is not None})
        policy = self.policy
        if "seed" in s:
            seed = s.pop("seed")
            policy = VirtualInputPolicy(policy.objective, policy.w_box, policy.fixed_w,
                                        policy.qp_tolerance, int(seed), policy.random_hold)
        return SimConfig(
            h=float(s.get("h", 1e-3)),
            T=float(s.get("T", 10.0)),
            eps_act=float(s.get("eps_act", 1e-3)),
            projection_enabled=bool(s.get("projection", True)),
            projection_tol=float(s.get("projection_tol", 1e-10)),
            projection_max_iters=int(s.get("projection_max_iters", 10)),
            policy=policy,
            mode=self.mode,
            gamma=float(s.get("gamma", 50.0)),
        )

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.name == other.name and self.models == other.models
                and [list(map(float, s)) for s in self.states] == [list(map(float, s)) for s in other.states]
                and self.constraints == other.constraints and self.mode == other.mode
                and self.root == other.root
                and [tuple(e) for e in self.tree_edges] == [tuple(e) for e in other.tree_edges]
                and self.policy == other.policy and self.sim == other.sim
                and self.description == other.description)


def _schema_error(err):
    return SchemaError(err.message, list(err.absolute_path))


def from_dict(doc, check_initial=True) -> Scenario:
    """Validate a scenario document and build the :class:`Scenario`."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise _schema_error(errors[0])
    models, states = [], []
    for k, v in enumerate(doc["vehicles"]):
        try:
            m = make_vehicle(v["kind"], v.get("params", {}))
        except (UnknownKind, MissingParam, NonPositiveParam) as exc:
            raise SchemaError(str(exc), ("vehicles", k, "params")) from exc
        if len(v["state"]) != m.n:
            raise SchemaError(f"{m.kind} needs a state of length {m.n}, got {len(v['state'])}",
                              ("vehicles", k, "state"))
        models.append(m)
        states.append([float(s) for s in v["state"]])
    n = len(models)
    constraints, ids = [], set()
    for k, c in enumerate(doc["constraints"]):
        path = ("constraints", k)
        for e in c["edge"]:
            if e >= n:
                raise SchemaError(f"vehicle index {e} out of range for {n} vehicles", path + ("edge",))
        if c["id"] in ids:
            raise SchemaError(f"duplicate constraint id {c['id']!r}", path + ("id",))
        ids.add(c["id"])
        try:
            spec = make_constraint(c["id"], c["family"], c["edge"], c.get("params", {}), c.get("flavor"))
        except SchemaError as exc:
            raise SchemaError(exc.args[0].split(": ", 1)[-1], path + exc.path) from exc
        except ParseError as exc:
            raise SchemaError(f"bad expression: {exc}", path + ("params",)) from exc
        _check_heading_needs(spec, models, path)
        constraints.append(spec)
    mode_doc = doc.get("mode", {"type": "centralized"})
    mode = mode_doc["type"]
    root = int(mode_doc.get("root", 0))
    edges = [list(map(int, e)) for e in mode_doc.get("edges", [])]
    if mode == "leader_follower":
        if root >= n:
            raise SchemaError(f"root {root} out of range", ("mode", "root"))
        for q, e in enumerate(edges):
            if max(e) >= n:
                raise SchemaError(f"vehicle index {max(e)} out of range for {n} vehicles", ("mode", "edges", q))
    elif "edges" in mode_doc or "root" in mode_doc:
        raise SchemaError("root/edges are only allowed in leader_follower mode", ("mode",))
    pol = doc.get("policy", {})
    try:
        policy = VirtualInputPolicy(
            objective=pol.get("objective", "min_slew"),
            w_box=tuple(pol.get("w_box", (-10.0, 10.0))),
            fixed_w=pol.get("fixed_w"),
            qp_tolerance=float(pol.get("qp_tolerance", 1e-9)),
            seed=int(pol.get("seed", 0)),
            random_hold=float(pol.get("random_hold", 0.5)),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), ("policy",)) from exc
    sc = Scenario(doc["name"], models, states, constraints, mode, root, edges, policy,
                  dict(doc.get("sim", {})), doc.get("description", ""))
    try:
        pipe = sc.pipeline()
    except NotATree as exc:
        raise SchemaError(str(exc), ("mode",)) from exc
    try:
        cfg = sc.sim_config()
    except ValueError as exc:
        raise SchemaError(str(exc), ("sim",)) from exc
    if check_initial:
        check_initial_state(pipe, sc.initial_state, cfg)
    return sc


def _check_heading_needs(spec, models, path):
    fam = spec.family
    need = []
    if fam == "heading_eq" or (fam == "relative_pose" and "delta_theta" in spec.params):
        need = list(spec.edge)
    elif fam == "visibility":
        need = [spec.edge[1]]
    elif fam == "velocity_track":
        m = models[spec.edge[0]]
        if m.kind == "integrator":
            raise SchemaError("velocity_track is not defined for integrator vehicles", path + ("edge",))
        if m.kind == "constant_speed" and "v_r" in spec.params:
            raise SchemaError("constant_speed vehicles have a fixed speed; use u_r only", path + ("params",))
    for v in need:
        if models[v].heading is None:
            raise SchemaError(f"{fam} needs a heading but vehicle {v} is {models[v].kind}", path + ("edge",))


def to_dict(sc: Scenario) -> dict:
    """Inverse of :func:`from_dict`."""
    doc = {"name": sc.name}
    if sc.description:
        doc["description"] = sc.description
    doc["vehicles"] = []
    for m, s in zip(sc.models, sc.states):
        v = {"kind": m.kind, "state": [float(a) for a in s]}
        if m.params:
            v["params"] = m.params
        doc["vehicles"].append(v)
    doc["constraints"] = [
        {"id": c.id, "family": c.family, "edge": list(c.edge),
         "params": {k: e.to_json() for k, e in c.params.items()}}
        for c in sc.constraints
    ]
    mode = {"type": sc.mode}
    if sc.mode == "leader_follower":
        mode["root"] = sc.root
        mode["edges"] = [list(e) for e in sc.tree_edges]
    doc["mode"] = mode
    p = sc.policy
    pol = {"objective": p.objective, "w_box": [_box_json(b) for b in p.w_box],
           "qp_tolerance": p.qp_tolerance, "seed": p.seed, "random_hold": p.random_hold}
    if p.fixed_w is not None:
        pol["fixed_w"] = list(p.fixed_w)
    doc["policy"] = pol
    if sc.sim:
        doc["sim"] = dict(sc.sim)
    return doc


def _box_json(b):
    if np.ndim(b) == 0:
        return float(b)
    return [float(v) for v in b]


def serialize(sc: Scenario) -> str:
    return json.dumps(to_dict(sc), indent=2)


def builtin_scenarios():
    return list(BUILTINS)


def _builtin_text(name):
    return resources.files("coordkit").joinpath("data").joinpath(f"{name}.json").read_text()


def load_scenario(source, check_initial=True) -> Scenario:
    """Load a builtin by name, a path to a JSON file, or an already-parsed dict."""
    if isinstance(source, dict):
        return from_dict(source, check_initial)
    src = str(source)
    if src in BUILTINS:
        text = _builtin_text(src)
    else:
        p = Path(src)
        if not p.is_file():
            raise UnknownScenario(f"no builtin scenario or file named {src!r}")
        text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    return from_dict(doc, check_initial)
