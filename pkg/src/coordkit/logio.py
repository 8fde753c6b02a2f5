"""Trajectory CSV and report JSON.

CSV columns: ``t``, the joint state ``<vid>.<state>``, the controls
``<vid>.<control>``, ``w.1 .. w.k`` (padded to the largest kappa in the
log), one ``g.<cid>.<row>`` column per constraint row, the active-set
bitmask over the inequality rows, then ``cone``, ``rank`` and ``kappa``.
Floats are written with ``repr`` so a log reads back bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .errors import SchemaError
from .kinematics import Layout
from .sim import Record, TrajectoryLog


def _header(log):
    layout = log.layout
    cols = ["t"] + layout.names()
    cols += [f"{i}.{nm}" for i, m in enumerate(layout.models) for nm in m.control_names]
    kmax = max((len(s.w) for s in log.samples), default=0)
    cols += [f"w.{k + 1}" for k in range(kmax)]
    cols += [f"g.{cid}.{r}" for cid, r, _ in log.row_labels]
    cols += ["active", "cone", "rank", "kappa"]
    return cols, kmax


def _f(v):
    return repr(float(v))


def write_csv(log: TrajectoryLog, path):
    """Write ``log`` as CSV (see the module docstring for the layout)."""
    cols, kmax = _header(log)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for s in log.samples:
            row = [_f(s.t)] + [_f(v) for v in s.P]
            row += [_f(v) for u in s.u for v in u]
            row += [_f(v) for v in s.w] + [""] * (kmax - len(s.w))
            row += [_f(v) for v in s.values]
            row.append("".join("1" if a else "0" for a in s.active))
            row += ["1" if s.cone else "0", str(int(s.rank)), str(int(s.kappa))]
            wr.writerow(row)


def read_csv(path, models, row_labels, ineq_labels=None) -> TrajectoryLog:
    """Read a CSV written by :func:`write_csv` back into a :class:`TrajectoryLog`.

    ``models`` and ``row_labels`` come from the scenario the log belongs to;
    the header must match them exactly.
    """
    layout = Layout(models)
    ineq_labels = [(cid, r) for cid, r, fl in row_labels if fl == "inequality"] if ineq_labels is None \
        else ineq_labels
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise SchemaError("empty trajectory file") from None
        rows = list(rd)
    Lctl = sum(m.l for m in layout.models)
    kmax = sum(1 for c in header if c.startswith("w."))
    log = TrajectoryLog(layout, list(row_labels), list(ineq_labels))
    expected, _ = _header(log)
    expected[1 + layout.N + Lctl:1 + layout.N + Lctl] = [f"w.{k + 1}" for k in range(kmax)]
    if header != expected:
        raise SchemaError("trajectory header does not match the scenario")
    nrow = len(row_labels)
    for n, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"line {n}: expected {len(header)} fields, got {len(row)}")
        try:
            k = 0
            t = float(row[k]); k += 1
            P = np.array([float(v) for v in row[k:k + layout.N]]); k += layout.N
            u = []
            for m in layout.models:
                u.append(np.array([float(v) for v in row[k:k + m.l]]))
                k += m.l
            w = np.array([float(v) for v in row[k:k + kmax] if v != ""]); k += kmax
            values = np.array([float(v) for v in row[k:k + nrow]]); k += nrow
            active = np.array([ch == "1" for ch in row[k]], bool); k += 1
            cone = row[k] == "1"
            rank, kappa = int(row[k + 1]), int(row[k + 2])
        except ValueError as exc:
            raise SchemaError(f"line {n}: {exc}") from exc
        log.samples.append(Record(t, P, u, w, values, active, cone, rank, kappa))
    return log


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def report_dict(log: TrajectoryLog, report, scenario=None, cfg=None) -> dict:
    """Machine-checkable summary of a run and its monitor report."""
    ranks = [s.rank for s in log.samples]
    kappas = [s.kappa for s in log.samples]
    out = {
        "scenario": getattr(scenario, "name", None),
        "status": "error" if log.error else ("violations" if report.total_violations else "ok"),
        "error": log.error,
        "error_t": log.error_t,
        "samples": len(log.samples),
        "rows": [{"id": r.id, "row": r.row, "flavor": r.flavor, "max": _num(r.max),
                  "argmax_t": _num(r.argmax_t), "violations": r.violations} for r in report.rows],
        "cone_failures": report.cone_failures,
        "rank_deficient_samples": report.rank_deficient,
        "total_violations": report.total_violations,
        "tolerances": {"inequality": report.ineq_tol, "equality": report.eq_tol},
        "rank": {"min": min(ranks, default=None), "max": max(ranks, default=None)},
        "kappa": {"min": min(kappas, default=None), "max": max(kappas, default=None)},
    }
    if cfg is not None:
        out["h"], out["T"] = cfg.h, cfg.T
    return out


def write_report(path, log, report, scenario=None, cfg=None):
    with open(path, "w") as fh:
        json.dump(report_dict(log, report, scenario, cfg), fh, indent=2)
        fh.write("\n")
