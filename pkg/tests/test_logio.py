import json
import math

import numpy as np
import pytest

from coordkit.errors import SchemaError
from coordkit.logio import read_csv, report_dict, write_csv, write_report
from coordkit.scenarios import load_scenario
from coordkit.sim import monitor, run


@pytest.fixture(scope="module")
def short_run():
    sc = load_scenario("complex_three")
    cfg = sc.sim_config(T=0.25, h=1e-2)
    return sc, cfg, run(sc, cfg)


def test_header_layout(short_run, tmp_path):
    sc, cfg, log = short_run
    path = tmp_path / "t.csv"
    write_csv(log, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:4] == ["t", "0.x", "0.y", "0.theta"]
    assert "w.1" in header and "g.d01.0" in header and "g.vis01.0" in header
    assert header[-4:] == ["active", "cone", "rank", "kappa"]


def test_csv_round_trip_is_exact(short_run, tmp_path):
    sc, cfg, log = short_run
    path = tmp_path / "t.csv"
    write_csv(log, path)
    lines = path.read_text().splitlines()
    assert len(lines) - 1 == math.floor(cfg.T / cfg.h) + 1
    pipe = sc.pipeline()
    back = read_csv(path, sc.models, pipe.row_labels, pipe.ineq_labels)
    assert len(back) == len(log)
    for a, b in zip(log.samples, back.samples):
        assert a.t == b.t and np.array_equal(a.P, b.P) and np.array_equal(a.w, b.w)
        assert np.array_equal(a.values, b.values) and np.array_equal(a.active, b.active)
        assert all(np.array_equal(x, y) for x, y in zip(a.u, b.u))
        assert (a.cone, a.rank, a.kappa) == (b.cone, b.rank, b.kappa)
    out = tmp_path / "again.csv"
    write_csv(back, out)
    assert out.read_bytes() == path.read_bytes()


def test_read_rejects_other_scenario(short_run, tmp_path):
    sc, cfg, log = short_run
    path = tmp_path / "t.csv"
    write_csv(log, path)
    other = load_scenario("two_unicycles_distance")
    with pytest.raises(SchemaError):
        read_csv(path, other.models, other.pipeline().row_labels)
    text = path.read_text().splitlines()
    text[3] = text[3] + ",extra"
    (tmp_path / "bad.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(SchemaError):
        read_csv(tmp_path / "bad.csv", sc.models, sc.pipeline().row_labels)
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(SchemaError):
        read_csv(tmp_path / "empty.csv", sc.models, sc.pipeline().row_labels)


def test_report(short_run, tmp_path):
    sc, cfg, log = short_run
    rep = monitor(log, sc.constraints)
    path = tmp_path / "r.json"
    write_report(path, log, rep, sc, cfg)
    doc = json.loads(path.read_text())
    assert doc == json.loads(json.dumps(report_dict(log, rep, sc, cfg)))
    assert doc["status"] == "ok" and doc["samples"] == len(log) and doc["total_violations"] == 0
    ids = {(r["id"], r["row"]) for r in doc["rows"]}
    assert ("d01", 1) in ids and ("ref0", 0) in ids
    assert doc["kappa"]["min"] <= doc["kappa"]["max"] and doc["h"] == cfg.h
