import json
import math
import os

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from hacgrid import io
from hacgrid import scenarios as sc
from hacgrid.cli import main

SCEN = sc.SCENARIO_DIR


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


@pytest.fixture
def tiny_file(tmp_path, tiny_spec):
    return write_yaml(tmp_path / "tiny.yaml", tiny_spec)


floats = st.floats(allow_nan=True, allow_infinity=True, width=64)


@given(st.lists(floats, min_size=1, max_size=20))
@settings(max_examples=50, deadline=None)
def test_trajectory_round_trip_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    n = len(values)
    times = np.arange(n) * 0.1 + 1e-7
    ch = {("gfc1", "omega"): np.array(values), ("bus7", "v_mag"): np.array(values[::-1])}
    io.write_trajectories(path, times, ch)
    t2, ch2 = io.read_trajectories(path)
    assert np.array_equal(times, t2)
    for k, v in ch.items():
        assert np.array_equal(v, ch2[k], equal_nan=True)
        ok = ~np.isnan(v)
        assert np.array_equal(np.signbit(v[ok]), np.signbit(ch2[k][ok]))


def test_trajectory_golden(tmp_path):
    p = io.write_trajectories(tmp_path / "t.csv", np.array([0.0, 2e-5]),
                              {("gfc1", "omega"): np.array([314.1592653589793, 314.0]),
                               ("sm1", "p"): np.array([0.5, -1e-300])})
    assert p.read_text() == ("t_s,device_id,channel,value\n"
                             "0.0,gfc1,omega,314.1592653589793\n"
                             "0.0,sm1,p,0.5\n"
                             "2e-05,gfc1,omega,314.0\n"
                             "2e-05,sm1,p,-1e-300\n")


def test_table_and_metrics_golden(tmp_path):
    p = io.write_table(tmp_path / "s.csv", ["index", "flag", "value", "ok", "error"],
                       [[0, "settled", 0.1, True, None], [1, "diverged", math.inf, False, "x"]])
    assert p.read_text() == "index,flag,value,ok,error\n0,settled,0.1,true,\n1,diverged,inf,false,x\n"
    from hacgrid.metrics import MetricsReport
    rep = MetricsReport(0.5, 1.0, 0.15, 0.5, 0.25, 0.0, "settled", "gfc1")
    m = io.write_metrics(tmp_path / "m.csv", rep, {"gfc1": {"rocof": 2.0}})
    assert m.read_text().splitlines()[:3] == ["device_id,metric,value", "system,max_freq_deviation,0.5",
                                              "system,rocof,1.0"]
    assert io.read_metrics(m)[("gfc1", "rocof")] == "2.0"


def test_fmt():
    assert [io.fmt(v) for v in (None, True, 3, np.int64(4), 0.1, -math.inf, math.nan, "a")] == \
        ["", "true", "3", "4", "0.1", "-inf", "nan", "a"]


def test_config_hash_depends_only_on_bytes():
    assert io.config_hash(b"a: 1\n") == io.config_hash(b"a: 1\n")
    assert io.config_hash(b"a: 1\n") != io.config_hash(b"a: 1 \n")
    assert io.config_hash(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_simulate_outputs_and_manifest(tmp_path, tiny_file):
    out = tmp_path / "out"
    assert main(["simulate", str(tiny_file), "--out", str(out)]) == 0
    t, ch = io.read_trajectories(out / "trajectories.csv")
    assert {d for d, c in ch if c == "omega"} == {"gfc1", "gfc2", "gfc3"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate"
    assert man["config_sha256"] == io.sha256_file(tiny_file)
    assert {o["file"] for o in man["outputs"]} == {"trajectories.csv", "metrics.csv"}
    for o in man["outputs"]:
        assert io.sha256_file(out / o["file"]) == o["sha256"]
    assert man["wall_time_s"] > 0


def test_simulate_is_byte_deterministic(tmp_path, tiny_file):
    for d in ("a", "b"):
        assert main(["simulate", str(tiny_file), "--out", str(tmp_path / d)]) == 0
    for f in ("trajectories.csv", "metrics.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_overrides(tmp_path, tiny_file, monkeypatch):
    monkeypatch.setenv("HACGRID_RECORD_EVERY", "500")
    assert main(["simulate", str(tiny_file), "--out", str(tmp_path), "--horizon", "0.2", "--h", "2e-5"]) == 0
    t, _ = io.read_trajectories(tmp_path / "trajectories.csv")
    assert t[-1] == pytest.approx(0.2) and np.allclose(np.diff(t)[:-1], 0.01)


def test_bad_record_override(tmp_path, tiny_file, monkeypatch):
    monkeypatch.setenv("HACGRID_RECORD_EVERY", "zero")
    assert main(["simulate", str(tiny_file), "--out", str(tmp_path)]) == 1


def test_simulate_instability_exit_code(tmp_path):
    out = tmp_path / "droop"
    assert main(["simulate", str(SCEN / "ivc_droop.yaml"), "--out", str(out), "--horizon", "3"]) == 2
    t, ch = io.read_trajectories(out / "trajectories.csv")
    assert t[-1] > 2.9 and ("gfc2", "v_dc") in ch
    assert io.read_metrics(out / "metrics.csv")[("system", "stability_flag")] == "diverged"


def test_usage_and_config_errors(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("generation: [1, 2\n")
    assert main(["simulate", str(bad), "--out", str(tmp_path)]) == 1
    assert "line" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


def test_sweep_summary_rows(tmp_path, tiny_spec):
    tiny_spec["sweep"] = [{"path": "events.0.delta_p_pu", "label": "delta_p_pu", "values": [0.3]}]
    f = write_yaml(tmp_path / "one.yaml", tiny_spec)
    assert main(["sweep", str(f), "--out", str(tmp_path / "o")]) == 0
    rows = io.read_table(tmp_path / "o" / "summary.csv")
    assert len(rows) == 1 and rows[0]["delta_p_pu"] == "0.3" and rows[0]["status"] == "ok"
    assert (tmp_path / "o" / "point_000" / "trajectories.csv").exists()


@pytest.mark.parametrize("name, n", [("ivb_load_sweep", 15), ("ivd_lpf_sweep", 6)])
def test_shipped_sweep_row_counts(tmp_path, name, n, monkeypatch):
    spec = sc.load_scenario(SCEN / f"{name}.yaml")
    spec["horizon_s"] = 0.2
    spec["settle_s"] = 0.0
    spec["events"][0]["t_s"] = 0.05
    f = write_yaml(tmp_path / "s.yaml", spec)
    monkeypatch.setenv("HACGRID_RECORD_EVERY", "1000")
    assert main(["sweep", str(f), "--out", str(tmp_path / "o")]) == 0
    assert len(io.read_table(tmp_path / "o" / "summary.csv")) == n


def test_sweep_without_grid_is_usage_error(tmp_path, tiny_file):
    assert main(["sweep", str(tiny_file), "--out", str(tmp_path)]) == 1


def test_sweep_all_points_failed(tmp_path, tiny_spec):
    tiny_spec["sweep"] = [{"path": "generation.1.strategy", "values": ["pll"]}]
    f = write_yaml(tmp_path / "f.yaml", tiny_spec)
    assert main(["sweep", str(f), "--out", str(tmp_path / "o")]) == 2
    assert io.read_table(tmp_path / "o" / "summary.csv")[0]["status"] == "failed"


def _two_conv(tmp_path, **changes):
    spec = yaml.safe_load((SCEN / "two_converter.yaml").read_text())
    spec.update(changes)
    return write_yaml(tmp_path / "2c.yaml", spec)


def test_analyze2c_passing(tmp_path):
    assert main(["analyze2c", str(SCEN / "two_converter.yaml"), "--out", str(tmp_path)]) == 0
    rows = io.read_table(tmp_path / "certification.csv")
    assert len(rows) == 54 and all(r["monotone"] == "true" for r in rows)
    thr = {r["gain"]: r for r in io.read_table(tmp_path / "thresholds.csv")}
    assert thr["gamma_ac_sum"]["found"] == "true" and float(thr["gamma_ac_sum"]["estimate"]) < 8200.0
    assert "certified: true" in (tmp_path / "report.txt").read_text()


def test_analyze2c_zero_ac_gain(tmp_path):
    f = _two_conv(tmp_path, converters=[{"mu": 0.34, "gamma_ac": 0.0}, {"mu": 0.335, "gamma_ac": 0.0}])
    assert main(["analyze2c", str(f), "--out", str(tmp_path / "o"), "--skip-thresholds"]) == 3


def test_analyze2c_thresholds_not_found(tmp_path):
    f = _two_conv(tmp_path, thresholds={"gamma_ac_sum": [1.0, 2.0], "kappa_dc": [1.0, 2.0]})
    assert main(["analyze2c", str(f), "--out", str(tmp_path / "o")]) == 3
    assert "not-found" in (tmp_path / "o" / "report.txt").read_text()


def test_analyze2c_equilibrium_only_grid(tmp_path):
    f = _two_conv(tmp_path, converters=[{"mu": 0.34, "gamma_ac": 1.0}, {"mu": 0.335, "gamma_ac": 1.0}],
                  grid={"angle_errors": [0.0], "dc_errors_pu": [0.0]})
    assert main(["analyze2c", str(f), "--out", str(tmp_path / "o"), "--skip-thresholds"]) == 0


def test_list_shipped(capsys):
    assert main(["list"]) == 0
    assert "iva_all_gfc_hac.yaml" in capsys.readouterr().out
