import copy
import math

import numpy as np
import pytest

from hacgrid import scenarios as sc
from hacgrid.backend import compiled_available
from hacgrid.errors import ConfigurationError, UsageError
from hacgrid.system import GFC_STATES, SM_STATES

from conftest import shipped


def two_bus_spec(g1="droop", g2="hac"):
    """Mirror-symmetric two-converter system around a load bus."""
    line = {"R": 5.29, "L": 0.143, "C_half": 5.3e-7}
    return {
        "schema": sc.SCHEMA,
        "network": {"inline": {
            "buses": [{"id": 1, "kind": "port"}, {"id": 2, "kind": "port"}, {"id": 4}, {"id": 5}, {"id": 6}],
            "lines": [{"from": 4, "to": 6, **line}, {"from": 5, "to": 6, **line},
                      {"from": 4, "to": 5, "R": 10.0, "L": 0.3, "C_half": 5.3e-7}],
            "transformers": [{"from": 1, "to": 4, "R": 1.058, "L": 0.168},
                             {"from": 2, "to": 5, "R": 1.058, "L": 0.168}]},
            "base_load_mw": {6: 100.0}},
        "generation": {1: {"type": "gfc", "strategy": g1}, 2: {"type": "gfc", "strategy": g2}},
        "events": [{"bus": 6, "delta_p_pu": 0.3, "t_s": 0.1}],
        "horizon_s": 0.6,
        "settle_s": 0.2,
        "observe": "all",
    }


@pytest.mark.parametrize("name, n_gfc, n_sm", [("iva_all_gfc_hac", 3, 0), ("ivd_lpf_sweep", 2, 1),
                                               ("ivc_hac", 1, 2)])
def test_layouts(name, n_gfc, n_sm):
    b = sc.build_system(shipped(name))
    s = b.system
    assert (len(s.gfcs), len(s.sms)) == (n_gfc, n_sm)
    n_net = 2 * (s.network.n_branch + s.network.n_bus)
    assert s.layout.size == n_gfc * len(GFC_STATES) + n_sm * len(SM_STATES) + n_net
    assert [u.bus for u in s.sms] == {0: [], 1: [1], 2: [1, 3]}[n_sm]


def test_layout_is_deterministic():
    a = sc.build_system(shipped("ivc_hac")).system.layout
    b = sc.build_system(shipped("ivc_hac")).system.layout
    assert [(i.device, i.name, i.offset) for i in a] == [(i.device, i.name, i.offset) for i in b]


def test_zero_event_run_is_nominal(tiny_spec):
    tiny_spec["events"] = []
    r = sc.run(tiny_spec)
    assert r.metrics.max_freq_deviation < 1e-6 * 2 * math.pi * 50
    assert r.metrics.stability_flag == "settled"


def test_pre_event_steady_state(tiny_spec):
    r = sc.run(tiny_spec)
    assert r.settle_residual < 1e-6
    t_ev = tiny_spec["events"][0]["t_s"]
    k = np.searchsorted(r.times, t_ev)
    for dev in ("gfc1", "gfc2", "gfc3"):
        assert abs(r.channels[(dev, "omega")][k] / (2 * math.pi * 50) - 1.0) < 1e-6


def test_channel_lengths_consistent(tiny_spec):
    r = sc.run(tiny_spec)
    assert all(len(v) == len(r.times) for v in r.channels.values())
    assert {"gfc1", "gfc2", "gfc3", "bus7"} <= set(r.devices)
    assert r.spec["horizon_s"] == 0.3


def test_permutation_symmetry():
    a = sc.run(two_bus_spec("droop", "hac"))
    b = sc.run(two_bus_spec("hac", "droop"))
    for k in ("max_freq_deviation", "rocof"):
        assert a.device_metrics["gfc1"][k] == pytest.approx(b.device_metrics["gfc2"][k], rel=1e-9)
        assert a.device_metrics["gfc2"][k] == pytest.approx(b.device_metrics["gfc1"][k], rel=1e-9)
    assert a.metrics.sharing_error == pytest.approx(b.metrics.sharing_error, rel=1e-9)
    assert a.metrics.stability_flag == b.metrics.stability_flag


def test_identical_units_share_equally():
    r = sc.run(two_bus_spec("hac", "hac"))
    assert r.metrics.sharing_error < 1e-9


@pytest.mark.skipif(not compiled_available(), reason="compiled kernel not built")
def test_backends_agree():
    spec = two_bus_spec()
    spec["horizon_s"] = 0.2
    a = sc.run(spec, backend="compiled")
    b = sc.run(spec, backend="python")
    for key, v in a.channels.items():
        assert np.allclose(v, b.channels[key], rtol=1e-9, atol=1e-9), key


@pytest.mark.parametrize("edit, where", [
    (lambda s: s["generation"][1].update(bogus=1), "bogus"),
    (lambda s: s["generation"][1].update(strategy="pll"), "strategy"),
    (lambda s: s["generation"][1].update(type="battery"), "type"),
    (lambda s: s["generation"].pop(3), "port buses"),
    (lambda s: s["generation"].update({7: {"type": "gfc"}}), "bus 7"),
    (lambda s: s["events"][0].update(bus=42), "events.0.bus"),
    (lambda s: s["events"][0].update(t_s=9.0), "events.0.t_s"),
    (lambda s: s.update(schema="other/1"), "schema"),
])
def test_configuration_errors_name_the_field(edit, where):
    s = shipped("iva_all_gfc_hac")
    edit(s)
    with pytest.raises(ConfigurationError, match=where):
        sc.run(s)


def test_malformed_yaml_reports_position(tmp_path):
    f = tmp_path / "bad.yaml"
    f.write_text("schema: hacgrid-scenario/1\ngeneration:\n  1: {type: gfc\n")
    with pytest.raises(ConfigurationError, match="line"):
        sc.load_scenario(f)


def test_sweep_grid_sizes():
    assert len(sc.grid_points(shipped("ivb_load_sweep")["sweep"])) == 15
    assert len(sc.grid_points(shipped("ivd_lpf_sweep")["sweep"])) == 6
    assert len(sc.grid_points(shipped("ive_pss_free")["sweep"])) == 4


def test_grid_order_first_dimension_slowest():
    pts = sc.grid_points([{"path": "a", "values": [1, 2]}, {"path": "b", "values": ["x", "y", "z"]}])
    assert [tuple(s.values()) for s, _ in pts] == [(1, "x"), (1, "y"), (1, "z"), (2, "x"), (2, "y"), (2, "z")]


def test_empty_grid_is_usage_error():
    with pytest.raises(UsageError):
        sc.grid_points([])
    with pytest.raises(UsageError):
        sc.grid_points([{"path": "a", "values": []}])
    with pytest.raises(UsageError):
        sc.sweep(two_bus_spec(), grid=[])


def test_set_path_rejects_missing_key():
    s = sc.resolve(two_bus_spec())
    sc.set_path(s, "generation.1.strategy", "matching")
    assert s["generation"][1]["strategy"] == "matching"
    with pytest.raises(UsageError):
        sc.set_path(s, "nothing.here", 1)


def test_sweep_records_failures_and_keeps_order():
    spec = two_bus_spec()
    spec["horizon_s"] = 0.2
    grid = [{"path": "generation.1.strategy", "values": ["hac", "pll", "droop"]}]
    pts = sc.sweep(spec, grid)
    assert [p.index for p in pts] == [0, 1, 2]
    assert pts[0].result is not None and pts[2].result is not None
    assert pts[1].result is None and "pll" in pts[1].error


def test_parallel_sweep_matches_serial():
    spec = two_bus_spec()
    spec["horizon_s"] = 0.3
    grid = [{"path": "events.0.delta_p_pu", "values": [0.1, 0.2]}]
    a = sc.sweep(spec, grid, workers=1)
    b = sc.sweep(spec, grid, workers=2)
    for p, q in zip(a, b):
        assert p.labels == q.labels
        assert p.result.metrics.as_dict() == q.result.metrics.as_dict()


def test_explicit_delta_r_overrides_flow():
    s = two_bus_spec("hac", "hac")
    s["generation"][1]["delta_r"] = 0.05
    b = sc.build_system(s)
    assert b.system.gfcs[0].control.strategy.delta_r == 0.05


def test_shipped_ivc_base_load_keeps_dc_margin():
    for name in ("ivc_droop", "ivc_matching", "ivc_hac"):
        margins = sc.post_event_dc_margin(shipped(name))
        assert all(0 < m < 1 for m in margins.values()), (name, margins)


def test_all_shipped_scenarios_build():
    for f in sorted(sc.SCENARIO_DIR.glob("iv*.yaml")):
        spec = sc.load_scenario(f)
        if "sweep" in spec:
            for sets, _ in sc.grid_points(spec["sweep"]):
                sc.build_system(sc.point_spec(spec, sets))
        else:
            sc.build_system(spec)
