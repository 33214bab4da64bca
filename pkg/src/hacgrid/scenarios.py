"""Scenario description, system assembly, event runs and parameter sweeps.

A scenario is a nested mapping (normally read from a YAML file, schema in
``docs/formats.md``). :func:`build_system` wires the devices onto the
network and computes the initial equilibrium, :func:`run` settles it, applies
the load steps and evaluates the metrics, and :func:`sweep` repeats runs over
a grid of parameter overrides.
"""
from __future__ import annotations

import copy
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from . import metrics as mt
from .backend import make_model
from .controls import ETA_REF, HAC, OMEGA_0, ControlConfig, Droop, InverseDroop, Matching
from .converter import REFERENCE_MODULE, ConverterParams, aggregate
from .errors import ConfigurationError, UsageError
from .machine import MachineParams, PSSParams
from .network import (DATA_DIR, IEEE9_PATH, BusData, LineParams, NetworkData, TransformerParams,
                      load_dataset, load_mw, loads_from_mw)
from .numerics import SimulationError
from .powerflow import initial_state, solve_power_flow
from .system import AssembledSystem, GFCUnit, SMUnit

log = logging.getLogger(__name__)

SCHEMA = "hacgrid-scenario/1"
SCENARIO_DIR = DATA_DIR / "scenarios"

DEFAULTS: Dict[str, Any] = {
    "network": {"dataset": "ieee9", "load_scale": 1.0},
    "events": [],
    "horizon_s": 5.0,
    "settle_s": 2.0,
    "settle_tol": 1e-6,
    "integrator": {"h_s": 20e-6, "record_every": 50},
    "pss_enabled": True,
    "observe": "auto",
    "metrics": {"rocof_window_s": 0.15, "settle_band": 0.02},
}

GFC_KEYS = {
    "type", "strategy", "omega_f_hz", "droop_pct", "eta", "gamma_dc", "gamma_dc_per_eta", "gamma_ac",
    "delta_r", "measured", "filter_abc", "kappa_dc", "kappa_p", "kappa_i", "dc_feedforward",
    "fixed_mu", "n_modules", "module", "augmentation",
}
SM_KEYS = {"type", "H", "D", "d_p", "tau_g", "S_rated", "v_rated", "x_d", "x_dp", "x_q", "T_d0p", "r_s",
           "k_a", "T_a", "pss", "v_terminal"}
MODULE_KEYS = {"G_dc", "C_dc", "R", "L", "C", "tau_dc", "i_dc_max", "v_dc_r", "S_rated", "v_ll_rated"}

# AVR and PSS values are not given by the reference data; these are documented defaults.
SM_DEFAULTS = {"k_a": 20.0, "T_a": 0.05}
PSS_DEFAULTS = {"T_w": 10.0, "T1": 0.5, "T2": 0.05, "k_pss": 10.0}


def load_scenario(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc}") from exc
    try:
        spec = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigurationError(f"{path.name}: malformed YAML{where}: {exc}") from exc
    if not isinstance(spec, dict):
        raise ConfigurationError(f"{path.name}: top level must be a mapping")
    return spec


def shipped_scenario(name: str) -> Path:
    p = SCENARIO_DIR / (name if name.endswith(".yaml") else name + ".yaml")
    if not p.exists():
        raise ConfigurationError(f"no shipped scenario {name!r}")
    return p


def _merge(base, over):
    if isinstance(base, dict) and isinstance(over, dict):
        out = dict(base)
        for k, v in over.items():
            out[k] = _merge(base.get(k), v) if k in base else copy.deepcopy(v)
        return out
    return copy.deepcopy(over)


def resolve(spec: Dict[str, Any]) -> Dict[str, Any]:
    """Spec with defaults filled in and generation keys normalised to ints."""
    if spec.get("schema", SCHEMA) != SCHEMA:
        raise ConfigurationError(f"schema: expected {SCHEMA!r}, got {spec.get('schema')!r}")
    out = _merge(DEFAULTS, {k: v for k, v in spec.items() if k != "sweep"})
    out["schema"] = SCHEMA
    gen = spec.get("generation")
    if not isinstance(gen, dict) or not gen:
        raise ConfigurationError("generation: mapping of bus -> device is required")
    try:
        out["generation"] = {int(k): dict(v) for k, v in gen.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"generation: bad entry ({exc})") from exc
    if "sweep" in spec:
        out["sweep"] = copy.deepcopy(spec["sweep"])
    return out


# --- building -------------------------------------------------------------------

def _network(spec) -> NetworkData:
    net = spec["network"]
    if "inline" in net:
        data = _inline_network(net["inline"])
    else:
        name = net.get("dataset", "ieee9")
        path = IEEE9_PATH if name == "ieee9" else Path(name)
        data = load_dataset(path)
    if "base_load_mw" in net:
        mw = {int(k): float(v) for k, v in net["base_load_mw"].items()}
    else:
        mw = {b: float(net.get("load_scale", 1.0)) * p for b, p in load_mw(data).items()}
    return data.with_loads(loads_from_mw(data, mw))


def _inline_network(d) -> NetworkData:
    try:
        buses = [BusData(int(b["id"]), b.get("kind", "dynamic"), float(b.get("C", 0.0))) for b in d["buses"]]
        lines = [LineParams(int(x["from"]), int(x["to"]), float(x["R"]), float(x["L"]), float(x.get("C_half", 0.0)))
                 for x in d.get("lines", [])]
        trafos = [TransformerParams(int(x["from"]), int(x["to"]), float(x["R"]), float(x["L"]))
                  for x in d.get("transformers", [])]
        return NetworkData(buses, lines, trafos, [], v_nom=float(d.get("v_nom_kv", 230.0)) * 1e3,
                           S_base=float(d.get("s_base_mva", 100.0)) * 1e6)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"network.inline: {exc}") from exc


def _check_keys(where, d, allowed):
    bad = sorted(set(d) - allowed)
    if bad:
        raise ConfigurationError(f"{where}: unknown field(s) {', '.join(bad)}")


def _hz(v):
    return None if v is None else 2.0 * math.pi * float(v)


def gfc_unit(bus: int, d: Dict[str, Any]) -> GFCUnit:
    where = f"generation.{bus}"
    _check_keys(where, d, GFC_KEYS)
    mod = dict(d.get("module", {}))
    _check_keys(where + ".module", mod, MODULE_KEYS)
    try:
        module = replace(REFERENCE_MODULE, **{k: float(v) for k, v in mod.items()})
        params = aggregate(module, int(d.get("n_modules", 200)))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    name = d.get("strategy", "hac")
    eta = float(d.get("eta", ETA_REF))
    try:
        if name == "droop":
            strat = Droop(d_p_omega=float(d.get("droop_pct", 1.0)) / 100.0 * OMEGA_0,
                          omega_f=_hz(d.get("omega_f_hz", 5.0)))
        elif name == "matching":
            strat = Matching(eta=eta, omega_f=_hz(d.get("omega_f_hz")))
        elif name == "hac":
            g_dc = float(d["gamma_dc"]) if "gamma_dc" in d else float(d.get("gamma_dc_per_eta", 0.01)) * eta
            dr = d.get("delta_r", "init")
            strat = HAC(gamma_dc=g_dc, gamma_ac=float(d.get("gamma_ac", 205.0)),
                        delta_r=0.0238 if dr == "init" else float(dr),
                        omega_f=_hz(d.get("omega_f_hz", 5.0)),
                        use_measured_implementation=bool(d.get("measured", True)),
                        filter_abc=bool(d.get("filter_abc", False)))
        else:
            raise ConfigurationError(f"{where}.strategy: unknown strategy {name!r}")
        aug = None
        if d.get("augmentation"):
            a = dict(d["augmentation"])
            _check_keys(where + ".augmentation", a, {"kappa_p_delta", "d_omega_p", "p_star"})
            aug = InverseDroop(**{k: float(v) for k, v in a.items()})
        cfg = ControlConfig(
            strategy=strat,
            v_r=params.v_base,
            v_dc_r=params.v_dc_r,
            kappa_dc=float(d.get("kappa_dc", 1.6e3)),
            kappa_p=float(d.get("kappa_p", 0.001)),
            kappa_i=float(d.get("kappa_i", 0.5)),
            dc_feedforward=bool(d.get("dc_feedforward", True)),
            fixed_mu=0.0 if d.get("fixed_mu") else None,
            augmentation=aug,
        )
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    return GFCUnit(bus, params, cfg)


def sm_unit(bus: int, d: Dict[str, Any], pss_enabled: bool) -> Tuple[SMUnit, float]:
    where = f"generation.{bus}"
    _check_keys(where, d, SM_KEYS)
    kw = {**SM_DEFAULTS, **{k: float(v) for k, v in d.items() if k not in ("type", "pss", "v_terminal")}}
    pss = {**PSS_DEFAULTS, "enabled": pss_enabled}
    if "pss" in d:
        _check_keys(where + ".pss", d["pss"], {"enabled", "T_w", "T1", "T2", "k_pss"})
        pss.update(d["pss"])
    try:
        params = MachineParams(pss=PSSParams(**pss), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    return SMUnit(bus, params), float(d.get("v_terminal", 1.0))


@dataclass
class BuiltSystem:
    system: AssembledSystem
    x0: np.ndarray
    spec: Dict[str, Any]
    power_flow: Any


def build_system(spec: Dict[str, Any]) -> BuiltSystem:
    spec = resolve(spec)
    data = _network(spec)
    units, v_sm = [], []
    for bus, d in sorted(spec["generation"].items()):
        kind = d.get("type")
        if kind == "gfc":
            units.append(gfc_unit(bus, d))
        elif kind == "sm":
            u, v = sm_unit(bus, d, bool(spec["pss_enabled"]))
            units.append(u)
            v_sm.append(v)
        else:
            raise ConfigurationError(f"generation.{bus}.type: expected 'gfc' or 'sm', got {kind!r}")
    system = AssembledSystem(data, units)
    if len(set(v_sm)) > 1:
        raise ConfigurationError("machines must share one terminal voltage set-point")
    pf = solve_power_flow(system, v_sm=v_sm[0] if v_sm else 1.0)
    if not pf.converged:
        raise ConfigurationError(f"power flow did not converge (residual {pf.residual:.3g})")
    from_flow = {u.bus: spec["generation"][u.bus].get("delta_r", "init") == "init"
                 for u in system.gfcs}
    x0 = initial_state(system, pf, hac_delta_r_from_flow=True)
    # converters with an explicit delta_r keep it (the equilibrium then shifts)
    for u in system.gfcs:
        if isinstance(u.control.strategy, HAC) and not from_flow[u.bus]:
            dr = float(spec["generation"][u.bus]["delta_r"])
            u.control = u.control.with_strategy(delta_r=dr)
            x0[system.layout[(u.name, "delta_r")].offset] = dr
    system.refresh()
    return BuiltSystem(system, x0, spec, pf)


def post_event_dc_margin(spec: Dict[str, Any]) -> Dict[str, float]:
    """Steady dc source current over its limit for each converter once all events have applied.

    Values below 1 mean the new equal-sharing operating point is feasible
    without saturating the dc source.
    """
    spec = resolve(spec)
    post = copy.deepcopy(spec)
    data = _network(spec)
    mw = load_mw(data)
    for e in spec["events"]:
        b = int(e["bus"])
        mw[b] = mw.get(b, 0.0) + float(e["delta_p_pu"]) * data.S_base / 1e6
    post["network"] = {k: v for k, v in spec["network"].items() if k != "load_scale"}
    post["network"]["base_load_mw"] = mw
    built = build_system(post)
    out = {}
    for u in built.system.gfcs:
        p = u.params
        i_dc = built.x0[built.system.layout[(u.name, "i_dc")].offset]
        out[u.name] = float(i_dc / p.i_dc_limit)
    return out


# --- running -------------------------------------------------------------------

class InitializationError(RuntimeError):
    def __init__(self, residual: float, breakdown: Dict[str, float]):
        self.residual = residual
        self.breakdown = breakdown
        parts = ", ".join(f"{k}={v:.3g}" for k, v in breakdown.items())
        super().__init__(f"pre-event settling residual {residual:.3g} exceeds tolerance ({parts})")


@dataclass
class SimResult:
    times: np.ndarray
    channels: Dict[Tuple[str, str], np.ndarray]
    metrics: mt.MetricsReport
    device_metrics: Dict[str, Dict[str, float]]
    spec: Dict[str, Any]
    settle_residual: float
    failure: Optional[str] = None
    wall_time: float = 0.0

    @property
    def devices(self) -> List[str]:
        seen = []
        for d, _ in self.channels:
            if d not in seen:
                seen.append(d)
        return seen


def _integrate(model, x, t0, h, n, rec):
    tt, X, ft, bad = model.integrate(x, t0, h, n, rec)
    return tt, X, (ft, bad) if bad >= 0 else None


def _frequency_residual(system, model, x) -> Dict[str, float]:
    out = model.outputs(x[None])[0]
    names = [u.name for u in system.gfcs + system.sms]
    return {n: abs(out[k, 0] - OMEGA_0) / OMEGA_0 for k, n in enumerate(names)}


def run(spec: Dict[str, Any], backend: Optional[str] = None, h: Optional[float] = None,
        horizon: Optional[float] = None, record_every: Optional[int] = None) -> SimResult:
    import time as _time

    wall = _time.perf_counter()
    built = build_system(spec)
    spec = built.spec
    if h is not None:
        spec["integrator"]["h_s"] = float(h)
    if horizon is not None:
        spec["horizon_s"] = float(horizon)
    if record_every is not None:
        spec["integrator"]["record_every"] = int(record_every)
    system = built.system
    h = float(spec["integrator"]["h_s"])
    rec = int(spec["integrator"]["record_every"])
    T = float(spec["horizon_s"])
    if not (h > 0 and T > 0 and rec >= 1):
        raise ConfigurationError("integrator.h_s, horizon_s must be positive and record_every >= 1")
    events = sorted(_events(spec, system, T), key=lambda e: e[0])
    model = make_model(system, backend)
    x = built.x0
    # settling with events disabled
    residual = 0.0
    n_settle = int(round(float(spec["settle_s"]) / h))
    if n_settle > 0:
        _, Xs, fail = _integrate(model, x, -n_settle * h, h, n_settle, n_settle)
        if fail is not None:
            raise InitializationError(math.inf, {"failed_at": fail[0]})
        x = Xs[-1]
    breakdown = _frequency_residual(system, model, x)
    residual = max(breakdown.values())
    if residual > float(spec["settle_tol"]):
        raise InitializationError(residual, breakdown)
    # event segments
    G = system.network.G.copy()
    bounds = [0.0] + [e[0] for e in events] + [T]
    steps = [int(round(b / h)) for b in bounds]
    times, samples, failure = [], [], None
    for k in range(len(steps) - 1):
        if k > 0:
            t_ev, node, dG = events[k - 1]
            G[node] += dG
        model.set_conductance(G)
        n = steps[k + 1] - steps[k]
        if n <= 0:
            continue
        tt, X, fail = _integrate(model, x, steps[k] * h, h, n, rec)
        if times:
            tt, X = tt[1:], X[1:]
        times.append(tt)
        samples.append(X)
        if fail is not None:
            info = system.layout.locate(fail[1])
            failure = str(SimulationError(fail[0], info.device, info.name, fail[1]))
            break
        x = X[-1] if len(X) else x
    tt = np.concatenate(times)
    X = np.concatenate(samples)
    channels = collect_channels(system, model, X)
    report, dev = evaluate_metrics(spec, system, tt, channels, events, failure is not None)
    return SimResult(tt, channels, report, dev, spec, residual, failure, _time.perf_counter() - wall)


def _events(spec, system, T):
    out = []
    net = system.network
    for k, e in enumerate(spec["events"]):
        try:
            bus = int(e["bus"])
            dp = float(e["delta_p_pu"]) * net.data.S_base
            t = float(e.get("t_s", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"events.{k}: {exc}") from exc
        if bus not in net.node_of or net.node_of[bus] >= net.n_bus:
            raise ConfigurationError(f"events.{k}.bus: {bus} is not a load-capable bus")
        if not 0.0 <= t < T:
            raise ConfigurationError(f"events.{k}.t_s: {t} outside [0, horizon)")
        out.append((t, net.node_of[bus], dp / net.data.v_nom**2))
    return out


def collect_channels(system: AssembledSystem, model, X) -> Dict[Tuple[str, str], np.ndarray]:
    out = model.outputs(X)
    ch: Dict[Tuple[str, str], np.ndarray] = {}
    for k, u in enumerate(system.gfcs):
        o = out[:, k]
        ch[(u.name, "omega")] = o[:, 0]
        ch[(u.name, "p")] = o[:, 1]
        ch[(u.name, "v_dc")] = X[:, system.layout[(u.name, "v_dc")].offset]
        ch[(u.name, "i_dc")] = X[:, system.layout[(u.name, "i_dc")].offset]
        ch[(u.name, "v_mag")] = o[:, 7] / u.control.v_r
        ch[(u.name, "mu")] = o[:, 2]
        ch[(u.name, "p_dc_stage")] = o[:, 4]
        ch[(u.name, "p_ac_stage")] = o[:, 5]
    for j, u in enumerate(system.sms):
        o = out[:, len(system.gfcs) + j]
        ch[(u.name, "omega")] = o[:, 0]
        ch[(u.name, "p")] = o[:, 1]
        ch[(u.name, "v_t")] = o[:, 2]
        ch[(u.name, "e_f")] = o[:, 3]
        ch[(u.name, "p_m")] = o[:, 4]
    for j, bid in enumerate(system.network.dynamic_ids):
        off = system.bus_offset + 2 * j
        ch[(f"bus{bid}", "v_mag")] = np.hypot(X[:, off], X[:, off + 1]) / system.v_base
    return ch


def evaluate_metrics(spec, system, t, ch, events, failed):
    units = [u.name for u in system.gfcs + system.sms]
    obs = spec.get("observe", "auto")
    if obs == "auto":
        observed = [system.sms[0].name] if system.sms else [u.name for u in system.gfcs]
    elif obs == "all":
        observed = units
    else:
        observed = [o for o in (obs if isinstance(obs, list) else [obs])]
        for o in observed:
            if o not in units:
                raise ConfigurationError(f"observe: unknown device {o!r}")
    t_ev = events[0][0] if events else 0.0
    m = spec["metrics"]
    win = float(m.get("rocof_window_s", 0.15))
    dev = {}
    for name in units:
        w = ch[(name, "omega")]
        try:
            r = mt.rocof(t, w, t_ev, win)
        except ValueError:
            r = math.nan
        dev[name] = {
            "max_freq_deviation": mt.max_frequency_deviation(t, w, OMEGA_0, t_ev),
            "rocof": r,
        }
    omegas = {n: ch[(n, "omega")] for n in units}
    vdcs = {u.name: ch[(u.name, "v_dc")] for u in system.gfcs}
    v_dc_r = system.gfcs[0].control.v_dc_r if system.gfcs else 1.0
    flag = mt.classify_stability(t, omegas, vdcs, v_dc_r, OMEGA_0, finite=not failed)
    try:
        st = mt.settling_time(t, [omegas[n] for n in units], t_ev, float(m.get("settle_band", 0.02)))
    except ValueError:
        st = math.nan
    share = mt.sharing_error(t, {n: ch[(n, "p")] for n in units}) if len(units) > 1 else 0.0
    report = mt.MetricsReport(
        max_freq_deviation=max(dev[n]["max_freq_deviation"] for n in observed),
        rocof=max(dev[n]["rocof"] for n in observed),
        rocof_window=win,
        rocof_anchor=t_ev,
        settling_time=st,
        sharing_error=share,
        stability_flag=flag,
        observed="+".join(observed),
    )
    return report, dev


# --- sweeps --------------------------------------------------------------------

def set_path(spec: Dict[str, Any], path: str, value):
    parts = path.split(".")
    node = spec
    for k, p in enumerate(parts[:-1]):
        key = _key(node, p)
        if isinstance(node, list):
            node = node[key]
        else:
            if key not in node:
                raise UsageError(f"sweep path {path!r}: {'.'.join(parts[:k + 1])} does not exist")
            node = node[key]
    last = _key(node, parts[-1])
    node[last] = copy.deepcopy(value)


def _key(node, p):
    if isinstance(node, list):
        return int(p)
    if isinstance(node, dict) and p.lstrip("-").isdigit() and int(p) in node:
        return int(p)
    return p


def grid_points(grid) -> List[Tuple[Dict[str, Any], List[Tuple[str, Any]]]]:
    """Cartesian product of the sweep dimensions, first dimension varying slowest."""
    if not grid:
        raise UsageError("sweep grid is empty")
    dims = []
    for k, d in enumerate(grid):
        try:
            paths = d["paths"] if "paths" in d else [d["path"]]
            values = list(d["values"])
        except (KeyError, TypeError) as exc:
            raise UsageError(f"sweep.{k}: needs 'path' or 'paths' and 'values'") from exc
        if not values:
            raise UsageError(f"sweep.{k}: no values")
        dims.append((d.get("label", paths[0]), paths, values))
    out = []
    for combo in itertools.product(*[range(len(d[2])) for d in dims]):
        labels = [(dims[i][0], dims[i][2][j]) for i, j in enumerate(combo)]
        sets = [(p, dims[i][2][j]) for i, j in enumerate(combo) for p in dims[i][1]]
        out.append((dict(sets), labels))
    return out


@dataclass
class SweepPoint:
    index: int
    labels: List[Tuple[str, Any]]
    result: Optional[SimResult] = None
    error: Optional[str] = None


def point_spec(spec: Dict[str, Any], sets: Dict[str, Any]) -> Dict[str, Any]:
    s = resolve(spec)
    s.pop("sweep", None)
    for path, value in sets.items():
        set_path(s, path, value)
    return s


def _run_point(args):
    i, s, labels, backend = args
    try:
        return SweepPoint(i, labels, run(s, backend=backend))
    except (ConfigurationError, InitializationError, SimulationError, ValueError) as exc:
        return SweepPoint(i, labels, error=f"{type(exc).__name__}: {exc}")


def sweep(spec: Dict[str, Any], grid=None, workers: int = 1, backend: Optional[str] = None) -> List[SweepPoint]:
    grid = spec.get("sweep") if grid is None else grid
    jobs = [(i, point_spec(spec, sets), labels, backend) for i, (sets, labels) in enumerate(grid_points(grid))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pts = list(pool.map(_run_point, jobs))
    else:
        pts = [_run_point(j) for j in jobs]
    return sorted(pts, key=lambda p: p.index)
