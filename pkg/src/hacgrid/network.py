"""Dynamic RLC network: pi-section lines, series transformers, constant-impedance loads.

Every branch carries an inductor-current state in alpha-beta coordinates and
every dynamic bus a capacitor-voltage state. *Port* buses have no capacitor;
their voltage is imposed by the device attached to them (a converter filter
capacitor or a machine EMF), referred to the network voltage level.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

OMEGA_B = 2.0 * np.pi * 50.0
DATA_DIR = Path(__file__).parent / "data"
IEEE9_PATH = DATA_DIR / "ieee9.csv"


@dataclass(frozen=True)
class LineParams:
    from_bus: int
    to_bus: int
    R_line: float
    L_line: float
    C_half: float = 0.0

    def __post_init__(self):
        if self.R_line < 0 or not self.L_line > 0 or self.C_half < 0:
            raise ConfigurationError(f"invalid line parameters {self}")


@dataclass(frozen=True)
class TransformerParams:
    """Series leakage impedance referred to the network side; ``ratio`` = network/device voltage."""

    from_bus: int
    to_bus: int
    R: float
    L: float
    ratio: float = 1.0

    def __post_init__(self):
        if not self.L > 0 or self.R < 0 or not self.ratio > 0:
            raise ConfigurationError(f"invalid transformer parameters {self}")


@dataclass(frozen=True)
class LoadParams:
    bus: int
    G_load: float

    def __post_init__(self):
        if self.G_load < 0:
            raise ConfigurationError("load conductance must be non-negative")


@dataclass(frozen=True)
class BusData:
    id: int
    kind: str = "dynamic"  # or "port"
    C_extra: float = 0.0


@dataclass
class NetworkData:
    buses: List[BusData]
    lines: List[LineParams] = field(default_factory=list)
    transformers: List[TransformerParams] = field(default_factory=list)
    loads: List[LoadParams] = field(default_factory=list)
    v_nom: float = 230e3  # line-to-line rms
    S_base: float = 100e6

    def bus_ids(self):
        return [b.id for b in self.buses]

    def with_loads(self, loads: Sequence[LoadParams]) -> "NetworkData":
        return replace(self, loads=list(loads))

    @property
    def z_base(self) -> float:
        return self.v_nom**2 / self.S_base


@dataclass
class NetworkState:
    i_branch: np.ndarray  # (n_branch, 2)
    v_bus: np.ndarray  # (n_dynamic_bus, 2)

    def as_array(self):
        return np.concatenate([self.i_branch.ravel(), self.v_bus.ravel()])


class Network:
    """Indexed form of :class:`NetworkData` used by the right-hand side.

    Branch order: lines first, then transformers. Node order: dynamic buses
    first, then port buses.
    """

    def __init__(self, data: NetworkData, extra_C: Optional[Dict[int, float]] = None,
                 extra_series: Optional[Dict[int, tuple]] = None):
        self.data = data
        ids = data.bus_ids()
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate bus id")
        self.dynamic_ids = [b.id for b in data.buses if b.kind == "dynamic"]
        self.port_ids = [b.id for b in data.buses if b.kind == "port"]
        bad = [b.kind for b in data.buses if b.kind not in ("dynamic", "port")]
        if bad:
            raise ConfigurationError(f"unknown bus kind {bad[0]!r}")
        self.node_of = {bid: k for k, bid in enumerate(self.dynamic_ids + self.port_ids)}
        self.n_bus = len(self.dynamic_ids)
        self.n_port = len(self.port_ids)
        frm, to, R, L = [], [], [], []
        C = np.zeros(self.n_bus)
        for b in data.buses:
            if b.kind == "dynamic":
                C[self.node_of[b.id]] += b.C_extra
        branches = [(ln.from_bus, ln.to_bus, ln.R_line, ln.L_line, ln.C_half) for ln in data.lines]
        branches += [(t.from_bus, t.to_bus, t.R, t.L, 0.0) for t in data.transformers]
        extra_series = extra_series or {}
        for k, (f, t, r, l, ch) in enumerate(branches):
            for bid in (f, t):
                if bid not in self.node_of:
                    raise ConfigurationError(f"branch {f}-{t} references unknown bus {bid}")
            frm.append(self.node_of[f])
            to.append(self.node_of[t])
            r_add, l_add = 0.0, 0.0
            if k >= len(data.lines) and f in extra_series:
                r_add, l_add = extra_series[f]
            R.append(r + r_add)
            L.append(l + l_add)
            for bid in (f, t):
                n = self.node_of[bid]
                if n < self.n_bus:
                    C[n] += ch
        for bid, c in (extra_C or {}).items():
            C[self.node_of[bid]] += c
        self.branch_from = np.array(frm, dtype=np.int64)
        self.branch_to = np.array(to, dtype=np.int64)
        self.R = np.array(R, dtype=float)
        self.L = np.array(L, dtype=float)
        self.C = C
        if np.any(self.C <= 0):
            bid = self.dynamic_ids[int(np.flatnonzero(self.C <= 0)[0])]
            raise ConfigurationError(f"dynamic bus {bid} has no capacitance")
        self.G = np.zeros(self.n_bus)
        for ld in data.loads:
            if ld.bus not in self.node_of or self.node_of[ld.bus] >= self.n_bus:
                raise ConfigurationError(f"load at unknown or port bus {ld.bus}")
            self.G[self.node_of[ld.bus]] += ld.G_load
        self.n_line = len(data.lines)
        self.n_branch = len(branches)

    def transformer_branch(self, port_bus: int) -> int:
        """Branch index of the transformer whose device side is ``port_bus``."""
        for k, t in enumerate(self.data.transformers):
            if t.from_bus == port_bus:
                return self.n_line + k
        raise ConfigurationError(f"no transformer attached to bus {port_bus}")

    def transformer(self, port_bus: int) -> TransformerParams:
        return self.data.transformers[self.transformer_branch(port_bus) - self.n_line]

    def state_size(self) -> int:
        return 2 * (self.n_branch + self.n_bus)

    def unpack(self, x) -> NetworkState:
        x = np.asarray(x, dtype=float)
        nb = 2 * self.n_branch
        return NetworkState(x[:nb].reshape(-1, 2), x[nb:nb + 2 * self.n_bus].reshape(-1, 2))

    def zero_state(self) -> NetworkState:
        return NetworkState(np.zeros((self.n_branch, 2)), np.zeros((self.n_bus, 2)))


def network_rhs(state: NetworkState, injections, params: Network, port_voltages=None, G=None) -> NetworkState:
    """L di/dt = v_from - v_to - R i per branch; C dv/dt = sum of currents in - G v per bus.

    ``injections`` is an (n_dynamic_bus, 2) array of external currents into
    each dynamic bus; ``port_voltages`` an (n_port, 2) array.
    """
    G = params.G if G is None else G
    v_nodes = np.zeros((params.n_bus + params.n_port, 2))
    v_nodes[: params.n_bus] = state.v_bus
    if params.n_port:
        if port_voltages is None:
            raise ConfigurationError("port voltages required")
        v_nodes[params.n_bus:] = port_voltages
    i = state.i_branch
    di = (v_nodes[params.branch_from] - v_nodes[params.branch_to] - params.R[:, None] * i) / params.L[:, None]
    net = np.zeros_like(v_nodes)
    np.add.at(net, params.branch_to, i)
    np.subtract.at(net, params.branch_from, i)
    inj = np.zeros((params.n_bus, 2)) if injections is None else np.asarray(injections, dtype=float)
    dv = (net[: params.n_bus] + inj - G[:, None] * state.v_bus) / params.C[:, None]
    return NetworkState(di, dv)


def kirchhoff_residual(state: NetworkState, params: Network):
    """Sum over all nodes of the branch-current balance (zero by construction)."""
    net = np.zeros((params.n_bus + params.n_port, 2))
    np.add.at(net, params.branch_to, state.i_branch)
    np.subtract.at(net, params.branch_from, state.i_branch)
    return net.sum(axis=0)


@dataclass(frozen=True)
class LoadStep:
    bus: int
    delta_p: float  # W at nominal voltage
    t_event: float

    def delta_G(self, v_nom: float) -> float:
        return self.delta_p / v_nom**2


def apply_load_step(bus: int, delta_p: float, t_event: float, network: Network | None = None,
                    horizon: float | None = None) -> LoadStep:
    if network is not None:
        if bus not in network.node_of or network.node_of[bus] >= network.n_bus:
            raise ConfigurationError(f"load step at unknown bus {bus}")
    if horizon is not None and not (0.0 <= t_event <= horizon):
        raise ConfigurationError(f"event time {t_event} outside horizon {horizon}")
    return LoadStep(int(bus), float(delta_p), float(t_event))


def stepped_conductance(network: Network, steps: Sequence[LoadStep], t: float):
    """Bus conductances with every step whose time is <= t applied."""
    G = network.G.copy()
    for s in steps:
        if s.t_event <= t:
            G[network.node_of[s.bus]] += s.delta_G(network.data.v_nom)
    return G


# --- dataset ---------------------------------------------------------------

DATASET_FIELDS = [
    "record", "id", "from_bus", "to_bus", "kind", "r_pu", "x_pu", "b_pu", "p_mw",
    "R_ohm", "L_H", "C_half_F", "G_S",
]


def load_dataset(path=IEEE9_PATH) -> NetworkData:
    """Read the bus/line/transformer/load records of a network dataset file."""
    path = Path(path)
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for raw in fh:
            if raw.startswith("#"):
                body = raw[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            lines.append(raw)
        for row in csv.DictReader(lines):
            rows.append(row)
    v_nom = float(meta.get("v_nom_kv", 230.0)) * 1e3
    s_base = float(meta.get("s_base_mva", 100.0)) * 1e6
    buses, lines_, trafos, loads = [], [], [], []

    def f(row, key):
        return float(row[key]) if row[key] not in ("", None) else 0.0

    for row in rows:
        rec = row["record"]
        try:
            if rec == "bus":
                buses.append(BusData(int(row["id"]), row["kind"] or "dynamic"))
            elif rec == "line":
                lines_.append(LineParams(int(row["from_bus"]), int(row["to_bus"]),
                                         f(row, "R_ohm"), f(row, "L_H"), f(row, "C_half_F")))
            elif rec == "transformer":
                trafos.append(TransformerParams(int(row["from_bus"]), int(row["to_bus"]),
                                                f(row, "R_ohm"), f(row, "L_H")))
            elif rec == "load":
                loads.append(LoadParams(int(row["from_bus"]), f(row, "G_S")))
            else:
                raise ConfigurationError(f"unknown record type {rec!r}")
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"{path.name}: bad record {row}: {exc}") from exc
    data = NetworkData(buses, lines_, trafos, loads, v_nom=v_nom, S_base=s_base)
    Network(data)  # validates references
    return data


def load_mw(data: NetworkData) -> Dict[int, float]:
    return {ld.bus: ld.G_load * data.v_nom**2 / 1e6 for ld in data.loads}


def loads_from_mw(data: NetworkData, mw: Dict[int, float]) -> List[LoadParams]:
    return [LoadParams(int(b), float(p) * 1e6 / data.v_nom**2) for b, p in sorted(mw.items())]


# --- phasor steady state -----------------------------------------------------

def admittance_matrix(network: Network, omega=OMEGA_B, G=None, shunts: Optional[Dict[int, complex]] = None):
    """Nodal admittance (SI) of the network over all nodes (dynamic then port)."""
    n = network.n_bus + network.n_port
    Y = np.zeros((n, n), dtype=complex)
    G = network.G if G is None else G
    for k in range(network.n_branch):
        y = 1.0 / (network.R[k] + 1j * omega * network.L[k])
        a, b = network.branch_from[k], network.branch_to[k]
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y
    for k in range(network.n_bus):
        Y[k, k] += G[k] + 1j * omega * network.C[k]
    for bid, y in (shunts or {}).items():
        Y[network.node_of[bid], network.node_of[bid]] += y
    return Y
