"""Radial three-phase network model and nodal admittance assembly.

Buses are numbered 1..n and lines 1..m. Phase quantities are ordered
(bus, phase) with phases a, b, c, so bus ``i`` occupies rows
``3*(i-1) .. 3*(i-1)+2`` of the admittance matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainError, SingularLineError, TopologyError

CLOSED = "closed"
OPEN = "normally_open"
FORMAT = "gridfault-net/1"

ALPHA = np.exp(2j * np.pi / 3)
# V_abc = FORTESCUE @ V_012
FORTESCUE = np.array([[1, 1, 1], [1, ALPHA**2, ALPHA], [1, ALPHA, ALPHA**2]])
FORTESCUE_INV = FORTESCUE.conj() / 3.0
ONES3 = np.ones((3, 3))
PHASES = "abc"


def sequence_to_phase(y0, y1, y2=None):
    """Map sequence admittances (or impedances) to the 3x3 phase-domain block."""
    if y2 is None:
        y2 = y1
    return FORTESCUE @ np.diag([y0, y1, y2]).astype(complex) @ FORTESCUE_INV


def balanced(phasor_a):
    """Positive-sequence three-phase set with phase a equal to ``phasor_a``."""
    return phasor_a * np.array([1.0, ALPHA**2, ALPHA])


@dataclass(frozen=True)
class Base:
    sbase: float = 1e6
    vbase: float = 10e3
    frequency: float = 50.0

    @property
    def vphase(self):
        """Nominal phase-to-ground voltage magnitude."""
        return self.vbase / np.sqrt(3.0)


@dataclass(frozen=True)
class Grounding:
    """Neutral earthing element at a bus.

    ``impedance`` is the zero-sequence impedance of the earthing path, so the
    shunt block is ``J / (3 * impedance)``. A Petersen coil of reactance X
    therefore contributes ``J / (3jX)``.
    """

    kind: str = "none"
    impedance: complex = 0j

    def __post_init__(self):
        if self.kind not in ("none", "solid", "petersen"):
            raise DomainError(f"unknown grounding kind {self.kind!r}")
        if self.kind != "none" and abs(self.impedance) == 0:
            raise SingularLineError(f"{self.kind} grounding needs a nonzero impedance")

    @classmethod
    def solid(cls, impedance=1e-3 + 0j):
        return cls("solid", complex(impedance))

    @classmethod
    def petersen(cls, reactance, resistance=0.0):
        return cls("petersen", complex(resistance, reactance))

    @property
    def reactance(self):
        return self.impedance.imag

    def shunt_block(self):
        if self.kind == "none":
            return np.zeros((3, 3), complex)
        return ONES3 / (3.0 * self.impedance)


@dataclass(frozen=True)
class Source:
    """Ideal voltage source behind sequence impedances, used as a Norton equivalent.

    ``z0 = None`` means the source offers no zero-sequence path (delta or
    unearthed winding on the network side).
    """

    voltage: complex
    z1: complex
    z0: complex | None = None

    def admittance_block(self):
        y0 = 0.0 if self.z0 is None else 1.0 / self.z0
        return sequence_to_phase(y0, 1.0 / self.z1)

    def norton_current(self):
        return self.admittance_block() @ balanced(self.voltage)


@dataclass(frozen=True)
class Bus:
    id: int
    grounding: Grounding = Grounding()
    is_slack: bool = False
    source: Source | None = None
    # fictitious terminal buses record the real bus whose meter they borrow
    fictitious_of: int | None = None

    @property
    def fictitious(self):
        return self.fictitious_of is not None


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    z1: complex
    z0: complex
    shunt_b1: float = 0.0
    shunt_b0: float = 0.0
    status: str = CLOSED
    fictitious: bool = False

    @property
    def closed(self):
        return self.status == CLOSED

    @property
    def ends(self):
        return (self.from_bus, self.to_bus)

    def other(self, bus):
        return self.to_bus if bus == self.from_bus else self.from_bus

    def _equivalent_pi(self, z, b):
        """Series admittance and half shunt of the distributed line with totals ``z`` and ``jb``.

        Sections of a distributed line compose exactly, so splitting a line
        and eliminating the junction bus gives back the same stamp.
        """
        theta = np.sqrt(complex(z) * 1j * b)
        return 1.0 / (z * _sinh_ratio(theta)), 0.5j * b * _tanh_ratio(theta / 2)

    def series_block(self):
        y0, _ = self._equivalent_pi(self.z0, self.shunt_b0)
        y1, _ = self._equivalent_pi(self.z1, self.shunt_b1)
        return sequence_to_phase(y0, y1)

    def half_shunt_block(self):
        _, h0 = self._equivalent_pi(self.z0, self.shunt_b0)
        _, h1 = self._equivalent_pi(self.z1, self.shunt_b1)
        return sequence_to_phase(h0, h1)


def _sinh_ratio(x):
    if abs(x) < 1e-3:
        x2 = x * x
        return 1 + x2 / 6 + x2 * x2 / 120
    return np.sinh(x) / x


def _tanh_ratio(x):
    if abs(x) < 1e-3:
        x2 = x * x
        return 1 - x2 / 3 + 2 * x2 * x2 / 15
    return np.tanh(x) / x


@dataclass(frozen=True, eq=False)
class NetworkModel:
    buses: tuple
    lines: tuple
    monitored: frozenset = frozenset()
    voltage_only: frozenset = frozenset()
    injections: dict = field(default_factory=dict)
    base: Base = Base()
    # extra 3x3 shunt elements (fault admittances) keyed by bus id
    shunts: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "monitored", frozenset(self.monitored))
        object.__setattr__(self, "voltage_only", frozenset(self.voltage_only))
        injections = {int(k): np.asarray(v, complex).reshape(3) for k, v in self.injections.items()}
        object.__setattr__(self, "injections", injections)
        shunts = {int(k): np.asarray(v, complex).reshape(3, 3) for k, v in self.shunts.items()}
        object.__setattr__(self, "shunts", shunts)
        self._validate()

    def _validate(self):
        n = len(self.buses)
        if [b.id for b in self.buses] != list(range(1, n + 1)):
            raise TopologyError("bus ids must be 1..n in order")
        if sorted(ln.id for ln in self.lines) != list(range(1, len(self.lines) + 1)):
            raise TopologyError("line ids must be 1..m")
        for ln in self.lines:
            if not (1 <= ln.from_bus <= n and 1 <= ln.to_bus <= n):
                raise TopologyError(f"line {ln.id} references an unknown bus")
            if ln.from_bus == ln.to_bus:
                raise TopologyError(f"line {ln.id} is a self loop")
            if abs(ln.z1) == 0 or abs(ln.z0) == 0:
                raise SingularLineError(f"line {ln.id} has zero impedance")
            if ln.status not in (CLOSED, OPEN):
                raise TopologyError(f"line {ln.id} has unknown status {ln.status!r}")
        slacks = [b.id for b in self.buses if b.is_slack]
        if len(slacks) != 1:
            raise TopologyError(f"expected exactly one slack bus, found {len(slacks)}")
        for name, ids in (("monitored", self.monitored), ("voltage_only", self.voltage_only),
                          ("injections", self.injections), ("shunts", self.shunts)):
            bad = [i for i in ids if not 1 <= i <= n]
            if bad:
                raise TopologyError(f"{name} references unknown buses {sorted(bad)}")
        closed = [ln for ln in self.lines if ln.closed]
        if len(closed) != n - 1 or not _connected(n, closed):
            raise TopologyError("closed lines do not form a spanning tree")

    # --- basic queries -------------------------------------------------

    @property
    def n(self):
        return len(self.buses)

    @property
    def m(self):
        return len(self.lines)

    @property
    def slack(self):
        return next(b for b in self.buses if b.is_slack)

    def bus(self, bus_id):
        if not 1 <= bus_id <= self.n:
            raise TopologyError(f"unknown bus {bus_id}")
        return self.buses[bus_id - 1]

    def line(self, line_id):
        if not 1 <= line_id <= self.m:
            raise TopologyError(f"unknown line {line_id}")
        return self._line_index[line_id]

    @cached_property
    def _line_index(self):
        return {ln.id: ln for ln in self.lines}

    @cached_property
    def closed_lines(self):
        return tuple(ln for ln in self.lines if ln.closed)

    @cached_property
    def _incident(self):
        inc = {b.id: [] for b in self.buses}
        for ln in self.closed_lines:
            inc[ln.from_bus].append(ln)
            inc[ln.to_bus].append(ln)
        return inc

    def incident_lines(self, bus_id, real_only=False):
        self.bus(bus_id)
        lines = self._incident[bus_id]
        return [ln for ln in lines if not ln.fictitious] if real_only else list(lines)

    def neighbors(self, bus_id, real_only=False):
        return [ln.other(bus_id) for ln in self.incident_lines(bus_id, real_only)]

    def degree(self, bus_id, real_only=False):
        return len(self.incident_lines(bus_id, real_only))

    def line_between(self, a, b):
        for ln in self._incident[a]:
            if ln.other(a) == b:
                return ln
        return None

    @property
    def terminal_buses(self):
        return frozenset(b.id for b in self.buses if self.degree(b.id) == 1)

    @property
    def fictitious_buses(self):
        return frozenset(b.id for b in self.buses if b.fictitious)

    @property
    def grounding_buses(self):
        return tuple(b.id for b in self.buses if b.grounding.kind != "none")

    @property
    def non_monitored(self):
        return frozenset(range(1, self.n + 1)) - self.monitored

    # --- derived networks ----------------------------------------------

    def with_monitoring(self, monitored, voltage_only=None):
        vo = self.voltage_only if voltage_only is None else voltage_only
        return replace(self, monitored=frozenset(monitored), voltage_only=frozenset(vo))

    def with_line_status(self, statuses):
        """Return a copy with line statuses overridden by ``{line_id: status}``."""
        lines = [replace(ln, status=statuses.get(ln.id, ln.status)) for ln in self.lines]
        return replace(self, lines=tuple(lines))

    def with_grounding(self, bus_id, grounding):
        buses = [replace(b, grounding=grounding) if b.id == bus_id else b for b in self.buses]
        return replace(self, buses=tuple(buses))

    def with_shunt(self, bus_id, block):
        shunts = dict(self.shunts)
        shunts[bus_id] = shunts.get(bus_id, np.zeros((3, 3), complex)) + np.asarray(block, complex)
        return replace(self, shunts=shunts)

    def injection(self, bus_id):
        return self.injections.get(bus_id, np.zeros(3, complex))

    def total_zero_sequence_susceptance(self):
        return sum(ln.shunt_b0 for ln in self.closed_lines if not ln.fictitious)


def _connected(n, lines):
    parent = list(range(n + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ln in lines:
        a, b = find(ln.from_bus), find(ln.to_bus)
        if a == b:
            return False
        parent[a] = b
    return len({find(i) for i in range(1, n + 1)}) == 1


def degree(net, bus_id):
    return net.degree(bus_id)


def fork_buses(net, real_only=False):
    return {b.id for b in net.buses if net.degree(b.id, real_only) > 2}


def tuned_petersen_reactance(net, overcompensation=0.0):
    """Zero-sequence coil reactance resonating with the total line charging.

    ``overcompensation`` > 0 makes the coil current exceed the capacitive
    current by that fraction, as is usual practice.
    """
    b0 = net.total_zero_sequence_susceptance()
    if b0 <= 0:
        raise DomainError("automatic Petersen tuning needs lines with zero-sequence susceptance")
    return 1.0 / (b0 * (1.0 + overcompensation))


def build_admittance(net, grounding=True, source=True, shunts=True):
    """Assemble the 3n x 3n complex nodal admittance matrix.

    With all flags off only line series and charging elements are included,
    which is the matrix the estimator sees: grounding, source and fault
    currents then appear as bus injections.
    """
    n = net.n
    Y = np.zeros((3 * n, 3 * n), complex)
    for ln in net.closed_lines:
        ys = ln.series_block()
        ysh = ln.half_shunt_block()
        i = 3 * (ln.from_bus - 1)
        k = 3 * (ln.to_bus - 1)
        Y[i:i + 3, i:i + 3] += ys + ysh
        Y[k:k + 3, k:k + 3] += ys + ysh
        Y[i:i + 3, k:k + 3] -= ys
        Y[k:k + 3, i:i + 3] -= ys
    for b in net.buses:
        i = 3 * (b.id - 1)
        if grounding:
            Y[i:i + 3, i:i + 3] += b.grounding.shunt_block()
        if source and b.is_slack and b.source is not None:
            Y[i:i + 3, i:i + 3] += b.source.admittance_block()
    if shunts:
        for bus_id, block in net.shunts.items():
            i = 3 * (bus_id - 1)
            Y[i:i + 3, i:i + 3] += block
    return Y


def line_admittance(net):
    """Admittance of lines only (series plus charging)."""
    return build_admittance(net, grounding=False, source=False, shunts=False)


def split_line(net, line_id, p):
    """Insert a new bus at fraction ``p`` along a closed line.

    The from-side segment keeps the line id; the to-side segment becomes line
    m+1 and the new bus is n+1. Impedances and charging scale with length.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"split fraction must lie in (0, 1), got {p}")
    ln = net.line(line_id)
    if not ln.closed:
        raise DomainError(f"line {line_id} is open")
    new_bus = net.n + 1
    near = replace(ln, to_bus=new_bus, z1=ln.z1 * p, z0=ln.z0 * p,
                   shunt_b1=ln.shunt_b1 * p, shunt_b0=ln.shunt_b0 * p)
    far = replace(ln, id=net.m + 1, from_bus=new_bus, z1=ln.z1 * (1 - p), z0=ln.z0 * (1 - p),
                  shunt_b1=ln.shunt_b1 * (1 - p), shunt_b0=ln.shunt_b0 * (1 - p))
    lines = [near if x.id == line_id else x for x in net.lines] + [far]
    return replace(net, buses=net.buses + (Bus(new_bus),), lines=tuple(lines))


def kron_reduce(Y, eliminate):
    """Eliminate the given bus ids (each three phase rows) from Y."""
    elim = np.concatenate([np.arange(3 * (b - 1), 3 * b) for b in eliminate])
    keep = np.setdiff1d(np.arange(Y.shape[0]), elim)
    Ykk = Y[np.ix_(keep, keep)]
    Yke = Y[np.ix_(keep, elim)]
    Yee = Y[np.ix_(elim, elim)]
    return Ykk - Yke @ np.linalg.solve(Yee, Y[np.ix_(elim, keep)])


# --- JSON ----------------------------------------------------------------

def _cplx(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return complex(value[0], value[1])
    return complex(value)


def _pair(z):
    return None if z is None else [float(z.real), float(z.imag)]


def _grounding_to_dict(g):
    if g.kind == "none":
        return {"kind": "none"}
    if g.kind == "petersen":
        return {"kind": "petersen", "reactance": g.impedance.imag, "resistance": g.impedance.real}
    return {"kind": "solid", "impedance": _pair(g.impedance)}


def network_to_dict(net):
    buses = []
    for b in net.buses:
        d = {"id": b.id, "grounding": _grounding_to_dict(b.grounding)}
        if b.is_slack:
            d["slack"] = True
        if b.source is not None:
            d["source"] = {"voltage": _pair(b.source.voltage), "z1": _pair(b.source.z1),
                           "z0": _pair(b.source.z0)}
        if b.fictitious_of is not None:
            d["fictitious_of"] = b.fictitious_of
        buses.append(d)
    lines = []
    for ln in net.lines:
        d = {"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "z1": _pair(ln.z1),
             "z0": _pair(ln.z0), "b1": ln.shunt_b1, "b0": ln.shunt_b0, "status": ln.status}
        if ln.fictitious:
            d["fictitious"] = True
        lines.append(d)
    out = {
        "format": FORMAT,
        "base": {"sbase": net.base.sbase, "vbase": net.base.vbase, "frequency": net.base.frequency},
        "buses": buses,
        "lines": lines,
        "monitored": sorted(net.monitored),
        "voltage_only": sorted(net.voltage_only),
        "injections": {str(k): [_pair(x) for x in v] for k, v in sorted(net.injections.items())},
    }
    if net.shunts:
        out["shunts"] = {str(k): [[_pair(x) for x in row] for row in v]
                         for k, v in sorted(net.shunts.items())}
    return out


def network_from_dict(data):
    if data.get("format", FORMAT) != FORMAT:
        raise DomainError(f"unsupported network format {data.get('format')!r}")
    base = Base(**data.get("base", {}))
    lines = []
    for d in data["lines"]:
        lines.append(Line(int(d["id"]), int(d["from"]), int(d["to"]), _cplx(d["z1"]), _cplx(d["z0"]),
                          float(d.get("b1", 0.0)), float(d.get("b0", 0.0)),
                          d.get("status", CLOSED), bool(d.get("fictitious", False))))
    buses, auto = [], []
    for d in data["buses"]:
        g = d.get("grounding", {"kind": "none"})
        kind = g.get("kind", "none")
        if kind == "petersen":
            if g.get("reactance") == "auto":
                auto.append((int(d["id"]), g))
                grounding = Grounding()
            else:
                grounding = Grounding.petersen(float(g["reactance"]), float(g.get("resistance", 0.0)))
        elif kind == "solid":
            grounding = Grounding.solid(_cplx(g.get("impedance", 1e-3)))
        else:
            grounding = Grounding()
        source = None
        if "source" in d:
            s = d["source"]
            source = Source(_cplx(s.get("voltage", base.vphase)), _cplx(s["z1"]), _cplx(s.get("z0")))
        buses.append(Bus(int(d["id"]), grounding, bool(d.get("slack", False)), source,
                         d.get("fictitious_of")))
    injections = {int(k): [_cplx(x) for x in v] for k, v in data.get("injections", {}).items()}
    shunts = {int(k): [[_cplx(x) for x in row] for row in v] for k, v in data.get("shunts", {}).items()}
    net = NetworkModel(tuple(buses), tuple(lines), frozenset(data.get("monitored", [])),
                       frozenset(data.get("voltage_only", [])), injections, base, shunts)
    for bus_id, g in auto:
        x = tuned_petersen_reactance(net, float(g.get("overcompensation", 0.0)))
        net = net.with_grounding(bus_id, Grounding.petersen(x, float(g.get("resistance", 0.0))))
    return net


def load_network(path):
    return network_from_dict(json.loads(Path(path).read_text()))


def save_network(net, path):
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))
