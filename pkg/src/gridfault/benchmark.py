"""Synthetic 84-bus urban medium-voltage feeder group used for experiments.

Bus 1 is the substation busbar (source, slack, neutral earthing) and feeds six
cable feeders. The first feeder forks once after eight buses; the others are
plain chains. A normally open tie joins the far ends of feeders five and six,
and the second topology moves feeder six onto that tie.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .network import (CLOSED, OPEN, Base, Bus, Grounding, Line, NetworkModel, Source,
                      balanced, tuned_petersen_reactance)

# (name, number of buses); the first feeder is trunk + fork + two branches
FEEDERS = (("f2", 12), ("f3", 11), ("f4", 10), ("f5", 12), ("f6", 10))
TRUNK, BRANCH1, BRANCH2 = 8, 10, 9

CABLE_Z1 = 0.125 + 0.100j   # ohm/km
CABLE_Z0 = 0.500 + 0.400j
CABLE_C = 0.30e-6           # F/km, both sequences
SOURCE_Z1 = 0.02 + 0.21j
SOLID_Z = 0.05 + 0.5j
PETERSEN_OVERCOMPENSATION = 0.0
PETERSEN_QUALITY = 30.0
SEED = 84

# split buses, one in the middle of every segment between forks and ends
SPLIT_POSITIONS = {"trunk": 4, "branch1": 5, "branch2": 4, "f2": 6, "f3": 6, "f4": 5, "f5": 6, "f6": 5}


def _layout():
    """Segments as lists of bus ids, plus the chain of lines (from, to)."""
    segments = {}
    edges = []
    nxt = 2

    def chain(name, start, length):
        nonlocal nxt
        ids = list(range(nxt, nxt + length))
        nxt += length
        prev = start
        for b in ids:
            edges.append((prev, b))
            prev = b
        segments[name] = ids
        return ids

    trunk = chain("trunk", 1, TRUNK)
    fork = nxt
    nxt += 1
    edges.append((trunk[-1], fork))
    chain("branch1", fork, BRANCH1)
    chain("branch2", fork, BRANCH2)
    for name, length in FEEDERS:
        chain(name, 1, length)
    return segments, fork, edges


SEGMENTS, FORK_BUS, _EDGES = _layout()
BUSBAR = 1
TIE_ENDS = (SEGMENTS["f5"][-1], SEGMENTS["f6"][-1])
FEEDER6_HEAD_LINE = _EDGES.index((1, SEGMENTS["f6"][0])) + 1
TIE_LINE = len(_EDGES) + 1


def split_buses():
    """The eight voltage-only split buses of the reference placement."""
    return tuple(SEGMENTS[name][pos - 1] for name, pos in SPLIT_POSITIONS.items())


def build_benchmark(grounding="solid", base=Base()):
    """The benchmark grid with deterministic lengths and injections.

    ``grounding`` is ``"solid"`` or ``"petersen"`` (coil tuned to the cable
    charging at resonance with a quality factor of 30).
    """
    rng = np.random.default_rng(SEED)
    omega = 2 * np.pi * base.frequency
    lines = []
    for k, (a, b) in enumerate(_EDGES, start=1):
        km = rng.uniform(0.3, 0.8)
        bsh = omega * CABLE_C * km
        lines.append(Line(k, a, b, CABLE_Z1 * km, CABLE_Z0 * km, bsh, bsh))
    km = 0.6
    bsh = omega * CABLE_C * km
    lines.append(Line(TIE_LINE, TIE_ENDS[0], TIE_ENDS[1], CABLE_Z1 * km, CABLE_Z0 * km, bsh, bsh,
                      status=OPEN))
    n = len(_EDGES) + 1
    vph = base.vphase
    injections = {}
    for bus in range(2, n + 1):
        s = rng.uniform(100e3, 300e3)
        load = s * (0.95 + 1j * np.sqrt(1 - 0.95**2)) / 3.0
        cur = -np.conj(load / vph)
        if bus % 4 == 0:
            cur += rng.uniform(100e3, 400e3) / 3.0 / vph
        injections[bus] = balanced(cur)
    source = Source(vph + 0j, SOURCE_Z1, None)
    buses = [Bus(1, Grounding.solid(SOLID_Z), True, source)] + [Bus(i) for i in range(2, n + 1)]
    net = NetworkModel(tuple(buses), tuple(lines), injections=injections, base=base)
    if grounding == "petersen":
        x = tuned_petersen_reactance(net, PETERSEN_OVERCOMPENSATION)
        net = net.with_grounding(BUSBAR, Grounding.petersen(x, x / PETERSEN_QUALITY))
    elif grounding != "solid":
        raise ValueError(f"unknown grounding {grounding!r}")
    return net


def second_topology(net):
    """Feeder six supplied through the tie from the end of feeder five."""
    return net.with_line_status({FEEDER6_HEAD_LINE: OPEN, TIE_LINE: CLOSED})


@lru_cache(maxsize=8)
def benchmark_setup(grounding="solid", topology=1):
    """Monitored benchmark with the reference splits; returns ``(net, solution)``.

    The placement is solved once on the first topology with the second one
    registered as a reconfiguration. In the second topology the far end of
    feeder five becomes an interior bus and is demoted to a voltage-only split
    bus, which keeps the number of clusters at sixteen.
    """
    from .placement import add_split_bus, apply_placement, build_opa, solve_opa

    raw = build_benchmark(grounding)
    net = raw
    for kappa in split_buses():
        net, _ = add_split_bus(net, kappa)
    problem = build_opa(net, "max_resolution", pins={TIE_ENDS[0] - 1: 1},
                        reconfig=[second_topology(net)])
    solution = solve_opa(problem)
    net = apply_placement(net, solution)
    if topology == 2:
        net, _ = add_split_bus(second_topology(net), TIE_ENDS[0])
    elif topology != 1:
        raise ValueError(f"unknown topology {topology}")
    return net, solution
