"""Network generators and independent oracles shared by the tests."""

from __future__ import annotations

import itertools
import time

import numpy as np

from gridfault.network import (Base, Bus, Grounding, Line, NetworkModel, Source, balanced)

VPH = Base().vphase


def random_parents(n, rng):
    """Parent of each bus 2..n in a random recursive tree rooted at bus 1."""
    return {k: int(rng.integers(1, k)) for k in range(2, n + 1)}


def tree_network(parents, rng=None, charging=True, loads=True, grounding="solid"):
    """Network from a parent map; line k+1 joins bus k+2 to its parent."""
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(parents) + 1
    lines = []
    for k, child in enumerate(sorted(parents), start=1):
        km = rng.uniform(0.2, 1.0)
        z1 = complex(rng.uniform(0.1, 0.3), rng.uniform(0.08, 0.4)) * km
        z0 = z1 * rng.uniform(2.5, 4.0)
        b = 2 * np.pi * 50 * 0.3e-6 * km if charging else 0.0
        lines.append(Line(k, parents[child], child, z1, z0, b, b * 0.6))
    g = Grounding.solid(0.05 + 0.5j) if grounding == "solid" else Grounding()
    buses = [Bus(1, g, True, Source(VPH + 0j, 0.02 + 0.2j))] + [Bus(i) for i in range(2, n + 1)]
    inj = {}
    if loads:
        for i in range(2, n + 1):
            inj[i] = balanced(-complex(rng.uniform(2, 15), rng.uniform(0.5, 4)))
    return NetworkModel(tuple(buses), tuple(lines), injections=inj)


def random_tree(n, rng, **kw):
    return tree_network(random_parents(n, rng), rng, **kw)


def chain(n, **kw):
    return tree_network({k: k - 1 for k in range(2, n + 1)}, **kw)


def star(leaves, **kw):
    return tree_network({k: 1 for k in range(2, leaves + 2)}, **kw)


def observable_monitoring(net, rng, density=0.3):
    """Random monitoring set satisfying the two extended observability conditions."""
    mon = {b for b in range(1, net.n + 1) if rng.random() < density}
    mon |= set(net.terminal_buses)
    lines = list(net.closed_lines)
    rng.shuffle(lines)
    for ln in lines:
        a, b = ln.ends
        if a not in mon and b not in mon:
            mon.add(a if rng.random() < 0.5 else b)
    return frozenset(mon)


def monitored_random_tree(n, rng, density=0.3, **kw):
    net = random_tree(n, rng, **kw)
    return net.with_monitoring(observable_monitoring(net, rng, density))


def theorem1_by_definition(net, monitored):
    """Every line has a monitored end and every terminal is monitored."""
    for ln in net.closed_lines:
        if ln.from_bus not in monitored and ln.to_bus not in monitored:
            return False
    return all(t in monitored for t in net.terminal_buses)


def all_monitoring_patterns(n):
    for bits in itertools.product((0, 1), repeat=n):
        yield frozenset(i + 1 for i, v in enumerate(bits) if v)


def clusters_by_search(net):
    """Line clusters from a breadth-first walk that stops at non-monitored forks and split buses."""
    stop = {b.id for b in net.buses if b.id not in net.monitored and net.degree(b.id) > 2}
    real = [ln for ln in net.closed_lines if not ln.fictitious]
    seen, groups = set(), []
    for start in real:
        if start.id in seen:
            continue
        group, todo = set(), [start]
        while todo:
            ln = todo.pop()
            if ln.id in group:
                continue
            group.add(ln.id)
            for end in ln.ends:
                if end in stop:
                    continue
                todo += [x for x in net.incident_lines(end, real_only=True) if x.id not in group]
        seen |= group
        groups.append(tuple(sorted(group)))
    return sorted(groups)


def fortescue():
    a = np.exp(2j * np.pi / 3)
    return np.array([[1, 1, 1], [1, a * a, a], [1, a, a * a]])


def gaussian_solve(H, R, z):
    """Closed-form WLS through the normal equations (independent of the package solver)."""
    Ri = np.linalg.inv(R)
    G = H.T @ Ri @ H
    x = np.linalg.solve(G, H.T @ Ri @ z)
    r = z - H @ x
    return x, float(np.sqrt(r @ Ri @ r))


def feasible_patterns(net):
    """Boolean matrix of every monitoring pattern satisfying the two conditions, by enumeration."""
    n = net.n
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    ok = np.ones(len(bits), bool)
    for ln in net.closed_lines:
        ok &= (bits[:, ln.from_bus - 1] | bits[:, ln.to_bus - 1]).astype(bool)
    for t in net.terminal_buses:
        ok &= bits[:, t - 1].astype(bool)
    return bits[ok].astype(bool)


def resolution_cost(net):
    """Fork buses cost n times their degree, every other bus costs one."""
    deg = np.array([net.degree(b) for b in range(1, net.n + 1)])
    return np.where(deg > 2, net.n * deg, 1)


def best_by_enumeration(net, cost):
    pats = feasible_patterns(net)
    vals = pats.astype(int) @ cost
    best = vals.min()
    return best, pats[vals == best]


# acceptance verdict lines, keyed by criterion number
ACCEPTANCE = {}


class criterion:
    """Record a one-line verdict for an acceptance criterion, timing the block."""

    def __init__(self, number, title, budget=None):
        self.number, self.title, self.budget = number, title, budget
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = exc_type is None
        if ok and self.budget is not None and elapsed > self.budget:
            ok = False
            self.detail += f" (over the {self.budget:.0f} s budget)"
        line = f"criterion {self.number} {self.title}: {'PASS' if ok else 'FAIL'} [{elapsed:.1f} s]{self.detail}"
        ACCEPTANCE[self.number] = line
        print(line)
        if exc_type is None and not ok:
            raise AssertionError(line)
        return False
