"""Observability conditions and fault-cluster partitions of a monitored radial grid.

A bus is *monitored* when it carries a full phasor unit (voltage and current);
voltage-only meters do not count. Fictitious terminal buses added by cluster
splitting are ordinary monitored terminals here, and the lines leading to them
are never part of a cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ObservabilityError


@dataclass(frozen=True)
class ObservabilityReport:
    observable_base: bool
    observable_extended: bool
    violations: tuple = ()

    def describe(self):
        parts = []
        for cond, buses in self.violations:
            if cond == "a":
                parts.append(f"adjacent non-monitored buses {buses[0]}-{buses[1]}")
            elif cond == "b":
                parts.append(f"non-monitored terminal bus {buses[0]}")
            else:
                parts.append(f"{cond} at bus {buses[0]}")
        return "; ".join(parts) if parts else "observable"


@dataclass(frozen=True)
class ClusterPartition:
    """Line clusters ordered by their lowest line id; cluster ids start at 1."""

    clusters: tuple
    separators: frozenset
    kind: str
    flags: tuple = ()
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        clusters = tuple(sorted((tuple(sorted(c)) for c in self.clusters), key=lambda c: c[0]))
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "separators", frozenset(self.separators))
        index = {}
        for l, c in enumerate(clusters, start=1):
            for line_id in c:
                if line_id in index:
                    raise ObservabilityError(f"line {line_id} appears in two clusters")
                index[line_id] = l
        object.__setattr__(self, "_index", index)

    @property
    def r(self):
        return len(self.clusters)

    def cluster_of(self, line_id):
        return self._index[line_id]

    def lines(self, cluster_id):
        return self.clusters[cluster_id - 1]

    def representative(self, cluster_id):
        return self.clusters[cluster_id - 1][0]

    def to_dict(self):
        return {"r": self.r, "clusters": [list(c) for c in self.clusters],
                "separators": sorted(self.separators)}


def _real_lines(net):
    return [ln for ln in net.closed_lines if not ln.fictitious]


def check_lemma1(net):
    """Sufficient condition for observability of the grid without virtual buses.

    Returns ``(passed, violations)``.
    """
    mon = net.monitored
    violations = []
    for b in net.buses:
        i = b.id
        nbrs = net.neighbors(i)
        if len(nbrs) > 1:
            unmon = [k for k in nbrs if k not in mon]
            if len(unmon) > 1:
                violations.append(("lemma-a", (i, *sorted(unmon))))
        elif i not in mon and not any(k in mon for k in nbrs):
            violations.append(("lemma-b", (i,)))
    return not violations, tuple(violations)


def check_theorem1(net):
    """Observability of every grid extended with one mid-line virtual bus.

    ``observable_base`` is true when either this condition or the weaker
    base-grid condition holds, since both are sufficient for the base grid.
    """
    mon = net.monitored
    violations = []
    for ln in net.closed_lines:
        a, b = ln.ends
        if a not in mon and b not in mon:
            violations.append(("a", (min(a, b), max(a, b))))
    for t in sorted(net.terminal_buses):
        if t not in mon:
            violations.append(("b", (t,)))
    extended = not violations
    lemma_ok, _ = check_lemma1(net)
    return ObservabilityReport(extended or lemma_ok, extended, tuple(violations))


def require_theorem1(net):
    report = check_theorem1(net)
    if not report.observable_extended:
        raise ObservabilityError("monitoring does not satisfy the extended observability "
                                 "conditions: " + report.describe(), violations=report.violations)
    return report


def separator_buses(net):
    """Non-monitored buses of degree > 2, counting lines to fictitious terminals."""
    return frozenset(b.id for b in net.buses
                     if b.id not in net.monitored and net.degree(b.id) > 2)


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self):
        out = {}
        for i in self.parent:
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


def compute_ufc2(net):
    """Clusters separated only by non-monitored forks and split buses."""
    require_theorem1(net)
    seps = separator_buses(net)
    lines = _real_lines(net)
    uf = _UnionFind([ln.id for ln in lines])
    for b in net.buses:
        if b.id in seps:
            continue
        incident = [ln.id for ln in net.incident_lines(b.id, real_only=True)]
        for other in incident[1:]:
            uf.union(incident[0], other)
    return ClusterPartition(tuple(uf.groups()), seps, "ufc2")


def compute_ufc(net):
    """Finest clusters within which every virtual-bus model has the same residual.

    Two-monitored lines are single-line clusters. Lines from a non-monitored
    bus to a monitored bus are merged through monitored buses all of whose
    lines lead to non-monitored buses, and through non-monitored buses of
    degree two. A line touching a monitored bus that also has a
    two-monitored line stays alone.
    """
    require_theorem1(net)
    mon = net.monitored
    lines = _real_lines(net)
    uf = _UnionFind([ln.id for ln in lines])

    def mixed(ln):
        return (ln.from_bus in mon) != (ln.to_bus in mon)

    open_monitored = set()
    for b in net.buses:
        if b.id in mon and all(mixed(ln) for ln in net.incident_lines(b.id, real_only=True)):
            open_monitored.add(b.id)
    joinable = {ln.id for ln in lines if mixed(ln)
                and all(e not in mon or e in open_monitored for e in ln.ends)}
    for b in net.buses:
        i = b.id
        if i in mon and i not in open_monitored:
            continue
        if i not in mon and net.degree(i) != 2:
            continue
        incident = [ln.id for ln in net.incident_lines(i, real_only=True) if ln.id in joinable]
        for other in incident[1:]:
            uf.union(incident[0], other)

    groups = uf.groups()
    unmon_forks = {b.id for b in net.buses if b.id not in mon and net.degree(b.id) > 2}
    flags = []
    for g in groups:
        touching = [lid for lid in g if set(net.line(lid).ends) & unmon_forks]
        if len(g) > 1 and len(touching) > 1:
            flags.append(("several-fork-borders", tuple(sorted(g))))
    borders = frozenset(b.id for b in net.buses if b.id not in mon)
    return ClusterPartition(tuple(groups), borders, "ufc", tuple(flags))


def cluster_count(net):
    """Closed-form count 1 + sum over separators of (real degree - 1)."""
    require_theorem1(net)
    return 1 + sum(net.degree(s, real_only=True) - 1 for s in separator_buses(net))
