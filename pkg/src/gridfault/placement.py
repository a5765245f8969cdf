"""Optimal placement of phasor units on a radial grid.

The placement problem is a binary covering program: minimize c.gamma subject
to A gamma >= f (every bus is monitored or all its neighbours are), terminal
buses monitored, and the extra covering rows needed when the grid can be
reconfigured. It is solved exactly by branch and bound.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConstraintConflictError, DomainError, GridFaultError, InfeasibleError
from .network import CLOSED, Bus, Line, NetworkModel
from .observability import check_theorem1

FICTITIOUS_Z = 1.0 + 0j


@dataclass
class OpaProblem:
    bus_ids: list
    A: np.ndarray
    f: np.ndarray
    c: np.ndarray
    fixed: dict
    pair_constraints: list = field(default_factory=list)
    cover_constraints: list = field(default_factory=list)
    objective: str = "min_count"
    # tie-break weights minimized after the main cost (monitored fork degrees)
    secondary: np.ndarray | None = None
    voltage_candidates: frozenset = frozenset()
    net: NetworkModel | None = None
    topologies: list = field(default_factory=list)
    user_pins: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.bus_ids)

    def rows(self):
        """All covering rows as (indices, coefficients, rhs)."""
        out = []
        for i in range(self.A.shape[0]):
            idx = np.nonzero(self.A[i])[0]
            out.append((idx, self.A[i, idx].astype(int), int(self.f[i])))
        pos = {b: k for k, b in enumerate(self.bus_ids)}
        for a, b in self.pair_constraints:
            out.append((np.array([pos[a], pos[b]]), np.array([1, 1]), 1))
        for group in self.cover_constraints:
            idx = np.array(sorted(pos[g] for g in group))
            out.append((idx, np.ones(len(idx), int), 1))
        return out

    def is_feasible(self, gamma):
        gamma = np.asarray(gamma)
        for i, v in self.fixed.items():
            if gamma[self.bus_ids.index(i)] != v:
                return False
        return all(coef @ gamma[idx] >= rhs for idx, coef, rhs in self.rows())


@dataclass
class PlacementSolution:
    gamma: np.ndarray
    bus_ids: list
    d_star: int
    voltage_only: frozenset
    r_star: int
    d_bar: int
    d1: int
    d2: int
    d3: int
    delta_r: int
    cost: float = 0.0

    @property
    def monitored(self):
        return frozenset(b for b, g in zip(self.bus_ids, self.gamma) if g)

    def to_dict(self):
        return {"gamma": [int(g) for g in self.gamma], "bus_ids": list(self.bus_ids),
                "voltage_only": sorted(self.voltage_only), "d_star": self.d_star,
                "r_star": self.r_star, "d_bar": self.d_bar, "d1": self.d1, "d2": self.d2,
                "d3": self.d3, "delta_r": self.delta_r}


# --- network edits ---------------------------------------------------------

def add_split_bus(net, bus_kappa):
    """Attach a fictitious monitored terminal to ``bus_kappa`` and meter its voltage.

    Returns ``(new_net, voltage_only)``. The bus loses any phasor unit it had
    (its meter then measures voltage only), which makes it a cluster separator.
    """
    if net.degree(bus_kappa) <= 1:
        raise DomainError(f"bus {bus_kappa} is terminal and cannot split clusters")
    if net.bus(bus_kappa).fictitious:
        raise DomainError(f"bus {bus_kappa} is itself fictitious")
    if any(net.bus(k).fictitious_of == bus_kappa for k in net.neighbors(bus_kappa)):
        raise DomainError(f"bus {bus_kappa} already splits clusters")
    new_id = net.n + 1
    line = Line(net.m + 1, bus_kappa, new_id, FICTITIOUS_Z, FICTITIOUS_Z, fictitious=True)
    monitored = (net.monitored - {bus_kappa}) | {new_id}
    voltage_only = net.voltage_only | {bus_kappa}
    new = replace(net, buses=net.buses + (Bus(new_id, fictitious_of=bus_kappa),),
                  lines=net.lines + (line,), monitored=monitored, voltage_only=voltage_only)
    return new, voltage_only


def split_buses(net):
    return frozenset(b.fictitious_of for b in net.buses if b.fictitious)


def topology_statuses(topology):
    """Line statuses of a topology given as a network or as ``{line_id: status}``."""
    if isinstance(topology, NetworkModel):
        return {ln.id: ln.status for ln in topology.lines}
    return {int(k): v for k, v in topology.items()}


def apply_placement(net, solution):
    return net.with_monitoring(solution.monitored, net.voltage_only | solution.voltage_only)


# --- problem construction -------------------------------------------------

def _adjacency(net):
    n = net.n
    A = np.zeros((n, n), int)
    for ln in net.closed_lines:
        a, b = ln.from_bus - 1, ln.to_bus - 1
        A[a, b] = A[b, a] = 1
    deg = A.sum(axis=1)
    return A + np.diag(deg), deg


def build_opa(net, objective="max_resolution", pins=None, reconfig=()):
    """Placement problem for ``net`` (which may already carry split buses).

    ``reconfig`` lists alternative topologies as networks or status maps; the
    union of their observability rows is imposed together with the switch
    conditions, so every topology stays observable.
    """
    if objective not in ("min_count", "max_resolution"):
        raise DomainError(f"unknown objective {objective!r}")
    pins = dict(pins or {})
    topologies = [net] + [net.with_line_status(topology_statuses(t)) for t in reconfig]
    n = net.n
    bus_ids = list(range(1, n + 1))
    A, deg = _adjacency(net)
    f = deg.copy()
    real_deg = np.array([net.degree(b, real_only=True) for b in bus_ids])

    if objective == "max_resolution":
        c = np.where(real_deg > 2, n * real_deg, 1).astype(float)
        secondary = np.where(real_deg > 2, real_deg - 1, 0)
    else:
        c = np.ones(n)
        secondary = None

    fixed = {}

    def pin(bus, value, why):
        if fixed.get(bus, value) != value:
            raise ConstraintConflictError(f"bus {bus} pinned to both values ({why})")
        fixed[bus] = value

    for b in net.buses:
        if b.fictitious:
            pin(b.id, 1, "fictitious terminal")
            pin(b.fictitious_of, 0, "split bus")
    for bus, value in pins.items():
        pin(int(bus), int(value), "user pin")
    for topo in topologies:
        for t in topo.terminal_buses:
            pin(t, 1, "terminal bus")

    pairs, covers = [], []
    extra_rows = []
    switches = set()
    for topo in topologies[1:]:
        for ln0, ln1 in zip(net.lines, topo.lines):
            if ln0.status != ln1.status:
                switches.add(ln0.id)
        At, dt = _adjacency(topo)
        extra_rows.append((At, dt))
    for ln in net.lines:
        if ln.status != CLOSED:
            switches.add(ln.id)
    required = {b for b, v in fixed.items() if v == 1}
    for lid in sorted(switches):
        a, b = net.line(lid).ends
        pairs.append((min(a, b), max(a, b)))
        if a in required and b in required:
            group = set()
            for topo in topologies:
                group |= set(topo.neighbors(a, real_only=True)) | set(topo.neighbors(b, real_only=True))
            group -= {a, b}
            group = {g for g in group if not net.bus(g).fictitious}
            if group:
                covers.append(tuple(sorted(group)))
    for At, dt in extra_rows:
        A = np.vstack([A, At])
        f = np.concatenate([f, dt])

    # buses that are forks in one topology and degree two in another
    degs = np.array([[topo.degree(b, real_only=True) for b in bus_ids] for topo in topologies])
    volt = frozenset(b for k, b in enumerate(bus_ids)
                     if degs[:, k].max() >= 3 and degs[:, k].min() == 2 and fixed.get(b) != 1)

    problem = OpaProblem(bus_ids, A, f, c, fixed, pairs, covers, objective, secondary, volt,
                         net, topologies, pins)
    _check_fixed(problem)
    return problem


def _check_fixed(problem):
    gamma = np.full(problem.n, -1)
    for b, v in problem.fixed.items():
        gamma[b - 1] = v
    for idx, coef, rhs in problem.rows():
        best = sum(int(cf) for j, cf in zip(idx, coef) if gamma[j] != 0)
        if best < rhs:
            raise ConstraintConflictError("fixed assignments make an observability row unsatisfiable "
                                          f"(buses {[problem.bus_ids[j] for j in idx]})")


# --- branch and bound ------------------------------------------------------

def _as_cover(rows):
    """Edges and at-least-one groups equivalent to ``rows``, or None for other row shapes.

    A row ``rho*g_c + sum(g_o) >= rho`` over ``rho`` neighbours holds exactly
    when every edge (c, o) has a monitored end.
    """
    edges, groups = set(), set()
    for idx, coef, rhs in rows:
        idx = [int(j) for j in idx]
        coef = [int(c) for c in coef]
        if rhs <= 0:
            continue
        if all(c == 1 for c in coef) and rhs == 1:
            if len(idx) == 2:
                edges.add(tuple(sorted(idx)))
            else:
                groups.add(tuple(sorted(idx)))
            continue
        centre = [j for j, c in zip(idx, coef) if c >= rhs]
        others = [j for j, c in zip(idx, coef) if c < rhs]
        if len(centre) != 1 or any(c != 1 for c in coef if c < rhs) or len(others) > rhs:
            return None
        if len(others) < rhs:
            groups.add((centre[0],))
        else:
            edges.update(tuple(sorted((centre[0], j))) for j in others)
    return edges, groups


class _GraphCoverSolver:
    """Exact weighted vertex cover with extra at-least-one groups.

    Branches only on group members and on vertices closing a cycle; the
    remaining forest is solved by dynamic programming, so plain radial
    problems need no branching at all.
    """

    def __init__(self, n, edges, groups, cost, order):
        self.adj = [set() for _ in range(n)]
        for a, b in edges:
            self.adj[a].add(b)
            self.adj[b].add(a)
        self.groups = [tuple(g) for g in sorted(groups)]
        self.member_of = {}
        for k, g in enumerate(self.groups):
            for j in g:
                self.member_of.setdefault(j, []).append(k)
        self.cost = cost
        self.rank = {v: k for k, v in enumerate(order)}
        self.nodes = 0

    def solve(self, assign):
        best = self._search(dict(assign))
        if best is None:
            raise InfeasibleError("placement constraints admit no solution")
        return best

    def _propagate(self, assign):
        queue = list(assign)
        for k, g in enumerate(self.groups):
            queue.append(("group", k))
        while queue:
            item = queue.pop()
            if isinstance(item, tuple):
                g = self.groups[item[1]]
                if any(assign.get(j) == 1 for j in g):
                    continue
                free = [j for j in g if j not in assign]
                if not free:
                    return False
                if len(free) == 1:
                    assign[free[0]] = 1
                    queue.append(free[0])
                continue
            v = item
            if assign[v] == 0:
                for u in self.adj[v]:
                    if assign.get(u) == 0:
                        return False
                    if u not in assign:
                        assign[u] = 1
                        queue.append(u)
                queue.extend(("group", k) for k in self.member_of.get(v, ()))
        return True

    def _search(self, assign):
        self.nodes += 1
        if not self._propagate(assign):
            return None
        n = len(self.adj)
        free = [v for v in range(n) if v not in assign]
        pivot = self._pivot(assign, free)
        if pivot is None:
            extra, ones = self._forest(assign, free)
            base = {j for j, v in assign.items() if v == 1}
            return sum(self.cost[j] for j in base) + extra, base | ones
        best = None
        for value in (1, 0):
            trial = dict(assign)
            trial[pivot] = value
            res = self._search(trial)
            if res is not None and (best is None or res[0] < best[0]):
                best = res
        return best

    def _pivot(self, assign, free):
        """A free vertex to branch on, or None when the free part is a forest without groups."""
        open_groups = [g for g in self.groups if not any(assign.get(j) == 1 for j in g)]
        if open_groups:
            return min((j for j in open_groups[0] if j not in assign), key=self.rank.__getitem__)
        parent = {v: v for v in free}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for v in sorted(free, key=self.rank.__getitem__):
            for u in self.adj[v]:
                if u < v or u in assign:
                    continue
                a, b = find(u), find(v)
                if a == b:
                    return min(u, v, key=self.rank.__getitem__)
                parent[a] = b
        return None

    def _forest(self, assign, free):
        """Cheapest cover of the edges among free vertices, which form a forest."""
        seen, ones, total = set(), set(), 0
        for root in sorted(free, key=self.rank.__getitem__):
            if root in seen:
                continue
            order, par = [], {root: None}
            stack = [root]
            seen.add(root)
            while stack:
                v = stack.pop()
                order.append(v)
                for u in self.adj[v]:
                    if u not in assign and u not in seen:
                        seen.add(u)
                        par[u] = v
                        stack.append(u)
            dp = {}
            for v in reversed(order):
                kids = [u for u in self.adj[v] if par.get(u) == v and u in dp]
                c0 = sum(dp[u][1] for u in kids)
                c1 = self.cost[v] + sum(min(dp[u]) for u in kids)
                dp[v] = (c0, c1)
            pick = {}
            for v in order:
                p = par[v]
                if p is not None and pick[p] == 0:
                    pick[v] = 1
                else:
                    pick[v] = 0 if dp[v][0] <= dp[v][1] else 1
                if pick[v]:
                    ones.add(v)
            total += min(dp[root])
        return total, ones


class _CoverSolver:
    """Exact minimum-cost binary covering by branch and bound.

    Nodes propagate forced ones, split the open rows into independent
    components and bound each component by a packing of disjoint rows.
    """

    def __init__(self, rows, cost, order):
        self.rows = [(np.asarray(i), np.asarray(c), int(r)) for i, c, r in rows]
        self.cost = cost
        self.rank = {v: k for k, v in enumerate(order)}
        self.var_rows = {}
        for k, (idx, _, _) in enumerate(self.rows):
            for j in idx:
                self.var_rows.setdefault(int(j), []).append(k)
        self.nodes = 0

    def solve(self, assign):
        assign = dict(assign)
        if not self._propagate(assign, range(len(self.rows))):
            raise InfeasibleError("placement constraints admit no solution")
        best = self._solve_open(assign)
        if best is None:
            raise InfeasibleError("placement constraints admit no solution")
        return best

    def _row_state(self, k, assign):
        idx, coef, rhs = self.rows[k]
        have = 0
        free = []
        for j, cf in zip(idx, coef):
            v = assign.get(int(j))
            if v == 1:
                have += int(cf)
            elif v is None:
                free.append((int(j), int(cf)))
        return have, free, rhs

    def _propagate(self, assign, rows):
        queue = list(rows)
        while queue:
            k = queue.pop()
            have, free, rhs = self._row_state(k, assign)
            if have >= rhs:
                continue
            room = sum(cf for _, cf in free)
            if have + room < rhs:
                return False
            for j, cf in free:
                if have + room - cf < rhs:
                    assign[j] = 1
                    queue.extend(self.var_rows.get(j, ()))
        return True

    def _open_rows(self, assign):
        out = []
        for k in range(len(self.rows)):
            have, free, rhs = self._row_state(k, assign)
            if have < rhs:
                out.append((k, free, rhs - have))
        return out

    def _row_min_cost(self, free, need):
        best = None
        if len(free) <= 10:
            for r in range(1, len(free) + 1):
                for combo in itertools.combinations(free, r):
                    if sum(cf for _, cf in combo) >= need:
                        val = sum(self.cost[j] for j, _ in combo)
                        best = val if best is None else min(best, val)
            return best
        return min(self.cost[j] for j, _ in free)

    def _bound(self, open_rows):
        used = set()
        total = 0
        rated = sorted(((self._row_min_cost(free, need), free) for _, free, need in open_rows),
                       key=lambda t: -t[0])
        for val, free in rated:
            vars_ = {j for j, _ in free}
            if vars_ & used:
                continue
            used |= vars_
            total += val
        return total

    def _components(self, open_rows):
        parent = {}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for _, free, _ in open_rows:
            vs = [j for j, _ in free]
            for v in vs:
                parent.setdefault(v, v)
            for v in vs[1:]:
                a, b = find(vs[0]), find(v)
                if a != b:
                    parent[max(a, b)] = min(a, b)
        groups = {}
        for v in parent:
            groups.setdefault(find(v), set()).add(v)
        return list(groups.values())

    def _solve_open(self, assign):
        """Cheapest completion of ``assign``; returns (cost, ones) or None."""
        open_rows = self._open_rows(assign)
        base = sum(self.cost[j] for j, v in assign.items() if v == 1)
        ones = {j for j, v in assign.items() if v == 1}
        if not open_rows:
            return base, ones
        extra = 0
        for comp in self._components(open_rows):
            sub = self._solve_component(assign, comp, None)
            if sub is None:
                return None
            extra += sub[0]
            ones |= sub[1]
        return base + extra, ones

    def _solve_component(self, assign, comp, limit):
        """Cheapest cost of the free variables in ``comp`` that closes its rows."""
        self.nodes += 1
        rows = [(k, free, need) for k, free, need in self._open_rows_in(assign, comp)]
        if not rows:
            return 0, set()
        lb = self._bound(rows)
        if limit is not None and lb >= limit:
            return None
        var = min((j for j in comp if j not in assign), key=lambda j: self.rank[j])
        best = None
        for value in (0, 1):
            trial = dict(assign)
            trial[var] = value
            touched = self.var_rows.get(var, [])
            if not self._propagate(trial, touched):
                continue
            new_ones = {j for j, v in trial.items() if v == 1 and assign.get(j) != 1}
            added = sum(self.cost[j] for j in new_ones)
            cap = None if best is None else best[0]
            if limit is not None:
                cap = limit if cap is None else min(cap, limit)
            if cap is not None and added >= cap:
                continue
            sub_open = self._open_rows_in(trial, comp | new_ones)
            total = added
            ones = set(new_ones)
            feasible = True
            for sub in self._components(sub_open):
                rem = None if cap is None else cap - total
                res = self._solve_component(trial, sub, rem)
                if res is None:
                    feasible = False
                    break
                total += res[0]
                ones |= res[1]
                if cap is not None and total >= cap:
                    feasible = False
                    break
            if feasible and (best is None or total < best[0]):
                best = (total, ones)
        return best

    def _open_rows_in(self, assign, comp):
        ks = set()
        for j in comp:
            ks.update(self.var_rows.get(j, ()))
        out = []
        for k in sorted(ks):
            have, free, rhs = self._row_state(k, assign)
            if have < rhs:
                out.append((k, free, rhs - have))
        return out


def solve_opa(problem):
    """Exact optimum of the placement problem, with the voltage-only extras."""
    n = problem.n
    cost = np.asarray(problem.c, float)
    if problem.secondary is not None:
        scale = int(np.sum(problem.secondary)) + 1
        weights = [int(round(cost[i])) * scale + int(problem.secondary[i]) for i in range(n)]
    else:
        weights = [int(round(x)) for x in cost]
    degree = np.diag(problem.A[:n]).astype(int)
    order = sorted(range(n), key=lambda i: (-degree[i], problem.bus_ids[i]))
    rows = problem.rows()
    cover = _as_cover(rows)
    if cover is not None:
        solver = _GraphCoverSolver(n, cover[0], cover[1], weights, order)
    else:
        solver = _CoverSolver(rows, weights, order)
    start = {problem.bus_ids.index(b): v for b, v in problem.fixed.items()}
    _, ones = solver.solve(start)
    gamma = np.zeros(n, int)
    gamma[sorted(ones)] = 1
    if not problem.is_feasible(gamma):
        raise GridFaultError("branch and bound returned an infeasible vector")
    net = problem.net
    voltage = frozenset(b for b in problem.voltage_candidates if not gamma[b - 1])
    voltage |= split_buses(net) if net is not None else frozenset()
    solution = PlacementSolution(gamma, list(problem.bus_ids), 0, voltage, 0, 0, 0, 0, 0, 0,
                                 float(cost @ gamma))
    if net is not None:
        monitored = frozenset(b for b, g in zip(problem.bus_ids, gamma) if g)
        for topo in problem.topologies:
            rep = check_theorem1(topo.with_monitoring(monitored))
            if not rep.observable_extended:
                raise GridFaultError("placement violates the observability conditions: " + rep.describe())
        solution = _with_bounds(net, solution, problem)
    return solution


def _with_bounds(net, solution, problem):
    d_bar, d1, d2, d3, r_star, delta_r = theorem3_bounds(net, solution, problem.objective)
    real = [b.id for b in net.buses if not b.fictitious]
    d_star = int(sum(solution.gamma[b - 1] for b in real))
    solution = replace(solution, d_star=d_star, d_bar=d_bar, d1=d1, d2=d2, d3=d3,
                       r_star=r_star, delta_r=delta_r)
    plain = not problem.user_pins and len(problem.topologies) == 1
    if plain and d_star > d_bar:
        raise GridFaultError(f"placement uses {d_star} units, above the bound {d_bar}")
    return solution


def theorem3_bounds(net, solution, objective="max_resolution"):
    """Upper bound on the unit count and the achieved resolution.

    Returns ``(d_bar, d1, d2, d3, r_star, delta_r)`` where n counts real buses
    only and fork degrees ignore lines to fictitious terminals.
    """
    real = [b.id for b in net.buses if not b.fictitious]
    n = len(real)
    monitored = solution.monitored
    forks = {b: net.degree(b, real_only=True) for b in real if net.degree(b, real_only=True) > 2}
    d1 = sum(rho - 2 for rho in forks.values())
    unmon_forks = {b for b in forks if b not in monitored}
    d2 = len(unmon_forks) if objective == "max_resolution" else 0
    d3 = len(solution.voltage_only)
    splits = split_buses(net)
    r_star = 1 + sum(forks[b] - 1 for b in unmon_forks) + len([s for s in splits if s not in forks])
    delta_r = sum(rho - 1 for b, rho in forks.items() if b in monitored)
    d_bar = n // 2 + 1 + d1 + d2 + d3
    return d_bar, d1, d2, d3, r_star, delta_r


def adjacent_forks(net):
    forks = {b.id for b in net.buses if net.degree(b.id, real_only=True) > 2}
    return any(k in forks for f in forks for k in net.neighbors(f, real_only=True))


def place(net, objective="max_resolution", splits=(), reconfig=(), pins=None):
    """Split the requested buses, solve the placement and return ``(net, solution)``."""
    for kappa in splits:
        net, _ = add_split_bus(net, kappa)
    problem = build_opa(net, objective, pins, reconfig)
    solution = solve_opa(problem)
    return apply_placement(net, solution), solution


def brute_force_opa(problem):
    """Enumerate all vectors (small problems only); returns the list of optimal ones."""
    n = problem.n
    best, winners = None, []
    for bits in itertools.product((0, 1), repeat=n):
        gamma = np.array(bits)
        if not problem.is_feasible(gamma):
            continue
        val = float(np.asarray(problem.c) @ gamma)
        if best is None or val < best - 1e-9:
            best, winners = val, [gamma]
        elif abs(val - best) <= 1e-9:
            winners.append(gamma)
    return best, winners
