"""Seeded Monte Carlo campaigns over fault scenarios and localization delays.

Every run draws its own noise from a seed derived from (campaign seed,
scenario index, run index). The same noisy stream is processed once for each
localization delay, so delay comparisons use common random numbers. Frames
before the fault only prime the detector; false alarms on healthy data are
measured by calibration experiments instead.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .benchmark import benchmark_setup
from .errors import DomainError, GridFaultError
from .estimator import BankOutput, MeasurementFrame, build_estimator_bank
from .fdl import DEFAULT_GAMMA, DEFAULT_TH_V, Pipeline, calibrate
from .network import load_network
from .placement import theorem3_bounds
from .simulator import (FaultSpec, NoiseSpec, apply_fault, frame_matrix, metered_buses,
                        noisy_phasors, solve_steady_state)

CALIBRATION_STREAM = 1_000_000
COUNT_FIELDS = ("detected_localized", "detected_mislocalized", "undetected", "errors")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    line: int
    fraction: float
    topology: int = 1
    phases: str | None = None
    grounding: str | None = None

    @property
    def fault(self):
        return FaultSpec(self.line, self.fraction, self.kind, self.phases)

    @property
    def earthing(self):
        """Neutral earthing of the scenario: compensated for 1ph-c, solid otherwise."""
        if self.grounding:
            return self.grounding
        return "petersen" if self.kind == "1ph-c" else "solid"

    @property
    def name(self):
        return f"{self.kind} {int(round(self.fraction * 100))}% line {self.line} topology {self.topology}"

    def to_dict(self):
        d = {"kind": self.kind, "line": self.line, "p": self.fraction, "topology": self.topology}
        if self.phases:
            d["phases"] = self.phases
        if self.grounding:
            d["grounding"] = self.grounding
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["line"]), float(d.get("p", 0.5)), int(d.get("topology", 1)),
                   d.get("phases"), d.get("grounding"))


@dataclass
class Campaign:
    scenarios: list
    runs_per_scenario: int = 100
    deltas: tuple = (0, 2, 3, 4, 5)
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    fault_time: int = 1
    calibration_frames: int = 20000
    network: str | None = None
    results_path: str | None = None
    curves_path: str | None = None
    gamma: float = DEFAULT_GAMMA
    th_v: float = DEFAULT_TH_V

    def __post_init__(self):
        if self.runs_per_scenario < 1:
            raise DomainError("a campaign needs at least one run per scenario")
        if not self.scenarios:
            raise DomainError("a campaign needs at least one scenario")
        self.deltas = tuple(int(d) for d in self.deltas)

    @classmethod
    def from_dict(cls, data, base_dir="."):
        noise = NoiseSpec(**data.get("noise", {}))
        net = data.get("network")
        if net and net != "benchmark":
            net = str(Path(base_dir) / net)
        return cls([ScenarioSpec.from_dict(s) for s in data["scenarios"]],
                   int(data.get("runs", 100)), tuple(data.get("deltas", (0, 2, 3, 4, 5))),
                   int(data.get("seed", 0)), noise, int(data.get("fault_time", 1)),
                   int(data.get("calibration_frames", 20000)),
                   None if net in (None, "benchmark") else net,
                   data.get("results"), data.get("curves"),
                   float(data.get("gamma", DEFAULT_GAMMA)), float(data.get("th_v", DEFAULT_TH_V)))

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)


@dataclass
class CampaignResult:
    """Counts per (scenario, delta) and characterization tallies per scenario."""

    scenarios: list
    deltas: tuple
    counts: dict
    phases_correct: dict
    override_correct: dict
    runs: int

    def rate(self, scenario_index, delta):
        return self.counts[(scenario_index, delta)]["detected_localized"] / self.runs

    def detected(self, scenario_index, delta):
        c = self.counts[(scenario_index, delta)]
        return c["detected_localized"] + c["detected_mislocalized"]

    def rows(self):
        out = []
        for i, sc in enumerate(self.scenarios):
            for d in self.deltas:
                c = self.counts[(i, d)]
                out.append({"scenario": i, "kind": sc.kind, "line": sc.line, "p": sc.fraction,
                            "topology": sc.topology, "grounding": sc.earthing, "delta": d,
                            **{k: c[k] for k in COUNT_FIELDS},
                            "phases_correct": self.phases_correct[i],
                            "override_correct": self.override_correct[i], "runs": self.runs})
        return out

    def write_csv(self, path):
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def default_campaign(runs=100, seed=2024):
    """Twenty scenarios: three fault kinds at three positions on both topologies, plus two 1ph-c."""
    lines = {"3ph": 80, "2ph": 19, "1ph-e": 60}
    phases = {"3ph": None, "2ph": "bc", "1ph-e": "b"}
    scenarios = [ScenarioSpec(kind, lines[kind], p, topo, phases[kind])
                 for topo in (1, 2) for kind in ("3ph", "2ph", "1ph-e") for p in (0.25, 0.5, 0.75)]
    scenarios += [ScenarioSpec("1ph-c", 19, 0.25, 1, "a"), ScenarioSpec("1ph-c", 10, 0.25, 2, "a")]
    return Campaign(scenarios, runs, seed=seed)


class _Context:
    """Calibrated bank of one (network, earthing, topology) combination."""

    def __init__(self, net, noise, seed_seq, frames):
        self.net = net
        self.pre = solve_steady_state(net)
        self.v_buses, self.i_buses = metered_buses(net)
        rng = np.random.default_rng(seed_seq)
        V, I = noisy_phasors(self.pre, self.pre, frames + 1, frames + 1, self.v_buses, self.i_buses,
                             noise, rng)
        ref = MeasurementFrame(0, dict(zip(self.v_buses, V[0])), dict(zip(self.i_buses, I[0])))
        # exact data has no covariance to speak of: unit weights instead
        kw = {} if noise.silent else {"noise": noise, "reference_frame": ref}
        self.bank = build_estimator_bank(net, **kw).prepare()
        Z = frame_matrix(self.bank.layout, self.v_buses, self.i_buses, V[1:], I[1:])
        self.cal = calibrate(self.bank, Z)


def _contexts(campaign):
    keys = sorted({(sc.earthing, sc.topology) for sc in campaign.scenarios})
    out = {}
    for j, (earthing, topo) in enumerate(keys):
        if campaign.network:
            net = load_network(campaign.network)
            if topo != 1:
                raise DomainError("custom networks support a single topology")
        else:
            net, _ = benchmark_setup(earthing, topo)
        if earthing != "solid" and campaign.network:
            raise DomainError("custom networks carry their own earthing")
        seq = np.random.SeedSequence([campaign.seed, CALIBRATION_STREAM + j])
        out[(earthing, topo)] = _Context(net, campaign.noise, seq, campaign.calibration_frames)
    return out


def _run_scenario(campaign, index, ctx):
    sc = campaign.scenarios[index]
    spec = sc.fault
    faulted = apply_fault(ctx.net, spec)
    post = solve_steady_state(faulted).restrict(ctx.net.n)
    horizon = campaign.fault_time + max(campaign.deltas) + 1
    counts = {d: dict.fromkeys(COUNT_FIELDS, 0) for d in campaign.deltas}
    phases_ok = override_ok = 0
    streams = []
    for run in range(campaign.runs_per_scenario):
        rng = np.random.default_rng(np.random.SeedSequence([campaign.seed, index, run]))
        V, I = noisy_phasors(ctx.pre, post, campaign.fault_time, horizon, ctx.v_buses, ctx.i_buses,
                             campaign.noise, rng)
        streams.append(frame_matrix(ctx.bank.layout, ctx.v_buses, ctx.i_buses, V, I))
    # one product for every run of the scenario
    out = ctx.bank.evaluate(np.hstack(streams))
    for run, Z in enumerate(streams):
        cols = slice(run * horizon, (run + 1) * horizon)
        run_out = BankOutput(out.wmr[cols], out.zero_seq[cols])
        cache = {}
        for d in campaign.deltas:
            try:
                pipe = Pipeline(ctx.bank, ctx.cal, d, campaign.gamma, campaign.th_v, refit_cache=cache)
                events = pipe.process(Z, 1, campaign.fault_time, run_out, campaign.fault_time)
                events = [e for e in events if e.t_F >= campaign.fault_time]
            except GridFaultError:
                counts[d]["errors"] += 1
                continue
            if not events:
                counts[d]["undetected"] += 1
                continue
            ev = events[0]
            hit = spec.line_id in ev.lines
            counts[d]["detected_localized" if hit else "detected_mislocalized"] += 1
            if d == campaign.deltas[0]:
                phases_ok += ev.phases == spec.phases
                override_ok += ev.voltage_override and ev.phases == spec.phases
    return counts, phases_ok, override_ok


def worker_count():
    try:
        return max(1, int(os.environ.get("GRIDFAULT_THREADS", "1")))
    except ValueError:
        return 1


def run_campaign(campaign, workers=None):
    """Run every scenario; the result depends only on the campaign definition."""
    contexts = _contexts(campaign)
    workers = worker_count() if workers is None else workers
    tasks = [(i, contexts[(sc.earthing, sc.topology)]) for i, sc in enumerate(campaign.scenarios)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda a: _run_scenario(campaign, *a), tasks))
    else:
        results = [_run_scenario(campaign, *a) for a in tasks]
    counts, phases, overrides = {}, {}, {}
    for i, (c, ph, ov) in enumerate(results):
        for d, cell in c.items():
            counts[(i, d)] = cell
        phases[i], overrides[i] = ph, ov
    result = CampaignResult(list(campaign.scenarios), campaign.deltas, counts, phases, overrides,
                            campaign.runs_per_scenario)
    if campaign.results_path:
        result.write_csv(campaign.results_path)
    return result


# --- placement curves ------------------------------------------------------

def chain_network(n, length_km=0.5):
    """Plain radial chain of ``n`` buses with cable data, bus 1 as the source."""
    from .benchmark import CABLE_Z0, CABLE_Z1
    from .network import Bus, Line, NetworkModel, Source

    lines = tuple(Line(k, k, k + 1, CABLE_Z1 * length_km, CABLE_Z0 * length_km) for k in range(1, n))
    buses = (Bus(1, is_slack=True, source=Source(5773.5 + 0j, 0.02 + 0.21j)),) + \
        tuple(Bus(i) for i in range(2, n + 1))
    return NetworkModel(buses, lines)


def bound_percent(n, extras):
    """Upper bound on the share of monitored buses, in percent."""
    return 100.0 * (n // 2 + 1 + extras) / n


def emit_curves(ns=(10, 25, 50, 100, 250, 500), extras_pct=(0, 5, 10, 15, 20),
                r_pct=tuple(range(0, 51, 5)), delta_r_pct=(0, 5, 10, 15), check_chains=(50, 100, 250, 500)):
    """Rows for the bound-versus-size and bound-versus-resolution curves.

    Each row is ``(curve, x, level, d_bar_pct)``. Chains listed in
    ``check_chains`` are solved exactly and reported as ``solved_chain`` rows.
    """
    from .placement import build_opa, solve_opa

    rows = []
    for level in extras_pct:
        for n in ns:
            extras = int(round(level * n / 100.0))
            rows.append(("bound_vs_n", n, level, bound_percent(n, extras)))
    for level in delta_r_pct:
        for r in r_pct:
            rows.append(("bound_vs_resolution", r, level, r + 50.0 + level))
    for n in check_chains:
        net = chain_network(n)
        sol = solve_opa(build_opa(net, "min_count"))
        d_bar = theorem3_bounds(net, sol, "min_count")[0]
        rows.append(("solved_chain", n, 100.0 * sol.d_star / n, 100.0 * d_bar / n))
    return rows


def write_curves(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "x", "level", "d_bar_pct"])
        for curve, x, level, value in rows:
            w.writerow([curve, x, f"{level:.6g}", f"{value:.6g}"])


def with_runs(campaign, runs):
    return replace(campaign, runs_per_scenario=runs)
