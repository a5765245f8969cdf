"""Quasi-static phasor frames for faulted and healthy radial grids.

A scenario is a pre-fault steady state followed, from ``fault_time`` on, by
the steady state of the grid with a fault shunt inserted along one line.
Measurements are the true phasors with Gaussian noise on magnitude and angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import DomainError, GridFaultError
from .estimator import MeasurementFrame
from .network import PHASES, build_admittance, line_admittance, split_line

KIND_ALIASES = {
    "3ph": "3ph", "three_phase_ground": "3ph", "3ph-g": "3ph",
    "2ph": "2ph", "phase_phase": "2ph",
    "1ph": "1ph", "single_phase_ground": "1ph", "1ph-g": "1ph", "1ph-e": "1ph", "1ph-c": "1ph",
}
DEFAULT_PHASES = {"3ph": "abc", "2ph": "ab", "1ph": "a"}


@dataclass(frozen=True)
class NoiseSpec:
    sigma_vmag_rel: float = 1.6e-5
    sigma_imag_rel: float = 4e-3
    sigma_vang: float = 5.1e-5
    sigma_iang: float = 5.8e-3
    dt: float = 0.02
    seed: int = 0
    # isotropic floors (volts, amperes) keep the covariance definite at zero phasors
    vmag_floor: float = 1e-3
    imag_floor: float = 1e-4

    def __post_init__(self):
        sig = (self.sigma_vmag_rel, self.sigma_imag_rel, self.sigma_vang, self.sigma_iang)
        if min(sig) < 0 or self.vmag_floor < 0 or self.imag_floor < 0 or self.dt <= 0:
            raise DomainError("noise standard deviations must be nonnegative and dt positive")

    @classmethod
    def zero(cls, seed=0):
        return cls(0.0, 0.0, 0.0, 0.0, seed=seed, vmag_floor=0.0, imag_floor=0.0)

    @property
    def silent(self):
        return max(self.sigma_vmag_rel, self.sigma_imag_rel, self.sigma_vang, self.sigma_iang,
                   self.vmag_floor, self.imag_floor) == 0.0


@dataclass(frozen=True)
class FaultSpec:
    line_id: int
    fraction: float = 0.5
    kind: str = "3ph"
    phases: str | None = None
    impedance: complex = 1e-6

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise DomainError(f"fault fraction must lie in (0, 1), got {self.fraction}")
        if self.kind not in KIND_ALIASES:
            raise DomainError(f"unknown fault kind {self.kind!r}")
        phases = self.phases or DEFAULT_PHASES[self.base_kind]
        need = {"3ph": 3, "2ph": 2, "1ph": 1}[self.base_kind]
        if len(set(phases)) != need or not set(phases) <= set(PHASES):
            raise DomainError(f"{self.kind} fault needs {need} distinct phases, got {phases!r}")
        object.__setattr__(self, "phases", "".join(sorted(set(phases))))
        if abs(self.impedance) == 0:
            raise DomainError("fault impedance must be nonzero")

    @property
    def base_kind(self):
        return KIND_ALIASES[self.kind]

    @property
    def admittance(self):
        return 1.0 / complex(self.impedance)

    @classmethod
    def parse(cls, text):
        """Parse ``line=K,p=0.25,kind=1ph-e[,phases=a][,z=1e-6]``."""
        fields = dict(item.split("=", 1) for item in text.split(",") if item)
        try:
            return cls(int(fields["line"]), float(fields.get("p", 0.5)), fields.get("kind", "3ph"),
                       fields.get("phases"), complex(fields.get("z", 1e-6)))
        except KeyError as exc:
            raise DomainError(f"fault description lacks {exc}") from None
        except ValueError as exc:
            raise DomainError(f"bad fault description {text!r}: {exc}") from None

    def shunt_block(self):
        y = self.admittance
        idx = [PHASES.index(p) for p in self.phases]
        block = np.zeros((3, 3), complex)
        if self.base_kind == "2ph":
            i, k = idx
            block[i, i] = block[k, k] = y
            block[i, k] = block[k, i] = -y
        else:
            for i in idx:
                block[i, i] = y
        return block


@dataclass(frozen=True, eq=False)
class Scenario:
    net: object
    fault: FaultSpec | None = None
    fault_time: int = 25
    horizon: int = 100
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.horizon < 1 or not 0 <= self.fault_time < self.horizon:
            raise DomainError("fault_time must lie in [0, horizon)")


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Bus voltages and the currents injected into the lines, both (n, 3) complex."""

    voltages: np.ndarray
    currents: np.ndarray

    def restrict(self, n):
        return SteadyState(self.voltages[:n], self.currents[:n])


def source_currents(net):
    """Injected current vector (3n,) from loads, generators and the source equivalent."""
    inj = np.zeros(3 * net.n, complex)
    for bus, cur in net.injections.items():
        inj[3 * (bus - 1):3 * bus] += cur
    slack = net.slack
    if slack.source is not None:
        inj[3 * (slack.id - 1):3 * slack.id] += slack.source.norton_current()
    return inj


def solve_steady_state(net):
    """Linear solve of the full grid; measured currents are the line-side injections."""
    Y = build_admittance(net)
    inj = source_currents(net)
    try:
        lu = linalg.lu_factor(Y, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise GridFaultError(f"network admittance is singular: {exc}") from None
    pivots = np.abs(np.diag(lu[0]))
    if pivots.min() <= 1e-13 * pivots.max():
        raise GridFaultError("network admittance is singular (island without a source)")
    V = linalg.lu_solve(lu, inj)
    if not np.all(np.isfinite(V)) or np.abs(Y @ V - inj).max() > 1e-6 * max(1.0, np.abs(inj).max()):
        raise GridFaultError("network admittance is singular (island without a source)")
    currents = line_admittance(net) @ V
    return SteadyState(V.reshape(-1, 3), currents.reshape(-1, 3))


def apply_fault(net, spec):
    """Split the faulted line at the fault point and attach the fault shunt there."""
    if not 1 <= spec.line_id <= net.m:
        raise DomainError(f"unknown line {spec.line_id}")
    faulted = split_line(net, spec.line_id, spec.fraction)
    return faulted.with_shunt(faulted.n, spec.shunt_block())


def fault_current(net, spec, state=None):
    """Total phase currents drawn by the fault shunt."""
    faulted = apply_fault(net, spec)
    state = solve_steady_state(faulted) if state is None else state
    return spec.shunt_block() @ state.voltages[faulted.n - 1]


def metered_buses(net):
    """(voltage buses, current buses) of real meters, ascending."""
    real = {b.id for b in net.buses if not b.fictitious}
    mon = net.monitored & real
    return tuple(sorted(mon | (net.voltage_only & real))), tuple(sorted(mon))


def sample_phasors(true, sigma_rel, sigma_ang, floor, rng):
    """Noisy copies of ``true`` (T, k) complex; magnitude and angle noise then a floor."""
    T, k = true.shape
    mag = np.abs(true) * (1.0 + sigma_rel * rng.standard_normal((T, k)))
    ang = np.angle(true) + sigma_ang * rng.standard_normal((T, k))
    out = mag * np.exp(1j * ang)
    if floor:
        out = out + floor * (rng.standard_normal((T, k)) + 1j * rng.standard_normal((T, k)))
    return out


def noisy_phasors(pre, post, fault_time, horizon, v_buses, i_buses, noise, rng):
    """Noisy voltage (T, |v|, 3) and current (T, |i|, 3) arrays over the horizon."""
    vi = np.array(v_buses, int) - 1
    ii = np.array(i_buses, int) - 1
    faulted = (np.arange(horizon) >= fault_time)[:, None]
    v_true = np.where(faulted, post.voltages[vi].reshape(1, -1), pre.voltages[vi].reshape(1, -1))
    i_true = np.where(faulted, post.currents[ii].reshape(1, -1), pre.currents[ii].reshape(1, -1))
    v = sample_phasors(v_true, noise.sigma_vmag_rel, noise.sigma_vang, noise.vmag_floor, rng)
    i = sample_phasors(i_true, noise.sigma_imag_rel, noise.sigma_iang, noise.imag_floor, rng)
    return v.reshape(horizon, len(vi), 3), i.reshape(horizon, len(ii), 3)


def scenario_states(scenario):
    """Pre-fault and post-fault steady states restricted to the original buses."""
    net = scenario.net
    pre = solve_steady_state(net)
    if scenario.fault is None:
        return pre, pre
    post = solve_steady_state(apply_fault(net, scenario.fault)).restrict(net.n)
    return pre, post


def generate_frames(scenario, states=None):
    """Frames 0..horizon-1; deterministic for a given noise seed."""
    net = scenario.net
    pre, post = scenario_states(scenario) if states is None else states
    v_buses, i_buses = metered_buses(net)
    rng = np.random.default_rng(scenario.noise.seed)
    V, I = noisy_phasors(pre, post, scenario.fault_time, scenario.horizon, v_buses, i_buses,
                         scenario.noise, rng)
    frames = []
    for t in range(scenario.horizon):
        volts = {b: V[t, j] for j, b in enumerate(v_buses)}
        amps = {b: I[t, j] for j, b in enumerate(i_buses)}
        frames.append(MeasurementFrame(t, volts, amps))
    return frames


def frame_matrix(layout, v_buses, i_buses, V, I):
    """Measurement columns (D x T) for the given layout from noisy phasor arrays."""
    vpos = {b: j for j, b in enumerate(v_buses)}
    ipos = {b: j for j, b in enumerate(i_buses)}
    T = V.shape[0]
    vs = [V[:, vpos[s]] for s in layout.v_sources]
    cur = [np.zeros((T, 3), complex) if b in layout.pseudo else I[:, ipos[b]] for b in layout.i_buses]
    v = np.concatenate(vs, axis=1) if vs else np.zeros((T, 0), complex)
    i = np.concatenate(cur, axis=1) if cur else np.zeros((T, 0), complex)
    return np.concatenate([v.real, v.imag, i.real, i.imag], axis=1).T


def with_noise_seed(scenario, seed):
    return replace(scenario, noise=replace(scenario.noise, seed=seed))
