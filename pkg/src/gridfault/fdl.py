"""Detection, localization and characterization of faults from estimator-bank outputs.

Per frame the bank yields one weighted residual per model and the largest
zero-sequence current estimated at the earthing bus. A fault is detected by
a jump of the base-model residual or by a zero-sequence current above its
threshold; after ``delta`` further frames the cluster whose residual moved
least from its healthy mean is reported, together with the faulted phases.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, CharacterizationInconclusive, DomainError, StalenessError
from .estimator import state_to_phasors
from .network import PHASES

log = logging.getLogger(__name__)

DEFAULT_PERCENTILE = 99.9
DEFAULT_GAMMA = 0.2
DEFAULT_TH_V = 0.05
MIN_FRAMES = 1000
THRESHOLD_FLOOR = 1e-12
# relative voltage drift beyond which the covariance is re-evaluated
REFIT_TOLERANCE = 1e-3


@dataclass
class Calibration:
    mu_dw0: float
    th_w: float
    th_0ng: float
    mu_w: np.ndarray
    sample_count: int
    percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        self.mu_w = np.asarray(self.mu_w, float)
        if self.th_w <= 0 or self.th_0ng <= 0:
            raise CalibrationError("thresholds must be positive")

    def to_dict(self):
        d = asdict(self)
        d["mu_w"] = [float(x) for x in self.mu_w]
        return d

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["mu_dw0"]), float(data["th_w"]), float(data["th_0ng"]),
                   np.asarray(data["mu_w"], float), int(data["sample_count"]),
                   float(data.get("percentile", DEFAULT_PERCENTILE)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate_outputs(output, percentile=DEFAULT_PERCENTILE, min_frames=MIN_FRAMES):
    """Thresholds from bank outputs of healthy frames."""
    T = output.wmr.shape[0]
    if T < max(min_frames, 2):
        raise CalibrationError(f"calibration needs at least {min_frames} healthy frames, got {T}")
    dw = np.diff(output.w0)
    mu = float(dw.mean())
    th_w = float(np.percentile(np.abs(dw - mu), percentile))
    th_0 = float(np.percentile(output.max_zero_seq(), percentile))
    mu_w = output.wmr[:, 1:].mean(axis=0)
    return Calibration(mu, max(th_w, THRESHOLD_FLOOR), max(th_0, THRESHOLD_FLOOR), mu_w, T, percentile)


def calibrate(bank, frames, percentile=DEFAULT_PERCENTILE, min_frames=MIN_FRAMES):
    """Calibrate from healthy frames (a list of frames or a D x T measurement matrix)."""
    Z = frames if isinstance(frames, np.ndarray) else bank.layout.matrix(list(frames))
    return calibrate_outputs(bank.evaluate(Z), percentile, min_frames)


def detect(cal, w0_t, w0_prev, zero_seq_t):
    """Return ``(detected, path)``; the residual jump is tested before the zero-sequence current."""
    if w0_prev is not None and abs((w0_t - w0_prev) - cal.mu_dw0) > cal.th_w:
        return True, "wmr"
    if zero_seq_t > cal.th_0ng:
        return True, "zero_sequence"
    return False, None


def localize(cal, window, delta=None):
    """Index (1-based) of the virtual model whose mean residual over the window moved least.

    ``window`` has one row per frame t_F..t_F+delta and one column per virtual
    model. Ties go to the lowest index.
    """
    window = np.atleast_2d(np.asarray(window, float))
    if delta is not None and window.shape[0] < delta + 1:
        raise StalenessError(f"window holds {window.shape[0]} frames, needs {delta + 1}")
    if window.shape[1] != cal.mu_w.size:
        raise DomainError("window width does not match the calibration")
    score = np.abs(window.mean(axis=0) - cal.mu_w)
    return int(np.argmin(score)) + 1


def virtual_bus_quantities(model, x_hat):
    """Estimated fault-point voltages and current of a virtual model.

    Cluster models also carry midpoint buses on two-monitored lines, and the
    fault current lands on whichever added bus is nearest the fault. The
    current is therefore summed over all added buses and the voltage is read
    at the one carrying the largest current.
    """
    V = state_to_phasors(np.asarray(x_hat), model.n_bus)
    added = model.added_buses or (model.virtual_bus,)
    rows = np.concatenate([np.arange(3 * (b - 1), 3 * b) for b in added])
    currents = (model.Y[rows] @ V.reshape(-1)).reshape(len(added), 3)
    strongest = added[int(np.argmax(np.abs(currents).sum(axis=1)))]
    return V[strongest - 1], currents.sum(axis=0)


def characterize_phasors(v_vb, i_vb, vphase, gamma=DEFAULT_GAMMA, th_v=DEFAULT_TH_V, min_current=1e-9):
    """Faulted phases from virtual-bus voltages (volts) and currents (amperes)."""
    vmag = np.abs(np.asarray(v_vb)) / vphase
    low = np.nonzero(vmag < th_v)[0]
    if low.size == 1:
        return PHASES[low[0]], True
    imag = np.abs(np.asarray(i_vb))
    top = imag.max()
    if top <= min_current:
        raise CharacterizationInconclusive("virtual-bus currents vanish and no phase voltage is low")
    return "".join(PHASES[p] for p in range(3) if imag[p] > gamma * top), False


def characterize(model, x_hat, gamma=DEFAULT_GAMMA, th_v=DEFAULT_TH_V):
    """Faulted phases as a string such as ``"ab"``."""
    v, i = virtual_bus_quantities(model, x_hat)
    return characterize_phasors(v, i, model.net.base.vphase, gamma, th_v)[0]


@dataclass
class FaultEvent:
    t_F: int
    cluster: int
    phases: str
    path: str
    delta: int
    mode: str = "cluster"
    lines: tuple = ()
    voltage_override: bool = False
    inconclusive: bool = False

    def to_dict(self):
        return {"t_F": self.t_F, "cluster": self.cluster, "phases": list(self.phases),
                "path": self.path, "delta": self.delta}


@dataclass
class _Pending:
    t_F: int
    path: str
    rows: list = field(default_factory=list)
    zs: list = field(default_factory=list)


class Pipeline:
    """Frame-by-frame detector; one instance per topology and calibration."""

    def __init__(self, bank, cal, delta=0, gamma=DEFAULT_GAMMA, th_v=DEFAULT_TH_V,
                 refit_tol=REFIT_TOLERANCE, refit_cache=None):
        if not 0 <= delta <= 10:
            raise DomainError("delta must lie in 0..10")
        if cal.mu_w.size != bank.size - 1:
            raise DomainError("calibration does not match the estimator bank")
        self.bank = bank
        self.cal = cal
        self.delta = int(delta)
        self.gamma = gamma
        self.th_v = th_v
        self.refit_tol = refit_tol
        # refitted banks keyed by detection frame, shareable between pipelines
        self.refit_cache = {} if refit_cache is None else refit_cache
        self.reset()

    def reset(self):
        self._prev = None
        self._pending = None

    def step(self, frame):
        z = self.bank.layout.vector(frame)
        out = self.bank.evaluate(z)
        return self._advance(frame.t, z, out.wmr[0], out.max_zero_seq()[0])

    def process(self, frames, limit=None, since=None, output=None, warmup=0):
        """Run a whole stream (frames or a D x T matrix with times 0..T-1); returns the events.

        With ``limit`` the stream stops after that many events detected at or
        after time ``since``. ``output`` may carry the bank's evaluation of
        the same stream when several pipelines share it. The first ``warmup``
        frames only prime the residual predecessor and cannot raise events.
        """
        if isinstance(frames, np.ndarray):
            Z, times = frames, range(frames.shape[1])
        else:
            frames = list(frames)
            Z, times = self.bank.layout.matrix(frames), [fr.t for fr in frames]
        out = self.bank.evaluate(Z) if output is None else output
        zmax = out.max_zero_seq()
        events = []
        for j, t in enumerate(times):
            if j < warmup:
                self._prev = out.wmr[j, 0]
                continue
            ev = self._advance(t, Z[:, j], out.wmr[j], zmax[j])
            if ev is not None:
                events.append(ev)
                if limit is not None and sum(since is None or e.t_F >= since for e in events) >= limit:
                    break
        return events

    def _advance(self, t, z, wmr, zero_seq):
        prev, self._prev = self._prev, wmr[0]
        if self._pending is None:
            hit, path = detect(self.cal, wmr[0], prev, zero_seq)
            if not hit:
                return None
            self._pending = _Pending(t, path)
        elif detect(self.cal, wmr[0], prev, zero_seq)[0]:
            log.debug("detection at t=%s ignored while an event is pending", t)
        self._pending.rows.append(np.array(wmr[1:]))
        self._pending.zs.append(np.array(z))
        if len(self._pending.rows) < self.delta + 1:
            return None
        pending, self._pending = self._pending, None
        return self._emit(pending)

    def _emit(self, pending):
        bank, rows = self.bank, np.vstack(pending.rows)
        z_first = pending.zs[0]
        if bank.noise is not None and bank.drift(z_first) > self.refit_tol:
            # the operating point moved: covariance re-evaluated at the detection frame
            key = z_first.tobytes()
            if key not in self.refit_cache:
                self.refit_cache[key] = (bank.refit(z_first), {})
            bank, seen = self.refit_cache[key]
            keys = [z.tobytes() for z in pending.zs]
            todo = [j for j, k in enumerate(keys) if k not in seen]
            if todo:
                fresh = bank.evaluate(np.column_stack([pending.zs[j] for j in todo])).wmr[:, 1:]
                seen.update((keys[j], row) for j, row in zip(todo, fresh))
            rows = np.vstack([seen[k] for k in keys])
        k = localize(self.cal, rows, self.delta)
        model = bank.models[k]
        est = bank.estimate(k, z_first)
        v, i = virtual_bus_quantities(model, est.x_hat)
        try:
            phases, override = characterize_phasors(v, i, model.net.base.vphase, self.gamma, self.th_v)
            inconclusive = False
        except CharacterizationInconclusive:
            phases, override, inconclusive = "", False, True
        ident = model.tag[1]
        lines = (ident,) if self.bank.mode == "line" else self.bank.partition.lines(ident)
        return FaultEvent(pending.t_F, ident, phases, pending.path, self.delta, self.bank.mode,
                          tuple(lines), override, inconclusive)
