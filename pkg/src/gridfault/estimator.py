"""Weighted least squares state estimation from phasor measurements.

The state of a model with ``n`` buses is the real vector
``[Re V (bus 1 a,b,c, bus 2 a,b,c, ...), Im V (same order)]`` of length 6n.
Measurements are stacked as ``[Re V | Im V | Re I | Im I]`` over the metered
buses in increasing id order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as sparse_linalg

from .errors import ObservabilityError, TopologyError
from .network import PHASES, line_admittance, split_line
from .observability import compute_ufc2, require_theorem1

DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True, eq=False)
class MeasurementFrame:
    """One synchronized sample: complex phase voltages and injected currents per bus."""

    t: int
    voltages: dict
    currents: dict = field(default_factory=dict)

    def to_rows(self):
        rows = []
        for bus in sorted(self.voltages):
            v = self.voltages[bus]
            cur = self.currents.get(bus)
            for p in range(3):
                row = [self.t, bus, PHASES[p], abs(v[p]), np.angle(v[p])]
                row += [abs(cur[p]), np.angle(cur[p])] if cur is not None else ["", ""]
                rows.append(row)
        return rows


def write_stream(frames, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", "phase", "Vmag", "Vang", "Imag", "Iang"])
        for fr in frames:
            for row in fr.to_rows():
                w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in row])


def read_stream(path):
    frames = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            t, bus, p = int(rec["t"]), int(rec["bus"]), PHASES.index(rec["phase"])
            volts, amps = frames.setdefault(t, ({}, {}))
            volts.setdefault(bus, np.zeros(3, complex))[p] = float(rec["Vmag"]) * np.exp(1j * float(rec["Vang"]))
            if rec["Imag"] not in ("", None):
                amps.setdefault(bus, np.zeros(3, complex))[p] = float(rec["Imag"]) * np.exp(1j * float(rec["Iang"]))
    return [MeasurementFrame(t, *frames[t]) for t in sorted(frames)]


class MeasurementLayout:
    """Which buses contribute voltage and current rows, and where their data comes from.

    A fictitious terminal takes its voltage from the meter at the bus it was
    split from and a zero current pseudo-measurement.
    """

    def __init__(self, net, monitored=None, voltage_only=None):
        monitored = net.monitored if monitored is None else frozenset(monitored)
        voltage_only = net.voltage_only if voltage_only is None else frozenset(voltage_only)
        borrowed = {net.bus(b).fictitious_of for b in monitored if net.bus(b).fictitious}
        self.v_buses = tuple(sorted((monitored | voltage_only) - borrowed))
        self.v_sources = tuple(net.bus(b).fictitious_of if net.bus(b).fictitious else b
                               for b in self.v_buses)
        self.i_buses = tuple(sorted(monitored))
        self.pseudo = frozenset(b for b in monitored if net.bus(b).fictitious)
        self.nv = 3 * len(self.v_buses)
        self.ni = 3 * len(self.i_buses)
        self.D = 2 * self.nv + 2 * self.ni

    def pseudo_rows(self):
        rows = []
        for j, b in enumerate(self.i_buses):
            if b in self.pseudo:
                for p in range(3):
                    rows += [2 * self.nv + 3 * j + p, 2 * self.nv + self.ni + 3 * j + p]
        return np.array(sorted(rows), dtype=int)

    def phasors(self, frame):
        """Complex measured phasors in row order (voltage block, then current block)."""
        v = np.concatenate([frame.voltages[s] for s in self.v_sources]) if self.v_buses else np.zeros(0, complex)
        cur = [np.zeros(3, complex) if b in self.pseudo else frame.currents[b] for b in self.i_buses]
        i = np.concatenate(cur) if cur else np.zeros(0, complex)
        return v, i

    def vector(self, frame):
        v, i = self.phasors(frame)
        return np.concatenate([v.real, v.imag, i.real, i.imag])

    def matrix(self, frames):
        """Stack measurement vectors of several frames as columns (D x T)."""
        return np.column_stack([self.vector(fr) for fr in frames]) if frames else np.zeros((self.D, 0))


def polar_covariance(phasors, sigma_mag_rel, sigma_ang, floor=0.0):
    """First-order covariance of (Re, Im) for phasors with polar Gaussian noise.

    Returns arrays ``(var_re, var_im, cov)`` with one entry per phasor. An
    isotropic ``floor`` standard deviation is added to both components.
    """
    mag = np.abs(phasors)
    ang = np.angle(phasors)
    c, s = np.cos(ang), np.sin(ang)
    var_m = (sigma_mag_rel * mag) ** 2
    var_t = (mag * sigma_ang) ** 2
    var_re = c * c * var_m + s * s * var_t + floor**2
    var_im = s * s * var_m + c * c * var_t + floor**2
    cov = c * s * (var_m - var_t)
    return var_re, var_im, cov


def measurement_covariance(layout, frame, noise, epsilon=DEFAULT_EPSILON):
    """Covariance R of the measurement vector evaluated at the phasors of ``frame``."""
    return covariance_at(layout, *layout.phasors(frame), noise, epsilon)


def covariance_from_vector(layout, z, noise, epsilon=DEFAULT_EPSILON):
    """Covariance R evaluated at the phasors encoded in a measurement vector."""
    v, i = split_vector(layout, z)
    return covariance_at(layout, v, i, noise, epsilon)


def split_vector(layout, z):
    """Complex (voltage, current) phasors encoded in a measurement vector."""
    z = np.asarray(z, float)
    nv, ni = layout.nv, layout.ni
    v = z[:nv] + 1j * z[nv:2 * nv]
    i = z[2 * nv:2 * nv + ni] + 1j * z[2 * nv + ni:]
    return v, i


def covariance_at(layout, v, i, noise, epsilon=DEFAULT_EPSILON):
    R = np.zeros((layout.D, layout.D))
    blocks = [(v, 0, layout.nv, noise.sigma_vmag_rel, noise.sigma_vang, noise.vmag_floor),
              (i, 2 * layout.nv, layout.ni, noise.sigma_imag_rel, noise.sigma_iang, noise.imag_floor)]
    for ph, start, count, srel, sang, floor in blocks:
        if not count:
            continue
        vr, vi, cv = polar_covariance(ph, srel, sang, floor)
        re = start + np.arange(count)
        im = re + count
        R[re, re] = vr
        R[im, im] = vi
        R[re, im] = cv
        R[im, re] = cv
    _apply_pseudo(R, layout, epsilon)
    return R


def _apply_pseudo(R, layout, epsilon):
    rows = layout.pseudo_rows()
    if rows.size:
        R[rows, :] = 0.0
        R[:, rows] = 0.0
        R[rows, rows] = epsilon


def admittance_rows(Y, buses, n_bus):
    """Real rows mapping the rectangular state to (Re I, Im I) at ``buses``."""
    idx = np.concatenate([np.arange(3 * (b - 1), 3 * b) for b in buses]) if buses else np.zeros(0, int)
    G, B = Y.real[idx, :], Y.imag[idx, :]
    return np.vstack([np.hstack([G, -B]), np.hstack([B, G])])


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    net: object
    layout: MeasurementLayout
    Y: np.ndarray
    H: np.ndarray
    R: np.ndarray
    tag: tuple = ("base",)
    virtual_bus: int | None = None
    epsilon: float = DEFAULT_EPSILON
    # every bus added to the base grid (midpoint buses and the virtual bus)
    added_buses: tuple = ()

    @property
    def n_bus(self):
        return self.net.n

    @property
    def N(self):
        return self.H.shape[1]

    @property
    def D(self):
        return self.H.shape[0]

    @property
    def H_V(self):
        return self.H[:2 * self.layout.nv]

    @property
    def H_I(self):
        return self.H[2 * self.layout.nv:]

    def with_covariance(self, R):
        R = np.array(R, float)
        _apply_pseudo(R, self.layout, self.epsilon)
        return replace(self, R=R)

    def rank(self, rtol=1e-8):
        return numeric_rank(self.H, rtol)

    @cached_property
    def solver(self):
        return WlsSolver(self)


def numeric_rank(H, rtol=1e-8):
    s = np.linalg.svd(H, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s.size else 0


def build_measurement_model(net, Y=None, monitored=None, voltage_only=None,
                            epsilon=DEFAULT_EPSILON, covariance=None, tag=("base",),
                            virtual_bus=None, added_buses=None):
    """Assemble H (and a default R) for the given network and meter placement.

    Without ``covariance`` the measured rows get unit variance; fictitious
    current rows always get variance ``epsilon``.
    """
    if Y is None:
        Y = line_admittance(net)
    layout = MeasurementLayout(net, monitored, voltage_only)
    n = net.n
    vcols = np.concatenate([np.arange(3 * (b - 1), 3 * b) for b in layout.v_buses]) \
        if layout.v_buses else np.zeros(0, int)
    HV = np.zeros((2 * layout.nv, 6 * n))
    HV[np.arange(layout.nv), vcols] = 1.0
    HV[layout.nv + np.arange(layout.nv), 3 * n + vcols] = 1.0
    HI = admittance_rows(Y, list(layout.i_buses), n)
    H = np.vstack([HV, HI])
    if covariance is None:
        R = np.eye(layout.D)
    else:
        R = np.array(covariance, float)
    _apply_pseudo(R, layout, epsilon)
    if added_buses is None:
        added_buses = () if virtual_bus is None else (virtual_bus,)
    return MeasurementModel(net, layout, Y, H, R, tag, virtual_bus, epsilon, tuple(added_buses))


class WlsSolver:
    """Orthogonal factorization of the whitened measurement matrix.

    With R = L L^T and L^{-1} H = Q [U; 0], the estimate is
    x = U^{-1} Q1^T L^{-1} z and the weighted residual is |Q2^T L^{-1} z|.
    """

    def __init__(self, model, rtol=1e-10):
        self.model = model
        H, R = model.H, model.R
        D, N = H.shape
        if D < N:
            raise ObservabilityError(f"model {model.tag} has fewer measurements than states", model.tag)
        self.L = linalg.cholesky(R, lower=True)
        A = linalg.solve_triangular(self.L, H, lower=True)
        Q, U = linalg.qr(A, mode="full")
        d = np.abs(np.diag(U))
        if d.size and d.min() <= rtol * d.max():
            raise ObservabilityError(f"model {model.tag} is not observable (rank deficient H)", model.tag)
        self.U = U[:N]
        self.Q1 = Q[:, :N]
        self.Q2 = Q[:, N:]

    def whiten(self, z):
        return linalg.solve_triangular(self.L, z, lower=True)

    def solve(self, z):
        b = self.whiten(np.asarray(z, float))
        x = linalg.solve_triangular(self.U, self.Q1.T @ b)
        w = np.linalg.norm(self.Q2.T @ b, axis=0)
        return x, w

    def residual_operator(self):
        """Matrix K with |K z| equal to the weighted residual of z."""
        return linalg.solve_triangular(self.L, self.Q2, lower=True, trans="T").T

    def gain(self, rows=None):
        """Matrix G with G z equal to the selected entries of the estimate."""
        M = linalg.solve_triangular(self.L, self.Q1, lower=True, trans="T").T
        G = linalg.solve_triangular(self.U, M)
        return G if rows is None else G[rows]


@dataclass(frozen=True)
class EstimateResult:
    x_hat: np.ndarray
    wmr: float
    tag: tuple


def wls(model, z):
    x, w = model.solver.solve(z)
    return EstimateResult(x, float(w), model.tag)


def state_to_phasors(x, n_bus):
    """Rectangular state vector to an (n_bus, 3) complex voltage array."""
    return (x[:3 * n_bus] + 1j * x[3 * n_bus:6 * n_bus]).reshape(n_bus, 3)


def injected_current_estimates(model, x_hat):
    """Estimated injected currents at every bus of the model, shape (n, 3)."""
    V = state_to_phasors(np.asarray(x_hat), model.n_bus).reshape(-1)
    return (model.Y @ V).reshape(model.n_bus, 3)


def zero_sequence_magnitude(currents, bus):
    currents = np.asarray(currents)
    if not 1 <= bus <= currents.shape[0]:
        raise IndexError(f"bus {bus} not in model")
    return float(abs(currents[bus - 1].sum() / 3.0))


# --- estimator bank -----------------------------------------------------

def _cluster_extension(net, lines):
    """Split every two-monitored line of a cluster at its middle, then add the virtual bus.

    The virtual bus sits at the middle of the lowest-id line, or at a quarter
    of it when that line already received a middle bus.
    """
    mon = net.monitored
    rep = min(lines)
    ext = net
    for lid in sorted(lines):
        a, b = net.line(lid).ends
        if a in mon and b in mon:
            ext = split_line(ext, lid, 0.5)
    ext = split_line(ext, rep, 0.5)
    return ext, ext.n, tuple(range(net.n + 1, ext.n + 1))


class AugmentedSolver:
    """Sparse LU of the augmented system [[R, H], [H^T, 0]] [lam; x] = [z; 0].

    The weighted residual is sqrt(lam^T R lam). Cheap to refactor, so it is
    used when the covariance changes while the measurement matrix does not.
    """

    def __init__(self, H, R):
        H = H if sparse.issparse(H) else sparse.csr_matrix(H)
        self.R = R if sparse.issparse(R) else sparse.csc_matrix(R)
        self.D, self.N = H.shape
        self.K = sparse.bmat([[self.R, H], [H.T, None]], format="csc")
        try:
            self.lu = sparse_linalg.splu(self.K)
        except RuntimeError as exc:
            raise ObservabilityError(f"augmented system is singular: {exc}") from None

    def solve(self, Z):
        Z = np.asarray(Z, float)
        rhs = np.vstack([Z, np.zeros((self.N, Z.shape[1]))])
        sol = self.lu.solve(rhs)
        sol += self.lu.solve(rhs - self.K @ sol)
        lam, x = sol[:self.D], sol[self.D:]
        w = np.sqrt(np.maximum(np.einsum("ij,ij->j", lam, self.R @ lam), 0.0))
        return x, w


@dataclass(frozen=True)
class BankOutput:
    """Per-frame bank results: residuals (T x K) and zero-sequence currents (T x K)."""

    wmr: np.ndarray
    zero_seq: np.ndarray

    @property
    def w0(self):
        return self.wmr[:, 0]

    def max_zero_seq(self):
        return self.zero_seq[:, 1:].max(axis=1) if self.zero_seq.shape[1] > 1 else self.zero_seq[:, 0]


class EstimatorBank:
    """Base model plus one virtual-bus model per cluster (or per line when all buses are monitored).

    ``method`` picks the factorization: ``"dense"`` precomputes residual
    operators so a batch of frames costs one matrix product, ``"sparse"``
    factors the augmented systems, which is much cheaper to set up.
    """

    def __init__(self, net, models, partition, mode, method="dense", noise=None, reference=None):
        if method not in ("dense", "sparse"):
            raise ValueError(f"unknown factorization {method!r}")
        self.net = net
        self.models = list(models)
        self.partition = partition
        self.mode = mode
        self.method = method
        self.noise = noise
        self.reference = None if reference is None else np.asarray(reference, float)
        self.layout = self.models[0].layout
        self.grounding_buses = net.grounding_buses
        self._prepared = False
        self._structure = None

    @property
    def size(self):
        return len(self.models)

    @property
    def R(self):
        return self.models[0].R

    def cluster_ids(self):
        """Identifier of each virtual model: cluster id, or line id in full-monitoring mode."""
        return [m.tag[1] for m in self.models[1:]]

    def with_covariance(self, R, method=None):
        R = self.models[0].with_covariance(R).R
        if (method or self.method) == "sparse":
            self._sparse_structure()
        models = [replace(m, R=R) for m in self.models]
        bank = EstimatorBank(self.net, models, self.partition, self.mode, method or self.method,
                             self.noise, self.reference)
        bank._structure = self._structure
        return bank

    def _sparse_structure(self):
        """Sparse measurement matrices and earthing rows, shared by every refit of this bank."""
        if self._structure is None:
            self._structure = (
                [sparse.csr_matrix(m.H) for m in self.models],
                [admittance_rows(m.Y, list(self.grounding_buses), m.n_bus)
                 if self.grounding_buses else None for m in self.models])
        return self._structure

    def with_noise(self, noise, reference_frame):
        """Covariance evaluated at a healthy reference frame; remembered for later refits."""
        z = self.layout.vector(reference_frame)
        R = covariance_from_vector(self.layout, z, noise, self.models[0].epsilon)
        bank = self.with_covariance(R)
        bank.noise, bank.reference = noise, z
        return bank

    def drift(self, z):
        """Largest voltage deviation from the reference point, relative to the nominal phase voltage."""
        if self.reference is None:
            return 0.0
        v, _ = split_vector(self.layout, z)
        v0, _ = split_vector(self.layout, self.reference)
        return float(np.abs(v - v0).max() / self.net.base.vphase) if v.size else 0.0

    def refit(self, z):
        """Bank with the covariance re-evaluated at the phasors of ``z`` (sparse factors)."""
        if self.noise is None:
            raise ValueError("bank has no noise model to refit with")
        R = covariance_from_vector(self.layout, z, self.noise, self.models[0].epsilon)
        return self.with_covariance(R, method="sparse")

    def prepare(self):
        """Factor every member once; later calls are free."""
        if self._prepared:
            return self
        if self.method == "sparse":
            hs, self._zero_rows = self._sparse_structure()
            R = sparse.csc_matrix(self.R)
            self._augmented = [AugmentedSolver(h, R) for h in hs]
            self._prepared = True
            return self
        L = linalg.cholesky(self.R, lower=True)
        blocks, zeros, gains = [], [], []
        for m in self.models:
            A = linalg.solve_triangular(L, m.H, lower=True)
            Q, U = linalg.qr(A, mode="full")
            N = m.N
            d = np.abs(np.diag(U))
            if d.min() <= 1e-10 * d.max():
                raise ObservabilityError(f"bank member {m.tag} is not observable", m.tag)
            Q1, Q2 = Q[:, :N], Q[:, N:]
            blocks.append(linalg.solve_triangular(L, Q2, lower=True, trans="T").T)
            gain = linalg.solve_triangular(U[:N], linalg.solve_triangular(L, Q1, lower=True, trans="T").T)
            gains.append(gain)
            if self.grounding_buses:
                rows = admittance_rows(m.Y, list(self.grounding_buses), m.n_bus)
                zeros.append(rows @ gain)
        self._gains = gains
        self._residual_ops = blocks
        self._residual_stack = np.vstack(blocks)
        self._residual_split = np.cumsum([b.shape[0] for b in blocks])[:-1]
        self._zero_stack = np.vstack(zeros) if zeros else None
        self._prepared = True
        return self

    def _zero_sequence(self, cur, T):
        """Largest zero-sequence magnitude over grounding buses from stacked (Re, Im) rows."""
        g = len(self.grounding_buses)
        cur = cur.reshape(-1, 2, g, 3, T)
        i0 = (cur[:, 0] + 1j * cur[:, 1]).sum(axis=2) / 3.0
        return np.abs(i0).max(axis=1).T

    def evaluate(self, Z):
        """Residuals and zero-sequence currents for measurement columns Z (D x T)."""
        self.prepare()
        Z = np.asarray(Z, float)
        if Z.ndim == 1:
            Z = Z[:, None]
        T, K = Z.shape[1], self.size
        wmr = np.empty((T, K))
        zero = np.zeros((T, K))
        if self.method == "sparse":
            for k, (solver, rows) in enumerate(zip(self._augmented, self._zero_rows)):
                x, wmr[:, k] = solver.solve(Z)
                if rows is not None:
                    zero[:, k] = self._zero_sequence(rows @ x, T)[:, 0]
            return BankOutput(wmr, zero)
        res = self._residual_stack @ Z
        for k, part in enumerate(np.split(res, self._residual_split, axis=0)):
            wmr[:, k] = np.sqrt(np.einsum("ij,ij->j", part, part))
        if self._zero_stack is not None:
            zero = self._zero_sequence(self._zero_stack @ Z, T)
        return BankOutput(wmr, zero)

    def evaluate_frames(self, frames):
        return self.evaluate(self.layout.matrix(frames))

    def estimate(self, k, z):
        """Full estimate of member k for one measurement vector."""
        self.prepare()
        z = np.asarray(z, float)
        if self.method == "sparse":
            x, w = self._augmented[k].solve(z[:, None])
            return EstimateResult(x[:, 0], float(w[0]), self.models[k].tag)
        x = self._gains[k] @ z
        w = float(np.linalg.norm(self._residual_ops[k] @ z))
        return EstimateResult(x, w, self.models[k].tag)


def is_full_monitoring(net):
    real = {b.id for b in net.buses if not b.fictitious}
    return real <= net.monitored


def build_estimator_bank(net, partition=None, epsilon=DEFAULT_EPSILON, covariance=None,
                         noise=None, reference_frame=None, method="dense"):
    """Base model plus virtual-bus models.

    In cluster mode every model keeps the grid outside its cluster intact and
    inserts middle buses only on the two-monitored lines of its own cluster,
    so its residual measures the misfit of measurements outside the cluster.
    With ``noise`` and a healthy ``reference_frame`` the covariance is
    evaluated at that frame and kept for refits after a fault.
    """
    require_theorem1(net)
    base = build_measurement_model(net, epsilon=epsilon, covariance=covariance)
    models = [base]
    if is_full_monitoring(net) and partition is None:
        mode = "line"
        for ln in net.closed_lines:
            if ln.fictitious:
                continue
            ext = split_line(net, ln.id, 0.5)
            models.append(build_measurement_model(ext, epsilon=epsilon, covariance=covariance,
                                                  tag=("line", ln.id), virtual_bus=ext.n))
    else:
        mode = "cluster"
        if partition is None:
            partition = compute_ufc2(net)
        for l, lines in enumerate(partition.clusters, start=1):
            ext, vb, added = _cluster_extension(net, lines)
            models.append(build_measurement_model(ext, epsilon=epsilon, covariance=covariance,
                                                  tag=("cluster", l, min(lines)), virtual_bus=vb,
                                                  added_buses=added))
    for m in models:
        if m.layout.D != base.layout.D:
            raise TopologyError("bank members disagree on the measurement layout")
    bank = EstimatorBank(net, models, partition, mode, method)
    if noise is not None:
        if reference_frame is None:
            raise ValueError("a noise model needs a healthy reference frame")
        bank = bank.with_noise(noise, reference_frame)
    return bank
