"""Hybrid closed-loop integration and empirical performance metrics.

Between sampling instants the coupled dynamics are smooth (held neighbor
samples are constant), so a fixed-step RK4 integrator with steps aligned to
the sampling grid is structurally exact: every switching event lands on a
grid point.  At each instant the polling schedule refreshes exactly one held
sample per subsystem before the interval is integrated.

Energy integrals are accumulated with the trapezoid rule at full substep
resolution regardless of how sparsely the trajectory itself is recorded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .lmi import ControllerGains
from .model import LargeScaleSystem
from . import protocol

__all__ = [
    "DisturbanceSpec",
    "disturbance_family",
    "SimulationRecord",
    "DivergenceError",
    "integrate_closed_loop",
    "empirical_l2_gain",
    "decay_estimate",
    "default_horizon",
    "write_trajectory_csv",
    "write_metrics_json",
    "write_schedule_audit_csv",
]


class DivergenceError(RuntimeError):
    """State norm exceeded the blow-up guard; carries the first offending time."""

    def __init__(self, time: float, norm: float):
        super().__init__(f"state norm {norm:.3e} exceeded the blow-up guard at t={time:.6g}")
        self.time = time
        self.norm = norm


@dataclass(frozen=True)
class DisturbanceSpec:
    """Finite-energy disturbance shape, reproducible from its fields alone.

    kinds: ``zero``; ``pulse`` (piecewise constant on the active window);
    ``sine`` (whole cycles over the window, so it vanishes at both ends);
    ``smooth`` (seeded random mix of half-sine modes, zero at the window
    edges).  ``amplitude`` may be per-subsystem.  All kinds vanish outside
    [t_on, t_off], so every signal has finite energy.
    """

    kind: str = "zero"
    amplitude: float | Sequence[float] = 1.0
    t_on: float = 0.0
    t_off: float = 1.0
    seed: int | None = None
    cycles: int = 3
    modes: int = 3

    def __post_init__(self):
        if self.kind not in ("zero", "pulse", "sine", "smooth"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind != "zero":
            if not self.t_off > self.t_on:
                raise ValueError("active window must have positive length")
            if self.kind == "smooth" and self.seed is None:
                raise ValueError("seeded-random disturbance requires a seed")

    def build(self, sys: LargeScaleSystem) -> Callable[[float], np.ndarray]:
        """Stacked disturbance signal aligned with the subsystem channel layout."""
        dims = [sub.p for sub in sys.subsystems]
        p_tot = sum(dims)
        amp = np.broadcast_to(np.asarray(self.amplitude, dtype=float), (sys.N,))
        chan_amp = np.concatenate([np.full(dims[i], amp[i]) for i in range(sys.N)])
        if self.kind == "zero":
            zero = np.zeros(p_tot)
            return lambda t: zero
        t_on, t_off = self.t_on, self.t_off
        width = t_off - t_on
        if self.kind == "pulse":
            def pulse(t: float) -> np.ndarray:
                return chan_amp if t_on <= t < t_off else np.zeros(p_tot)
            return pulse
        if self.kind == "sine":
            omega = 2.0 * np.pi * self.cycles / width
            def sine(t: float) -> np.ndarray:
                if not t_on <= t < t_off:
                    return np.zeros(p_tot)
                return chan_amp * np.sin(omega * (t - t_on))
            return sine
        rng = np.random.default_rng(self.seed)
        coeffs = rng.standard_normal((p_tot, self.modes))
        coeffs /= np.sqrt(self.modes)
        ks = np.arange(1, self.modes + 1)
        def smooth(t: float) -> np.ndarray:
            if not t_on <= t < t_off:
                return np.zeros(p_tot)
            u = (t - t_on) / width
            return chan_amp * (coeffs @ np.sin(np.pi * ks * u))
        return smooth


def disturbance_family(
    seed: int,
    n_random: int = 8,
    n_pulse: int = 4,
    t_on: float = 0.0,
    t_off: float = 1.0,
    amplitude: float = 1.0,
) -> list[DisturbanceSpec]:
    """Standard excitation family: seeded smooth signals plus pulse shapes."""
    specs = [
        DisturbanceSpec("smooth", amplitude, t_on, t_off, seed=seed + k)
        for k in range(n_random)
    ]
    width = t_off - t_on
    shapes = [
        (amplitude, t_on, t_off),
        (-amplitude, t_on, t_on + 0.5 * width),
        (amplitude, t_on + 0.25 * width, t_on + 0.75 * width),
        (-0.5 * amplitude, t_on + 0.5 * width, t_off),
    ]
    for a, on, off in shapes[:n_pulse]:
        specs.append(DisturbanceSpec("pulse", a, on, off))
    return specs


@dataclass(frozen=True)
class SimulationRecord:
    """Recorded closed-loop run plus full-resolution energy accounting."""

    time: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    disturbances: np.ndarray
    z_energy: np.ndarray           # per subsystem, full horizon
    w_energy: np.ndarray           # per subsystem
    z_tail_energy: float           # output energy in the trailing 20% of the horizon
    delta: float
    substeps: int
    record_stride: int
    state_dims: tuple[int, ...]
    input_dims: tuple[int, ...]
    output_dims: tuple[int, ...]
    disturbance_dims: tuple[int, ...]
    held_audit: tuple | None = None

    def state_of(self, i: int) -> np.ndarray:
        offs = np.concatenate([[0], np.cumsum(self.state_dims)])
        return self.states[:, offs[i - 1]:offs[i]]

    @property
    def initial_norm(self) -> float:
        return float(np.linalg.norm(self.states[0]))

    @property
    def final_norm(self) -> float:
        return float(np.linalg.norm(self.states[-1]))


def default_horizon(alpha: float | Sequence[float], disturbance: DisturbanceSpec | None = None) -> float:
    """Practical stand-in for an infinite horizon: settle time past the window."""
    a = float(np.min(np.asarray(alpha, dtype=float)))
    t_off = 0.0 if disturbance is None or disturbance.kind == "zero" else disturbance.t_off
    return t_off + 20.0 / a


def _normalize_stride(stride: int | None, substeps: int, total_substeps: int) -> int:
    """Recorded nodes must land on times that divide the sampling period."""
    if stride is None:
        stride = max(1, total_substeps // 20000)
    stride = max(1, int(stride))
    if stride <= substeps:
        while substeps % stride:
            stride -= 1
        return stride
    return (stride // substeps) * substeps


def integrate_closed_loop(
    sys: LargeScaleSystem,
    gains: Sequence[ControllerGains],
    x0: Sequence[np.ndarray] | np.ndarray,
    disturbance: DisturbanceSpec | None = None,
    t_end: float = 1.0,
    substeps: int = 10,
    record_stride: int | None = None,
    audit: bool = False,
    blowup: float = 1e12,
) -> SimulationRecord:
    """Integrate the polled closed loop with classical RK4.

    ``substeps`` RK4 steps are taken per sampling interval; at every sampling
    instant the newly polled neighbor sample (the state at that instant) is
    written into the held table before the interval is integrated.  The run
    aborts with :class:`DivergenceError` when the state norm passes
    ``blowup``.
    """
    N = sys.N
    delta = sys.delta
    state_dims = tuple(sub.n for sub in sys.subsystems)
    input_dims = tuple(sub.m for sub in sys.subsystems)
    output_dims = tuple(sub.q for sub in sys.subsystems)
    dist_dims = tuple(sub.p for sub in sys.subsystems)
    n_tot, m_tot = sum(state_dims), sum(input_dims)
    q_tot, p_tot = sum(output_dims), sum(dist_dims)
    s_offs = np.concatenate([[0], np.cumsum(state_dims)])
    q_offs = np.concatenate([[0], np.cumsum(output_dims)])[:-1]
    p_offs = np.concatenate([[0], np.cumsum(dist_dims)])[:-1]

    if len(gains) != N:
        raise ValueError("need gains for every subsystem")

    x = np.asarray(x0, dtype=float)
    if x.ndim != 1 or x.size != n_tot:
        x = np.concatenate([np.asarray(xi, dtype=float).ravel() for xi in x0])
    if x.size != n_tot:
        raise ValueError(f"initial state has {x.size} entries, expected {n_tot}")
    x = x.copy()

    # closed-loop matrices: continuous part, held part, channels
    A_cl = np.zeros((n_tot, n_tot))
    for i in range(1, N + 1):
        sub = sys.subsystem(i)
        g = gains[i - 1]
        sl = slice(s_offs[i - 1], s_offs[i])
        A_cl[sl, sl] = sub.A + sub.B @ g.K_self
        for j, blk in sub.coupling.items():
            A_cl[sl, s_offs[j - 1]:s_offs[j]] += blk

    # held-sample stacking: one slot per (subsystem, neighbor position)
    slot_offs = []
    c_tot = 0
    for i in range(1, N + 1):
        offs_i = []
        for j in sys.neighbors(i):
            offs_i.append(c_tot)
            c_tot += sys.subsystem(j).n
        slot_offs.append(offs_i)
    B_hold = np.zeros((n_tot, c_tot))
    K_hold = np.zeros((m_tot, c_tot))
    K_diag = np.zeros((m_tot, n_tot))
    m_offs = np.concatenate([[0], np.cumsum(input_dims)])
    for i in range(1, N + 1):
        sub = sys.subsystem(i)
        g = gains[i - 1]
        rsl = slice(s_offs[i - 1], s_offs[i])
        msl = slice(m_offs[i - 1], m_offs[i])
        K_diag[msl, rsl] = g.K_self
        for pos, j in enumerate(sys.neighbors(i)):
            nj = sys.subsystem(j).n
            csl = slice(slot_offs[i - 1][pos], slot_offs[i - 1][pos] + nj)
            B_hold[rsl, csl] = sub.B @ g.K_neighbors[j]
            K_hold[msl, csl] = g.K_neighbors[j]
    C_blk = np.zeros((q_tot, n_tot))
    F_blk = np.zeros((q_tot, p_tot))
    E_blk = np.zeros((n_tot, p_tot))
    qo = po = 0
    for i in range(1, N + 1):
        sub = sys.subsystem(i)
        rsl = slice(s_offs[i - 1], s_offs[i])
        C_blk[qo:qo + sub.q, rsl] = sub.C
        F_blk[qo:qo + sub.q, po:po + sub.p] = sub.F
        E_blk[rsl, po:po + sub.p] = sub.E
        qo += sub.q
        po += sub.p

    # polling update index tables, one per step phase
    phase_count = int(np.lcm.reduce([sys.degree(i) for i in range(1, N + 1)]))
    dst_by_phase, src_by_phase, polled_by_phase = [], [], []
    for phase in range(phase_count):
        dst, src, polled = [], [], []
        for i in range(1, N + 1):
            j = protocol.polled_neighbor(i, phase, sys)
            pos = sys.neighbors(i).index(j)
            nj = sys.subsystem(j).n
            dst.extend(range(slot_offs[i - 1][pos], slot_offs[i - 1][pos] + nj))
            src.extend(range(s_offs[j - 1], s_offs[j]))
            polled.append(j)
        dst_by_phase.append(np.array(dst))
        src_by_phase.append(np.array(src))
        polled_by_phase.append(tuple(polled))

    w_fun = (disturbance or DisturbanceSpec("zero")).build(sys)
    has_w = (disturbance is not None and disturbance.kind != "zero")

    n_steps = max(1, int(np.ceil(t_end / delta - 1e-9)))
    total_substeps = n_steps * substeps
    stride = _normalize_stride(record_stride, substeps, total_substeps)
    h = delta / substeps
    t_tail = 0.8 * (n_steps * delta)

    # held table initialized with the initial data
    xheld = np.zeros(c_tot)
    held_t = np.zeros(c_tot)
    for i in range(1, N + 1):
        for pos, j in enumerate(sys.neighbors(i)):
            nj = sys.subsystem(j).n
            o = slot_offs[i - 1][pos]
            xheld[o:o + nj] = x[s_offs[j - 1]:s_offs[j]]

    times, xs, us, zs, ws = [], [], [], [], []
    audit_rows = [] if audit else None
    z_energy = np.zeros(N)
    w_energy = np.zeros(N)
    z_tail = 0.0

    def channel_sums(z: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.add.reduceat(z * z, q_offs), np.add.reduceat(w * w, p_offs)

    def record(t: float, xv: np.ndarray, wv: np.ndarray) -> None:
        times.append(t)
        xs.append(xv.copy())
        us.append(K_diag @ xv + K_hold @ xheld)
        zs.append(C_blk @ xv + F_blk @ wv)
        ws.append(wv.copy())

    substep_index = 0
    wv = w_fun(0.0)
    zsum_prev, wsum_prev = channel_sums(C_blk @ x + F_blk @ wv, wv)

    for k in range(n_steps):
        t_k = k * delta
        phase = k % phase_count
        xheld[dst_by_phase[phase]] = x[src_by_phase[phase]]
        held_t[dst_by_phase[phase]] = t_k
        if audit:
            audit_rows.append((k, polled_by_phase[phase], held_t.copy()))
        b_k = B_hold @ xheld

        if substep_index % stride == 0:
            record(t_k, x, w_fun(t_k))

        for s in range(substeps):
            t = t_k + s * h
            if has_w:
                w0 = w_fun(t)
                wh = w_fun(t + 0.5 * h)
                w1 = w_fun(t + h)
                k1 = A_cl @ x + b_k + E_blk @ w0
                k2 = A_cl @ (x + 0.5 * h * k1) + b_k + E_blk @ wh
                k3 = A_cl @ (x + 0.5 * h * k2) + b_k + E_blk @ wh
                k4 = A_cl @ (x + h * k3) + b_k + E_blk @ w1
            else:
                w1 = wv
                k1 = A_cl @ x + b_k
                k2 = A_cl @ (x + 0.5 * h * k1) + b_k
                k3 = A_cl @ (x + 0.5 * h * k2) + b_k
                k4 = A_cl @ (x + h * k3) + b_k
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            substep_index += 1
            t_next = t + h
            w_next = w_fun(t_next) if has_w else wv
            zsum, wsum = channel_sums(C_blk @ x + F_blk @ w_next, w_next)
            z_energy += 0.5 * h * (zsum_prev + zsum)
            w_energy += 0.5 * h * (wsum_prev + wsum)
            if t_next >= t_tail:
                z_tail += 0.5 * h * float(np.sum(zsum_prev + zsum))
            zsum_prev, wsum_prev = zsum, wsum
            if substep_index % stride == 0 and not (s == substeps - 1):
                record(t_next, x, w_next)

        norm = float(np.max(np.abs(x)))
        if not np.isfinite(norm) or norm > blowup:
            raise DivergenceError((k + 1) * delta, norm)

    t_final = n_steps * delta
    if not times or times[-1] < t_final - 1e-12:
        record(t_final, x, w_fun(t_final))

    return SimulationRecord(
        time=np.array(times),
        states=np.array(xs),
        inputs=np.array(us),
        outputs=np.array(zs),
        disturbances=np.array(ws),
        z_energy=z_energy,
        w_energy=w_energy,
        z_tail_energy=z_tail,
        delta=delta,
        substeps=substeps,
        record_stride=stride,
        state_dims=state_dims,
        input_dims=input_dims,
        output_dims=output_dims,
        disturbance_dims=dist_dims,
        held_audit=tuple(audit_rows) if audit else None,
    )


def empirical_l2_gain(records: Sequence[SimulationRecord], tail_limit: float = 1e-3) -> float:
    """Worst observed energy ratio over an excitation family.

    Requires zero initial state and positive disturbance energy per record;
    rejects records whose trailing output energy says the horizon was cut
    short.  The result underestimates the true gain, so acceptance checks
    read "empirical <= certified".
    """
    if not records:
        raise ValueError("need at least one record")
    worst = 0.0
    for rec in records:
        if rec.initial_norm != 0.0:
            raise ValueError("empirical gain estimation requires zero initial conditions")
        w_total = float(np.sum(rec.w_energy))
        if w_total <= 0.0:
            raise ValueError("record has zero disturbance energy")
        z_total = float(np.sum(rec.z_energy))
        if z_total > 0.0 and rec.z_tail_energy > tail_limit * z_total:
            raise ValueError(
                f"trailing output energy fraction {rec.z_tail_energy / z_total:.2e} "
                f"exceeds {tail_limit:.0e}; extend the horizon"
            )
        worst = max(worst, float(np.sqrt(z_total / w_total)))
    return worst


def decay_estimate(record: SimulationRecord) -> float:
    """Fitted exponential rate of the state norm over the trailing half horizon.

    Negative values certify decay.  Uses a least-squares line through
    log-norm samples; raises when the tail has already collapsed to zero.
    """
    if float(np.sum(record.w_energy)) != 0.0:
        raise ValueError("decay estimation requires a disturbance-free record")
    if record.initial_norm == 0.0:
        raise ValueError("decay estimation requires a nonzero initial state")
    t = record.time
    norms = np.linalg.norm(record.states, axis=1)
    mask = t >= 0.5 * t[-1]
    t_tail, n_tail = t[mask], norms[mask]
    good = n_tail > 1e-250
    if np.count_nonzero(good) < 2:
        raise ValueError("trajectory already at the noise floor; shorten the horizon or refit")
    slope = np.polyfit(t_tail[good], np.log(n_tail[good]), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# File exports
# ---------------------------------------------------------------------------


def _channel_headers(prefix: str, dims: Sequence[int]) -> list[str]:
    return [f"{prefix}{i + 1}_{k + 1}" for i, d in enumerate(dims) for k in range(d)]


def write_trajectory_csv(record: SimulationRecord, path) -> None:
    headers = (
        ["t"]
        + _channel_headers("x", record.state_dims)
        + _channel_headers("u", record.input_dims)
        + _channel_headers("z", record.output_dims)
        + _channel_headers("w", record.disturbance_dims)
    )
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(headers)
        for idx in range(record.time.size):
            writer.writerow(
                [repr(float(record.time[idx]))]
                + [repr(float(v)) for v in record.states[idx]]
                + [repr(float(v)) for v in record.inputs[idx]]
                + [repr(float(v)) for v in record.outputs[idx]]
                + [repr(float(v)) for v in record.disturbances[idx]]
            )


def write_metrics_json(metrics: Mapping, path) -> None:
    with open(path, "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)


def write_schedule_audit_csv(sys: LargeScaleSystem, record: SimulationRecord, path) -> None:
    if record.held_audit is None:
        raise ValueError("record carries no audit trail; rerun with audit=True")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "i", "polled_j", "held_timestamps"])
        for k, polled, held_t in record.held_audit:
            col = 0
            for i in range(1, sys.N + 1):
                stamps = []
                for j in sys.neighbors(i):
                    nj = sys.subsystem(j).n
                    stamps.append(f"{j}:{held_t[col]:.10g}")
                    col += nj
                writer.writerow([k, i, polled[i - 1], ";".join(stamps)])
