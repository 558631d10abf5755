"""Method-of-steps integration of the delayed system on a delay-aligned grid.

The step size is snapped so that tau/dt is an integer; delayed lookups at
t - tau then land exactly on stored nodes.  RK4 half-step stages read the
buffer by four-node cubic interpolation whose stencil never straddles a
multiple of tau, where the solution loses smoothness (linear when tau/dt < 3).
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigurationError, IntegrationBlowUp, OutOfRangeError
from .influence import InfluenceFunction
from .particles import InitialHistory, SystemState, rhs

log = logging.getLogger(__name__)

SCHEMES = {"euler": _kernels.EULER, "rk4": _kernels.RK4}


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping parameters.

    ``dt=None`` means tau/100.  Any requested dt is rounded down to the nearest
    exact divisor of tau when the run is set up.
    """

    t_max: float = 10.0
    dt: Optional[float] = None
    scheme: str = "euler"
    record_stride: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {sorted(SCHEMES)}, got {self.scheme!r}", "integrator.scheme")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ConfigurationError(f"t_max must be positive, got {self.t_max}", "integrator.t_max")
        if self.dt is not None and not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt}", "integrator.dt")
        if not (isinstance(self.record_stride, int) and self.record_stride >= 1):
            raise ConfigurationError("record_stride must be a positive integer", "integrator.record_stride")

    def resolve(self, tau: float):
        """Return ``(lag, dt)`` with lag = tau/dt an exact integer."""
        if self.dt is None:
            return 100, tau / 100
        lag = max(1, math.ceil(tau / self.dt - 1e-9))
        dt = tau / lag
        if abs(dt - self.dt) > 1e-12 * self.dt:
            log.info("dt %.6g snapped to %.6g so that tau/dt = %d", self.dt, dt, lag)
        return lag, dt

    def to_dict(self) -> dict:
        return {"t_max": self.t_max, "dt": self.dt, "scheme": self.scheme, "record_stride": self.record_stride}


class HistoryBuffer:
    """Ring of the most recent grid states, covering [t - tau, t].

    Up to two extra nodes before t - tau are kept for the RK4 midpoint stencil.
    """

    def __init__(self, tau: float, dt: float, states):
        self.tau = float(tau)
        self.dt = float(dt)
        self.lag = int(round(self.tau / self.dt))
        if abs(self.lag * self.dt - self.tau) > 1e-12 * self.tau:
            raise ConfigurationError(f"tau/dt = {self.tau / self.dt} is not an integer", "integrator.dt")
        states = list(states)
        self._ring = deque(states, maxlen=self.lag + 3)
        if len(states) != self.lag + 1:
            raise ConfigurationError(f"buffer needs exactly lag+1 = {self.lag + 1} states, got {len(self._ring)}")
        # node index of the newest state; times are index * dt to avoid drift
        self._head = int(round(self._ring[-1].t / self.dt))

    @classmethod
    def from_history(cls, history: InitialHistory, dt: float):
        lag = int(round(history.tau / dt))
        xs, vs = history.sample_grid(lag)
        states = [SystemState((j - lag) * dt, xs[j], vs[j]) for j in range(lag + 1)]
        return cls(history.tau, dt, states)

    @property
    def t(self) -> float:
        return self._head * self.dt

    @property
    def current(self) -> SystemState:
        return self._ring[-1]

    def node(self, index: int) -> SystemState:
        """State at absolute grid node ``index`` (time index * dt)."""
        first = self._head - len(self._ring) + 1
        if not first <= index <= self._head:
            raise OutOfRangeError(f"node {index} outside buffered nodes [{first}, {self._head}]")
        return self._ring[index - first]

    def push(self, state: SystemState):
        self._ring.append(state)
        self._head += 1

    def sample(self, s: float) -> SystemState:
        return sample_history(self, s)


def sample_history(buffer: HistoryBuffer, s: float) -> SystemState:
    """State at time s in [t - tau, t]: a stored node, or linear interpolation."""
    u = s / buffer.dt
    lo_idx = buffer._head - buffer.lag
    if u < lo_idx - 1e-9 or u > buffer._head + 1e-9:
        raise OutOfRangeError(f"s={s} outside buffer coverage [{lo_idx * buffer.dt}, {buffer.t}]")
    k = round(u)
    if abs(u - k) <= 1e-9:
        return buffer.node(int(k))
    k0 = math.floor(u)
    lam = u - k0
    a, b = buffer.node(k0), buffer.node(k0 + 1)
    return SystemState(
        s,
        (1 - lam) * a.positions + lam * b.positions,
        (1 - lam) * a.velocities + lam * b.velocities,
    )


def _check_finite(x, v, t):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise IntegrationBlowUp(f"non-finite state produced by the step from t={t}", last_valid_time=t)


def step_euler(buffer: HistoryBuffer, psi: InfluenceFunction, dt: Optional[float] = None) -> SystemState:
    """One explicit Euler step from the buffer head; the new state is pushed and returned."""
    dt = buffer.dt if dt is None else dt
    now = buffer.current
    delayed = buffer.node(buffer._head - buffer.lag)
    dx, dv = rhs(now, delayed, psi, form="relaxation")
    x, v = now.positions + dt * dx, now.velocities + dt * dv
    _check_finite(x, v, buffer.t)
    new = SystemState((buffer._head + 1) * buffer.dt, x, v)
    buffer.push(new)
    return new


def step_rk4(buffer: HistoryBuffer, psi: InfluenceFunction, dt: Optional[float] = None) -> SystemState:
    """One classical RK4 step; delayed stages at t-tau, t+dt/2-tau, t+dt-tau.

    The midpoint stage uses the same cubic stencil as :func:`integrate`.
    """
    dt = buffer.dt if dt is None else dt
    t = buffer.t
    now = buffer.current
    j = buffer._head - buffer.lag
    d0 = buffer.node(j)
    d1 = buffer.node(j + 1)
    off = _kernels.python_backend.mid_stencil(j, buffer.lag) if dt == buffer.dt else None
    if off is None:
        dm = buffer.sample(t + 0.5 * dt - buffer.tau)
    else:
        nodes = [buffer.node(j + off + q) for q in range(4)]
        wts = _kernels.python_backend.MID_WEIGHTS[off]
        dm = SystemState(t + 0.5 * dt - buffer.tau,
                         sum(c * n.positions for c, n in zip(wts, nodes)),
                         sum(c * n.velocities for c, n in zip(wts, nodes)))
    x, v = now.positions, now.velocities

    def f(xs, vs, dl):
        return rhs(SystemState(0.0, xs, vs), dl, psi, form="relaxation")

    k1x, k1v = f(x, v, d0)
    k2x, k2v = f(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v, dm)
    k3x, k3v = f(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v, dm)
    k4x, k4v = f(x + dt * k3x, v + dt * k3v, d1)
    xn = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    vn = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    _check_finite(xn, vn, t)
    new = SystemState((buffer._head + 1) * buffer.dt, xn, vn)
    buffer.push(new)
    return new


@dataclass(frozen=True)
class Trajectory:
    """Recorded states on [-tau, t_max].

    The first ``lag + 1`` rows are the history nodes on [-tau, 0] at spacing
    dt; later rows are spaced by dt * record_stride.
    """

    times: np.ndarray
    positions: np.ndarray  # (K, N, d)
    velocities: np.ndarray  # (K, N, d)
    tau: float
    dt: float
    lag: int
    psi: InfluenceFunction
    config: IntegratorConfig
    history: InitialHistory = field(repr=False)

    @property
    def N(self) -> int:
        return self.positions.shape[1]

    @property
    def d(self) -> int:
        return self.positions.shape[2]

    @property
    def zero_index(self) -> int:
        return self.lag

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def state(self, k: int) -> SystemState:
        return SystemState(float(self.times[k]), self.positions[k], self.velocities[k])

    def state_at(self, t: float) -> SystemState:
        """State at time t, interpolating linearly between recorded rows."""
        ts = self.times
        tol = 1e-9 * max(1.0, abs(t))
        if t < ts[0] - tol or t > ts[-1] + tol:
            raise OutOfRangeError(f"t={t} outside trajectory coverage [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t))
        if k < ts.size and abs(ts[k] - t) <= tol:
            return self.state(k)
        if k > 0 and abs(ts[k - 1] - t) <= tol:
            return self.state(k - 1)
        k = min(max(k, 1), ts.size - 1)
        lam = (t - ts[k - 1]) / (ts[k] - ts[k - 1])
        return SystemState(
            t,
            (1 - lam) * self.positions[k - 1] + lam * self.positions[k],
            (1 - lam) * self.velocities[k - 1] + lam * self.velocities[k],
        )

    def metadata(self) -> dict:
        return {
            "tau": self.tau,
            "dt": self.dt,
            "lag": self.lag,
            "scheme": self.config.scheme,
            "t_max": self.config.t_max,
            "record_stride": self.config.record_stride,
            "dt_requested": self.config.dt,
            "N": self.N,
            "d": self.d,
            "psi": self.psi.to_dict(),
        }


def integrate(history: InitialHistory, psi: InfluenceFunction, cfg: IntegratorConfig, backend=None) -> Trajectory:
    """Solve the delayed flocking system on [-tau, cfg.t_max].

    Parameters
    ----------
    history : InitialHistory
        Prescribed positions and velocities on [-tau, 0].
    psi : InfluenceFunction
    cfg : IntegratorConfig
    backend : str, optional
        ``"compiled"`` or ``"python"``; defaults to the active kernel backend.

    Raises
    ------
    IntegrationBlowUp
        If a non-finite state appears; carries the last valid time.
    """
    kern = _kernels.get_backend(backend)
    tau = history.tau
    lag, dt = cfg.resolve(tau)
    n_steps = math.ceil(cfg.t_max / dt - 1e-9)
    stride = cfg.record_stride

    xh, vh = history.sample_grid(lag)
    x_rec, v_rec, n_done = kern.run_steps(xh, vh, dt, n_steps, SCHEMES[cfg.scheme], stride, *psi.kernel_params())
    if n_done < n_steps:
        raise IntegrationBlowUp(
            f"non-finite state after step {n_done} (t={n_done * dt:.6g}); check dt and the initial history",
            last_valid_time=n_done * dt,
        )
    hist_t = (np.arange(lag + 1) - lag) * dt
    rec_t = np.arange(1, x_rec.shape[0] + 1) * stride * dt
    return Trajectory(
        times=np.concatenate([hist_t, rec_t]),
        positions=np.concatenate([xh, x_rec]),
        velocities=np.concatenate([vh, v_rec]),
        tau=tau,
        dt=dt,
        lag=lag,
        psi=psi,
        config=cfg,
        history=history,
    )
