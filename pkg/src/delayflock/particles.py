"""Phase-space state, initial histories, normalized delayed weights and the RHS.

Positions and velocities are stored as float arrays of shape (N, d).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import backend
from .errors import ConfigurationError, DomainError
from .influence import InfluenceFunction


def _as_cloud(a, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DomainError(f"{name} must have shape (N, d), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class SystemState:
    t: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = _as_cloud(self.positions, "positions")
        v = _as_cloud(self.velocities, "velocities")
        if x.shape != v.shape:
            raise DomainError(f"positions {x.shape} and velocities {v.shape} differ in shape")
        if x.shape[1] not in (1, 2, 3):
            raise DomainError(f"dimension d must be 1, 2 or 3, got {x.shape[1]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise DomainError("state contains non-finite values")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


class InitialHistory:
    """Prescribed trajectories (x_i^0(s), v_i^0(s)) on s in [-tau, 0].

    Use :meth:`constant_velocity` for the closed-form builtin or
    :meth:`tabulated` for sampled data with linear interpolation.  Histories
    need not be kinematically consistent (x' = v is not enforced).
    """

    def __init__(self, tau, kind, velocities=None, anchor_positions=None, anchor_time=0.0,
                 times=None, positions_table=None, velocities_table=None):
        tau = float(tau)
        if not (tau > 0 and np.isfinite(tau)):
            raise ConfigurationError(f"tau must be a positive finite real, got {tau}", "tau")
        self.tau = tau
        self.kind = kind
        if kind == "constant_velocity":
            v = _as_cloud(velocities, "velocities")
            x0 = np.zeros_like(v) if anchor_positions is None else _as_cloud(anchor_positions, "anchor_positions")
            if x0.shape != v.shape:
                raise ConfigurationError("anchor_positions and velocities differ in shape", "history.anchor_positions")
            self.velocities = v
            self.anchor_positions = x0
            self.anchor_time = float(anchor_time)
            shape = v.shape
        elif kind == "tabulated":
            ts = np.asarray(times, dtype=float)
            xs = np.asarray(positions_table, dtype=float)
            vs = np.asarray(velocities_table, dtype=float)
            if xs.ndim == 2:
                xs, vs = xs[:, :, None], vs[:, :, None]
            if ts.ndim != 1 or ts.size < 2 or xs.shape != vs.shape or xs.ndim != 3 or xs.shape[0] != ts.size:
                raise ConfigurationError("tabulated history needs times (M,) and tables (M, N, d)", "history")
            if np.any(np.diff(ts) <= 0):
                raise ConfigurationError("history times must be strictly increasing", "history.times")
            span = max(1.0, tau) * 1e-9
            if ts[0] > -tau + span or ts[-1] < -span:
                raise ConfigurationError(f"history times must cover [-tau, 0] = [{-tau}, 0]", "history.times")
            if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(vs))):
                raise ConfigurationError("history tables contain non-finite values", "history")
            self.times, self.positions_table, self.velocities_table = ts, xs, vs
            shape = xs.shape[1:]
        else:
            raise ConfigurationError(f"unknown history kind {kind!r}", "history.kind")
        if shape[0] < 2:
            raise ConfigurationError(f"need at least N=2 agents, got {shape[0]}", "history")
        if shape[1] not in (1, 2, 3):
            raise ConfigurationError(f"dimension d must be 1, 2 or 3, got {shape[1]}", "history")
        self.N, self.d = int(shape[0]), int(shape[1])

    @classmethod
    def constant_velocity(cls, velocities, tau, anchor_positions=None, anchor_time=0.0):
        """x_i(s) = anchor_positions_i + v_i (s - anchor_time), v_i(s) = v_i.

        ``anchor_time=0`` with zero anchors gives x_i(s) = v_i s;
        ``anchor_time=-tau`` starts every agent at the origin at s = -tau.
        """
        return cls(tau, "constant_velocity", velocities=velocities,
                   anchor_positions=anchor_positions, anchor_time=anchor_time)

    @classmethod
    def tabulated(cls, tau, times, positions, velocities):
        return cls(tau, "tabulated", times=times, positions_table=positions, velocities_table=velocities)

    def sample(self, s):
        """(positions, velocities) at history time s, each of shape (N, d)."""
        s = float(s)
        tol = 1e-9 * max(1.0, self.tau)
        if s < -self.tau - tol or s > tol:
            raise DomainError(f"history is defined on [{-self.tau}, 0], got s={s}")
        if self.kind == "constant_velocity":
            return self.anchor_positions + self.velocities * (s - self.anchor_time), self.velocities.copy()
        ts = self.times
        j = int(np.clip(np.searchsorted(ts, s, side="right") - 1, 0, ts.size - 2))
        lam = (s - ts[j]) / (ts[j + 1] - ts[j])
        x = (1 - lam) * self.positions_table[j] + lam * self.positions_table[j + 1]
        v = (1 - lam) * self.velocities_table[j] + lam * self.velocities_table[j + 1]
        return x, v

    def sample_grid(self, lag: int):
        """Samples on the uniform grid s_j = (j - lag) * tau/lag, j = 0..lag."""
        dt = self.tau / lag
        xs = np.empty((lag + 1, self.N, self.d))
        vs = np.empty_like(xs)
        for j in range(lag + 1):
            xs[j], vs[j] = self.sample((j - lag) * dt)
        return xs, vs

    def max_speed(self) -> float:
        """R_v: largest agent speed over [-tau, 0] (exact for both kinds)."""
        if self.kind == "constant_velocity":
            return float(np.max(np.linalg.norm(self.velocities, axis=1)))
        # the norm of a linear interpolant peaks at a node or an endpoint
        inside = (self.times > -self.tau) & (self.times < 0)
        best = float(np.max(np.linalg.norm(self.velocities_table[inside], axis=2), initial=0.0))
        for s in (-self.tau, 0.0):
            best = max(best, float(np.max(np.linalg.norm(self.sample(s)[1], axis=1))))
        return best

    def to_dict(self) -> dict:
        if self.kind == "constant_velocity":
            return {
                "kind": "constant_velocity",
                "velocities": self.velocities.tolist(),
                "anchor_positions": self.anchor_positions.tolist(),
                "anchor_time": self.anchor_time,
            }
        return {
            "kind": "tabulated",
            "times": self.times.tolist(),
            "positions": self.positions_table.tolist(),
            "velocities": self.velocities_table.tolist(),
        }


def communication_weights(positions_now, positions_delayed, psi: InfluenceFunction) -> np.ndarray:
    """Normalized weight matrix phi_ik = psi(|x_k(t-tau) - x_i(t)|) / sum_{j != i} (...).

    The diagonal is zero and each row sums to one.
    """
    xn = _as_cloud(positions_now, "positions_now")
    xd = _as_cloud(positions_delayed, "positions_delayed")
    if xn.shape != xd.shape:
        raise DomainError(f"current {xn.shape} and delayed {xd.shape} positions differ in shape")
    if xn.shape[0] < 2:
        raise ConfigurationError("communication weights need N >= 2 (empty normalization)")
    return backend.weight_matrix(xn, xd, *psi.kernel_params())


def rhs(state_now: SystemState, state_delayed: SystemState, psi: InfluenceFunction,
        form: str = "alignment", tau: Optional[float] = None):
    """Time derivatives (dx/dt, dv/dt) of the delayed flocking system.

    ``form="alignment"`` evaluates sum_k phi_ik (v_k(t-tau) - v_i(t));
    ``form="relaxation"`` evaluates sum_k phi_ik v_k(t-tau) - v_i(t).  The two
    agree because each weight row sums to one.
    """
    if state_now.positions.shape != state_delayed.positions.shape:
        raise DomainError("current and delayed states differ in shape")
    if tau is not None and abs((state_now.t - state_delayed.t) - tau) > 1e-9 * max(1.0, tau):
        raise DomainError(f"states are {state_now.t - state_delayed.t} apart, expected tau={tau}")
    w = communication_weights(state_now.positions, state_delayed.positions, psi)
    v = state_now.velocities
    vd = state_delayed.velocities
    if form == "alignment":
        dv = np.einsum("ik,ikc->ic", w, vd[None, :, :] - v[:, None, :])
    elif form == "relaxation":
        dv = w @ vd - v
    else:
        raise ValueError(f"unknown form {form!r}")
    return v.copy(), dv


def nearest_neighbor_weight_bound(positions, psi: InfluenceFunction) -> bool:
    """For N=3 and no delay, every agent gives weight >= 1/2 to some neighbour."""
    x = _as_cloud(positions, "positions")
    if x.shape[0] != 3:
        raise DomainError("the strong-neighbour alternative is specific to N=3")
    w = communication_weights(x, x, psi)
    return bool(np.all(w.max(axis=1) >= 0.5))
