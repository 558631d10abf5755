"""Flocking observables, Lyapunov functional, certificates and classification."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.signal import find_peaks
from scipy.spatial.distance import pdist

from .errors import ConvergenceError, DomainError, OutOfRangeError, PartialResultWarning
from .influence import InfluenceFunction, QuadratureConfig, tail_integral
from .particles import InitialHistory, SystemState, _as_cloud


def diameter(points) -> float:
    """Largest pairwise Euclidean distance in a point set; 0 for a single point."""
    p = _as_cloud(points, "points")
    if p.shape[0] < 2:
        return 0.0
    return float(pdist(p).max())


def spatial_diameter(state: SystemState) -> float:
    return diameter(state.positions)


def velocity_diameter(state: SystemState) -> float:
    return diameter(state.velocities)


def diameter_series(traj):
    """(d_X, d_V) evaluated at every recorded time of a trajectory."""
    dx = np.array([diameter(x) for x in traj.positions])
    dv = np.array([diameter(v) for v in traj.velocities])
    return dx, dv


def _argmax_pairs(clouds):
    out = []
    n = clouds.shape[1]
    iu = np.triu_indices(n, 1)
    for c in clouds:
        out.append(int(np.argmax(pdist(c))))
    return np.array(out), iu


def max_speed_Rv(history: InitialHistory, dt: Optional[float] = None) -> float:
    """Largest speed over the history, sampled on a grid of spacing dt.

    Table nodes of a tabulated history are always included, so the result is
    exact for both builtin and tabulated data.
    """
    best = history.max_speed()
    if dt is not None:
        lag = max(1, math.ceil(history.tau / dt - 1e-9))
        _, vs = history.sample_grid(lag)
        best = max(best, float(np.max(np.linalg.norm(vs, axis=2))))
    return best


# --------------------------------------------------------------------------
# Lyapunov functional


def _cumtrapz(t, y):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


class _Series:
    """Interpolable d_X / d_V series with a running time integral of d_V."""

    def __init__(self, traj):
        self.t = traj.times
        self.dx, self.dv = diameter_series(traj)
        self.cum = _cumtrapz(self.t, self.dv)

    def at(self, arr, s):
        return np.interp(s, self.t, arr)


def _lyapunov_terms(traj, series, t, R_v, psi):
    tau = traj.tau
    a0 = series.dx[0] + R_v * tau
    a1 = float(series.at(series.dx, t - tau)) + R_v * tau
    mid = psi.integral(a0, a1)
    tail = float(series.at(series.cum, t) - series.at(series.cum, t - tau))
    return float(series.at(series.dv, t)), mid, tail


def lyapunov(traj, t: float, _series: Optional[_Series] = None) -> float:
    """d_V(t) + int_{d_X(-tau)+R_v tau}^{d_X(t-tau)+R_v tau} psi + int_{t-tau}^t d_V.

    Time integrals use the trapezoid rule on the recording grid.
    """
    if t < -1e-12 or t > traj.t_end + 1e-9 * max(1.0, t):
        raise OutOfRangeError(f"lyapunov needs 0 <= t <= {traj.t_end}, got t={t}")
    series = _series or _Series(traj)
    R_v = traj.history.max_speed()
    return sum(_lyapunov_terms(traj, series, t, R_v, traj.psi))


def lyapunov_series(traj):
    """(times, L(times)) for every recorded time t >= 0."""
    series = _Series(traj)
    R_v = traj.history.max_speed()
    ts = traj.times[traj.zero_index:]
    vals = np.array([sum(_lyapunov_terms(traj, series, t, R_v, traj.psi)) for t in ts])
    return ts, vals


# --------------------------------------------------------------------------
# Decay-rate equation and flocking certificate


def solve_decay_rate(a: float, tau: float) -> float:
    """Unique C in (0, 1] with 1 - C = (1 - a) exp(C tau).

    Bisection on g(C) = 1 - C - (1 - a) e^{C tau}, which is decreasing with
    g(0) = a > 0; iterated until the bracket stops shrinking in floating point.
    """
    a, tau = float(a), float(tau)
    if not (0 < a <= 1):
        raise DomainError(f"a must lie in (0, 1], got {a}")
    if not tau >= 0:
        raise DomainError(f"tau must be nonnegative, got {tau}")

    def g(c):
        return 1.0 - c - (1.0 - a) * math.exp(c * tau)

    if g(1.0) >= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g(mid)
        if gm == 0:
            return mid
        if gm > 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(g(lo)) <= abs(g(hi)) else hi


@dataclass(frozen=True)
class FlockingCertificate:
    lhs: float
    rhs: float
    satisfied: bool
    R_v: float
    d_star: Optional[float] = None
    psi_star: Optional[float] = None
    decay_rate_C: Optional[float] = None
    a0: Optional[float] = None  # d_X(-tau) + R_v tau
    tau: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity literal
        if math.isinf(d["rhs"]):
            d["rhs"] = "inf"
        return {k: d[k] for k in ("lhs", "rhs", "satisfied", "d_star", "psi_star", "decay_rate_C", "R_v", "a0", "tau")}

    @classmethod
    def from_dict(cls, d: dict) -> "FlockingCertificate":
        d = dict(d)
        if d.get("rhs") == "inf":
            d["rhs"] = math.inf
        return cls(**d)

    def envelope(self, t, dv_max_history: float):
        """Certified bound max_{[-tau,0]} d_V * exp(-C t); None if not satisfied."""
        if not self.satisfied:
            return None
        return dv_max_history * np.exp(-self.decay_rate_C * np.asarray(t, dtype=float))


def _solve_d_star(psi: InfluenceFunction, a0: float, budget: float, tol: float = 1e-12) -> float:
    # psi > 0 makes a -> int_{a0}^a psi strictly increasing, so the root is unique
    if budget <= 0:
        return a0
    lo, step = a0, max(budget, 1e-3)
    hi = a0 + step
    for _ in range(2000):
        if psi.integral(a0, hi) >= budget:
            break
        lo, step = hi, 2.0 * step
        hi = a0 + step
    else:
        raise ConvergenceError("could not bracket d_*", partial=hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        val = psi.integral(a0, mid) - budget
        if abs(val) <= tol or mid <= lo or mid >= hi:
            return mid
        if val > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def certificate_from_series(times, dv, dx_minus_tau, R_v, tau, psi: InfluenceFunction,
                            cfg: QuadratureConfig = QuadratureConfig()) -> FlockingCertificate:
    """Evaluate the flocking condition from sampled history diameters.

    ``times``/``dv`` sample d_V on [-tau, 0] (trapezoid rule for the integral).
    """
    times = np.asarray(times, dtype=float)
    dv = np.asarray(dv, dtype=float)
    lhs = float(dv[-1] + np.sum(0.5 * (dv[1:] + dv[:-1]) * np.diff(times)))
    a0 = float(dx_minus_tau + R_v * tau)
    rhs = tail_integral(psi, a0, cfg).value
    satisfied = lhs < rhs
    if not satisfied:
        return FlockingCertificate(lhs, rhs, False, float(R_v), a0=a0, tau=float(tau))
    d_star = _solve_d_star(psi, a0, lhs)
    psi_star = float(psi(d_star))
    C = solve_decay_rate(psi_star, tau)
    return FlockingCertificate(lhs, rhs, True, float(R_v), d_star, psi_star, C, a0, float(tau))


def check_flocking_condition(history: InitialHistory, psi: InfluenceFunction, n_intervals: int = 100,
                             cfg: QuadratureConfig = QuadratureConfig()) -> FlockingCertificate:
    """Evaluate d_V(0) + int_{-tau}^0 d_V < int_{d_X(-tau) + R_v tau}^inf psi.

    When satisfied, also returns d_* (where the psi-integral from d_X(-tau) +
    R_v tau exhausts the left side), psi_* = psi(d_*) and the certified decay
    rate C.  Heavy-tailed kernels give rhs = +inf and are always satisfied.
    """
    xs, vs = history.sample_grid(n_intervals)
    times = (np.arange(n_intervals + 1) - n_intervals) * (history.tau / n_intervals)
    dv = np.array([diameter(v) for v in vs])
    R_v = max_speed_Rv(history, history.tau / n_intervals)
    return certificate_from_series(times, dv, diameter(xs[0]), R_v, history.tau, psi, cfg)


# --------------------------------------------------------------------------
# Characteristic roots of w' = -w(t - tau) - w(t)


@dataclass(frozen=True)
class CharacteristicRoot:
    mu: float
    sigma: float
    residual: float

    @property
    def value(self) -> complex:
        return complex(self.mu, self.sigma)


def _char(lam, tau):
    with np.errstate(over="ignore", invalid="ignore"):
        return lam + np.exp(-lam * tau) + 1.0


def _newton(lam, tau, max_iter=200):
    h = _char(lam, tau)
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            dh = 1.0 - tau * np.exp(-lam * tau)
        if dh == 0 or not np.isfinite(dh):
            break
        step = h / dh
        theta = 1.0
        # damping: halve until the residual decreases
        while theta > 1e-6:
            cand = lam - theta * step
            hc = _char(cand, tau)
            if np.isfinite(hc) and abs(hc) < abs(h):
                break
            theta *= 0.5
        else:
            break
        lam, h = cand, hc
        if abs(theta * step) <= 4e-16 * max(1.0, abs(lam)):
            break
    return lam, abs(h)


def characteristic_roots(tau: float, count: int, tol: float = 1e-12):
    """Roots lambda = mu + i sigma (sigma >= 0) of lambda + exp(-lambda tau) + 1 = 0.

    Damped Newton from a grid of starting points: real guesses plus
    sigma_0 = (2k+1) pi / (2 tau).  Returns the ``count`` roots of largest real
    part, sorted by descending mu; warns with PartialResultWarning when fewer
    distinct roots converge.
    """
    tau = float(tau)
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    if count < 1:
        raise DomainError("count must be positive")
    guesses = [complex(-2.0, 0.0), complex(-1.0, 0.0)]
    guesses += [complex(-1.0 - k / tau, 0.0) for k in range(1, 5)]
    for k in range(2 * count + 5):
        s0 = (2 * k + 1) * math.pi / (2 * tau)
        guesses.append(complex(-1.0, s0))
        guesses.append(complex(-math.log1p(s0) / tau, s0))

    found = []
    for g in guesses:
        lam, res = _newton(g, tau)
        if not (np.isfinite(lam) and res <= tol):
            continue
        if abs(lam.imag) <= 1e-10 * max(1.0, abs(lam)):
            lam = complex(lam.real, 0.0)
            lam_r, res_r = _newton(lam, tau)
            lam, res = complex(lam_r.real, 0.0), abs(_char(complex(lam_r.real, 0.0), tau))
            if res > tol:
                continue
        if lam.imag < 0:
            lam = lam.conjugate()
        if any(abs(lam - f.value) <= 1e-9 * max(1.0, abs(lam)) for f in found):
            continue
        found.append(CharacteristicRoot(float(lam.real), float(lam.imag), float(res)))

    found.sort(key=lambda r: (-r.mu, r.sigma))
    if len(found) < count:
        warnings.warn(f"only {len(found)} of {count} characteristic roots converged", PartialResultWarning, stacklevel=2)
    return found[:count]


# --------------------------------------------------------------------------
# Decay fitting and classification


@dataclass(frozen=True)
class DecayFit:
    rate: float
    truncated: bool
    n_points: int


def _noise_floor(traj):
    speed = np.max(np.abs(traj.velocities.reshape(len(traj), -1)), axis=1)
    return 128 * np.finfo(float).eps * speed + np.finfo(float).tiny


def fit_log_slope(times, values, floor=None) -> DecayFit:
    """Least-squares exponential decay rate of positive samples (positive = decay)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    fl = np.zeros_like(y) if floor is None else np.broadcast_to(np.asarray(floor, dtype=float), y.shape)
    below = np.flatnonzero(~(y > fl))
    truncated = below.size > 0
    if truncated:
        t, y = t[: below[0]], y[: below[0]]
    if t.size < 2:
        return DecayFit(0.0 if not truncated else math.inf, truncated, int(t.size))
    slope = np.polyfit(t, np.log(y), 1)[0]
    return DecayFit(float(-slope), truncated, int(t.size))


def fit_decay_rate(traj, window, _dv=None) -> DecayFit:
    """Fitted exponential rate of d_V on ``window = (t0, t1)``.

    Samples at or below the rounding floor end the fit early (``truncated``).
    """
    t0, t1 = window
    dv = diameter_series(traj)[1] if _dv is None else _dv
    sel = (traj.times >= t0 - 1e-12) & (traj.times <= t1 + 1e-12)
    return fit_log_slope(traj.times[sel], dv[sel], _noise_floor(traj)[sel])


@dataclass(frozen=True)
class Classification:
    kind: str  # "flocking" | "oscillatory" | "nonflocking"
    rate: Optional[float]
    monotone: bool
    n_local_maxima: int
    d_v_initial: float
    d_v_final: float
    eps_flock: float

    def to_dict(self) -> dict:
        return asdict(self)


def local_maxima(values, prominence: float):
    """Indices of interior local maxima with at least the given prominence."""
    idx, _ = find_peaks(np.asarray(values, dtype=float), prominence=prominence)
    return idx


def is_strictly_decreasing(values, floor=None) -> bool:
    """Strict decrease, ignoring samples once they reach the rounding floor."""
    y = np.asarray(values, dtype=float)
    if floor is not None:
        below = np.flatnonzero(y <= floor)
        if below.size:
            y = y[: below[0] + 1]
    return bool(np.all(np.diff(y) < 0))


def classify_behavior(traj, eps_flock: Optional[float] = None, t_tail: Optional[float] = None,
                      eps_flock_rel: float = 1e-6, t_tail_frac: float = 0.5) -> Classification:
    """Label a run as flocking, oscillatory or non-flocking.

    Flocking: d_V(t_max) < eps_flock and d_X bounded (d_V decays
    exponentially on the tail, so its time integral converges).  Oscillatory:
    at least three prominent local maxima of d_V after t_tail with a
    non-decreasing envelope.  Non-flocking otherwise.
    """
    _, dv = diameter_series(traj)
    z = traj.zero_index
    t, dvp = traj.times[z:], dv[z:]
    d0 = float(dvp[0])
    t_max = float(t[-1])
    eps = eps_flock if eps_flock is not None else eps_flock_rel * d0
    tt = t_tail if t_tail is not None else t_tail_frac * t_max
    floor = _noise_floor(traj)[z:]

    prom = max(1e-3 * d0, float(np.finfo(float).tiny))
    peaks = local_maxima(dvp, prom)
    monotone = is_strictly_decreasing(dvp, floor) if d0 > 0 else True

    tail = t >= tt
    fit = fit_log_slope(t[tail], dvp[tail], floor[tail])
    at_floor = bool(dvp[-1] <= floor[-1])
    bounded = at_floor or fit.rate > 0 or fit.truncated

    # a run already at the roundoff floor is aligned even when eps is 0
    if (dvp[-1] < eps or at_floor) and bounded:
        rate = fit_decay_rate(traj, (0.0, t_max), _dv=dv).rate if d0 > 0 else None
        return Classification("flocking", rate, monotone, int(peaks.size), d0, float(dvp[-1]), eps)
    tail_peaks = peaks[t[peaks] >= tt]
    heights = dvp[tail_peaks]
    # sampled peaks of a steady oscillation differ at the grid scale, so use the prominence tolerance
    if tail_peaks.size >= 3 and np.all(np.diff(heights) >= -prom):
        return Classification("oscillatory", None, monotone, int(peaks.size), d0, float(dvp[-1]), eps)
    return Classification("nonflocking", None, monotone, int(peaks.size), d0, float(dvp[-1]), eps)


# --------------------------------------------------------------------------
# Runtime checks of the analytic estimates


def verify_hull_contraction(vectors, weights_a, weights_b, kappa: float, atol: float = 1e-12) -> bool:
    """|sum a_i v_i - sum b_i v_i| <= (1 - kappa N) max_ij |v_i - v_j| for kappa-bounded weights."""
    v = _as_cloud(vectors, "vectors")
    a = np.asarray(weights_a, dtype=float)
    b = np.asarray(weights_b, dtype=float)
    n = v.shape[0]
    if a.shape != (n,) or b.shape != (n,):
        raise DomainError("each weight vector needs one entry per vector")
    if not (0 < kappa <= 1.0 / n + 1e-15):
        raise DomainError(f"kappa must lie in (0, 1/N], got {kappa}")
    for w in (a, b):
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < kappa - 1e-15):
            raise DomainError("weights must sum to 1 with every entry >= kappa")
    gap = float(np.linalg.norm(a @ v - b @ v))
    return gap <= max(0.0, 1.0 - kappa * n) * diameter(v) + atol


def contraction_factor(psi_value: float, n: int, form: str = "overlap") -> float:
    """Contraction factor of the velocity-diameter inequality.

    ``"overlap"``: 1 - (N-2) psi / (N-1), valid for zero-diagonal weights
    (two rows share N-2 entries, each at least psi/(N-1)).
    ``"uniform"``: 1 - psi, which needs every weight, including k = i, to be
    at least psi/N; it can fail for zero-diagonal weights (e.g. N = 2).
    """
    if form == "overlap":
        return 1.0 - (n - 2) * psi_value / (n - 1)
    if form == "uniform":
        return 1.0 - psi_value
    raise ValueError(f"unknown form {form!r}")


def velocity_inequality_violation(traj, form: str = "overlap") -> float:
    """Largest excess of the centered difference of d_V over its delayed dissipative bound.

    Compares (d_V(t+h) - d_V(t-h)) / 2h with
    k(psi(d_X(t - tau) + R_v tau)) d_V(t - tau) - d_V(t), where k is
    :func:`contraction_factor`, at recorded times t > 0.  Samples where the
    maximizing pair of d_V changes between neighbours are skipped (kinks).
    """
    series = _Series(traj)
    R_v = traj.history.max_speed()
    pairs, _ = _argmax_pairs(traj.velocities)
    t = traj.times
    worst = -math.inf
    for k in range(traj.zero_index + 1, len(t) - 1):
        if pairs[k - 1] != pairs[k] or pairs[k] != pairs[k + 1]:
            continue
        deriv = (series.dv[k + 1] - series.dv[k - 1]) / (t[k + 1] - t[k - 1])
        dxd = float(series.at(series.dx, t[k] - traj.tau))
        dvd = float(series.at(series.dv, t[k] - traj.tau))
        fac = contraction_factor(float(traj.psi(dxd + R_v * traj.tau)), traj.N, form)
        worst = max(worst, deriv - (fac * dvd - series.dv[k]))
    return worst


def envelope_violation(traj, cert: FlockingCertificate) -> float:
    """max_t [d_V(t) - max_{[-tau,0]} d_V * exp(-C t)] over recorded t >= 0."""
    if not cert.satisfied:
        raise DomainError("certificate is not satisfied; no envelope exists")
    _, dv = diameter_series(traj)
    z = traj.zero_index
    dv_hist = float(np.max(dv[: z + 1]))
    bound = cert.envelope(traj.times[z:], dv_hist)
    return float(np.max(dv[z:] - bound))
