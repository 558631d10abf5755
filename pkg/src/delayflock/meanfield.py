"""Empirical measures, the kinetic force field and Wasserstein-1 comparisons.

Atomic measures are pushed forward by the particle solver, so the kinetic
dynamics of an N-atom measure are exactly the N-agent trajectories.  All
empirical measures carry mass 1 (weight 1/N per atom).
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .diagnostics import FlockingCertificate, certificate_from_series, diameter
from .errors import ConfigurationError, DomainError, PositivityError, UnsupportedConfigurationError
from .influence import InfluenceFunction, QuadratureConfig
from .integrator import IntegratorConfig, integrate
from .particles import InitialHistory, _as_cloud

INCLUDE_ALL = "include_all"
EXCLUDE_SELF = "exclude_self"

# replicated clouds larger than this are refused (assignment is cubic)
MAX_REPLICATED = 20000


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Equal-weight atoms at phase-space points (x_i, v_i)."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = _as_cloud(self.positions, "positions")
        v = _as_cloud(self.velocities, "velocities")
        if x.shape != v.shape:
            raise DomainError(f"positions {x.shape} and velocities {v.shape} differ in shape")
        if x.shape[0] < 1:
            raise DomainError("an empirical measure needs at least one atom")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise DomainError("atoms must have finite coordinates")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.N, 1.0 / self.N)

    def phase_points(self) -> np.ndarray:
        """Atoms as points of R^{2d}."""
        return np.hstack([self.positions, self.velocities])


@dataclass(frozen=True)
class MeasureHistory:
    """Empirical measures on a time grid covering [-tau, 0]."""

    tau: float
    times: np.ndarray
    measures: tuple

    def __post_init__(self):
        ts = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "measures", tuple(self.measures))
        if ts.ndim != 1 or ts.size != len(self.measures) or ts.size < 2:
            raise ConfigurationError("measure history needs one measure per grid time (at least two)")
        if np.any(np.diff(ts) <= 0):
            raise ConfigurationError("measure history times must be strictly increasing")
        tol = 1e-9 * max(1.0, self.tau)
        if abs(ts[0] + self.tau) > tol or abs(ts[-1]) > tol:
            raise ConfigurationError(f"measure history grid must span [-tau, 0] = [{-self.tau}, 0]")
        shapes = {(m.N, m.d) for m in self.measures}
        if len(shapes) != 1:
            raise ConfigurationError("all measures of a history must share N and d")

    @classmethod
    def from_history(cls, history: InitialHistory, n_intervals: int = 100) -> "MeasureHistory":
        xs, vs = history.sample_grid(n_intervals)
        times = (np.arange(n_intervals + 1) - n_intervals) * (history.tau / n_intervals)
        return cls(history.tau, times, tuple(EmpiricalMeasure(x, v) for x, v in zip(xs, vs)))


def empirical_from_trajectory(traj, t: float) -> EmpiricalMeasure:
    s = traj.state_at(t)
    return EmpiricalMeasure(s.positions, s.velocities)


def meanfield_force(measure_delayed: EmpiricalMeasure, x, v, psi: InfluenceFunction,
                    normalization: str = INCLUDE_ALL, index: Optional[int] = None) -> np.ndarray:
    """F[f](x, v) = sum_k psi(|x - y_k|) (w_k - v) / sum_k psi(|x - y_k|) over the atoms.

    ``normalization="include_all"`` sums over every atom; ``"exclude_self"``
    omits atom ``index`` from both sums, which reproduces the particle system.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    y, w = measure_delayed.positions, measure_delayed.velocities
    if x.shape != (measure_delayed.d,) or v.shape != (measure_delayed.d,):
        raise DomainError(f"x and v must be vectors of length d={measure_delayed.d}")
    weights = psi(np.linalg.norm(y - x, axis=1))
    if normalization == EXCLUDE_SELF:
        if index is None or not 0 <= index < measure_delayed.N:
            raise DomainError("exclude_self needs a valid atom index")
        weights = weights.copy()
        weights[index] = 0.0
    elif normalization != INCLUDE_ALL:
        raise DomainError(f"unknown normalization {normalization!r}")
    total = weights.sum()
    if not total >= np.finfo(float).tiny:
        raise PositivityError("influence weights sum to zero; the force is undefined")
    return (weights @ w) / total - v


def measure_support_diameters(measure: EmpiricalMeasure):
    """(d_X, d_V): diameters of the position and velocity projections of the support."""
    return diameter(measure.positions), diameter(measure.velocities)


# --------------------------------------------------------------------------
# Wasserstein-1 on equal-weight atoms


def wasserstein1_points(p, q) -> float:
    """Optimal matching cost (1/N) min_sigma sum |p_i - q_sigma(i)| for equal-size clouds."""
    p = _as_cloud(p, "p")
    q = _as_cloud(q, "q")
    if p.shape[0] != q.shape[0]:
        raise UnsupportedConfigurationError(f"clouds must have equal size, got {p.shape[0]} and {q.shape[0]}")
    if p.shape[1] != q.shape[1]:
        raise DomainError("clouds live in different dimensions")
    cost = cdist(p, q)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / p.shape[0])


def wasserstein1_sorted(p, q) -> float:
    """Scalar clouds: match sorted samples."""
    a = np.sort(np.asarray(p, dtype=float).ravel())
    b = np.sort(np.asarray(q, dtype=float).ravel())
    if a.size != b.size:
        raise UnsupportedConfigurationError(f"clouds must have equal size, got {a.size} and {b.size}")
    return float(np.mean(np.abs(a - b)))


def wasserstein1_bruteforce(p, q) -> float:
    """Exhaustive minimum over all permutations; only for tiny clouds."""
    p = _as_cloud(p, "p")
    q = _as_cloud(q, "q")
    n = p.shape[0]
    if n > 8:
        raise UnsupportedConfigurationError("brute force is limited to N <= 8")
    cost = cdist(p, q)
    return float(min(cost[np.arange(n), list(perm)].sum() for perm in itertools.permutations(range(n))) / n)


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """d_1 between equal-size empirical measures, Euclidean ground metric on R^{2d}."""
    if mu.N != nu.N:
        raise UnsupportedConfigurationError(f"measures must have equal size, got {mu.N} and {nu.N}")
    if mu.d != nu.d:
        raise DomainError("measures live in different dimensions")
    return wasserstein1_points(mu.phase_points(), nu.phase_points())


def replicate(measure: EmpiricalMeasure, times: int) -> EmpiricalMeasure:
    """Same probability measure with every atom repeated ``times`` times."""
    return EmpiricalMeasure(np.repeat(measure.positions, times, axis=0), np.repeat(measure.velocities, times, axis=0))


def wasserstein1_replicated(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """d_1 for clouds of different sizes, by replicating both to lcm(N, N')."""
    m = math.lcm(mu.N, nu.N)
    if m > MAX_REPLICATED:
        raise ConfigurationError(f"lcm({mu.N}, {nu.N}) = {m} exceeds the replication cap {MAX_REPLICATED}")
    return wasserstein1(replicate(mu, m // mu.N), replicate(nu, m // nu.N))


# --------------------------------------------------------------------------
# Force-field bounds


@dataclass(frozen=True)
class ForceBounds:
    R: float
    psi_star: float
    lipschitz_x: float
    lipschitz_v: float
    sup: float


def force_bounds(psi: InfluenceFunction, R: float) -> ForceBounds:
    """Constants for a measure supported in the phase-space ball B(0, R).

    |F(x,v) - F(x',v')| <= K_x |x - x'| + |v - v'| with
    K_x = 2 (R+1) max(1, R) sup psi Lip psi / psi_*^2, psi_* = psi(2R), and
    |F| <= R (sup psi / psi_* + 1) inside the ball.
    """
    if not R > 0:
        raise DomainError("R must be positive")
    psi_star = float(psi(2.0 * R))
    sup = psi.sup_bound
    k_x = 2.0 * (R + 1.0) * max(1.0, R) * sup * psi.lipschitz_bound / psi_star ** 2
    return ForceBounds(float(R), psi_star, float(k_x), 1.0, float(R * (sup / psi_star + 1.0)))


# --------------------------------------------------------------------------
# Sampled data, stability and convergence studies


@dataclass(frozen=True)
class SampledDatum:
    """Random constant-velocity history: uniform positions in [0, 1]^d, velocities +-1 alternating.

    Draws are nested: the first N atoms of a size-M draw (M >= N) are the
    size-N draw, so studies over increasing N share their samples.
    """

    tau: float = 0.25
    d: int = 1
    seed: int = 0
    psi: InfluenceFunction = field(default_factory=InfluenceFunction.exponential)

    def positions(self, n: int, n_max: Optional[int] = None) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.0, 1.0, size=(max(n, n_max or n), self.d))[:n]

    def velocities(self, n: int) -> np.ndarray:
        sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        v = np.zeros((n, self.d))
        v[:, 0] = sign
        return v

    def history(self, n: int, n_max: Optional[int] = None) -> InitialHistory:
        return InitialHistory.constant_velocity(self.velocities(n), self.tau, anchor_positions=self.positions(n, n_max))

    def to_dict(self) -> dict:
        return {"tau": self.tau, "d": self.d, "seed": self.seed, "psi": self.psi.to_dict()}


def perturb_history(history: InitialHistory, scale: float, seed: int, target: str = "both") -> InitialHistory:
    """Shift a constant-velocity history by scale * xi, xi standard normal per atom."""
    if history.kind != "constant_velocity":
        raise UnsupportedConfigurationError("perturbation is implemented for constant-velocity histories")
    if target not in ("both", "positions", "velocities"):
        raise DomainError(f"unknown perturbation target {target!r}")
    rng = np.random.default_rng(seed)
    dx = rng.standard_normal(history.anchor_positions.shape)
    dv = rng.standard_normal(history.velocities.shape)
    x0 = history.anchor_positions + (scale * dx if target != "velocities" else 0.0)
    v0 = history.velocities + (scale * dv if target != "positions" else 0.0)
    return InitialHistory.constant_velocity(v0, history.tau, anchor_positions=x0, anchor_time=history.anchor_time)


@dataclass(frozen=True)
class StabilityResult:
    times: np.ndarray
    ratio: np.ndarray
    initial_distance: float
    log_slope: Optional[float]

    def to_rows(self):
        return [(float(t), float(r)) for t, r in zip(self.times, self.ratio)]


def stability_ratio(history: InitialHistory, psi: InfluenceFunction, perturbation_scale: float, T: float,
                    seed: int = 0, target: str = "both", dt: Optional[float] = None,
                    compare_every: int = 1) -> StabilityResult:
    """d_1(f1_t, f2_t) / max_{s in [-tau, 0]} d_1(g1_s, g2_s) along two integrated runs.

    The second run starts from ``history`` perturbed by ``perturbation_scale``.
    Identical histories give a ratio series of zeros.  ``log_slope`` is the
    least-squares slope of log(ratio) against t (None if the ratio vanishes).
    """
    other = perturb_history(history, perturbation_scale, seed, target) if perturbation_scale else history
    cfg = IntegratorConfig(t_max=T, dt=dt, record_stride=compare_every)
    tr1 = integrate(history, psi, cfg)
    tr2 = integrate(other, psi, cfg)
    z = tr1.zero_index
    g = max(wasserstein1(EmpiricalMeasure(tr1.positions[k], tr1.velocities[k]),
                         EmpiricalMeasure(tr2.positions[k], tr2.velocities[k])) for k in range(z + 1))
    times = tr1.times[z:]
    if g == 0.0:
        return StabilityResult(times, np.zeros(times.size), 0.0, None)
    num = np.array([wasserstein1(EmpiricalMeasure(tr1.positions[k], tr1.velocities[k]),
                                 EmpiricalMeasure(tr2.positions[k], tr2.velocities[k]))
                    for k in range(z, len(tr1))])
    ratio = num / g
    pos = ratio > 0
    slope = float(np.polyfit(times[pos], np.log(ratio[pos]), 1)[0]) if pos.sum() >= 2 else None
    return StabilityResult(times, ratio, float(g), slope)


@dataclass(frozen=True)
class ConvergenceTable:
    """Per-N distance to the largest-N reference: full time series and its maximum."""

    N_list: tuple
    times: np.ndarray
    series: dict  # N -> d_1(t) array
    seed: int

    @property
    def max_distance(self) -> dict:
        return {n: float(np.max(s)) for n, s in self.series.items()}

    def rows(self):
        for n, s in self.series.items():
            for t, d in zip(self.times, s):
                yield n, float(t), float(d)

    def write_csv(self, path, sidecar: Optional[dict] = None):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "t", "d1"])
            for n, t, d in self.rows():
                w.writerow([n, repr(t), repr(d)])
        meta = {"N_list": list(self.N_list), "seed": self.seed}
        meta.update(sidecar or {})
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(meta, fh, indent=2)


def convergence_study(datum: SampledDatum, N_list: Sequence[int], T: float, dt: Optional[float] = None,
                      compare_every: int = 10) -> ConvergenceTable:
    """max_t d_1(f^N_t, f^{N_max}_t) for each N < N_max on a shared recording grid.

    Every run starts from the nested draw of ``datum``; unequal sizes are
    compared by replicating both clouds to a common size.
    """
    ns = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigurationError("N_list must be strictly increasing", "N_list")
    if not ns or ns[0] < 2:
        raise ConfigurationError("every N must be at least 2", "N_list")
    if len(ns) == 1:
        return ConvergenceTable(tuple(ns), np.array([]), {}, datum.seed)
    n_max = ns[-1]
    for n in ns[:-1]:
        if math.lcm(n, n_max) > MAX_REPLICATED:
            raise ConfigurationError(f"lcm({n}, {n_max}) exceeds the replication cap {MAX_REPLICATED}", "N_list")
    cfg = IntegratorConfig(t_max=T, dt=dt, record_stride=compare_every)
    runs = {n: integrate(datum.history(n, n_max), datum.psi, cfg) for n in ns}
    ref = runs[n_max]
    z = ref.zero_index
    times = ref.times[z:]
    series = {}
    for n in ns[:-1]:
        tr = runs[n]
        series[n] = np.array([
            wasserstein1_replicated(EmpiricalMeasure(tr.positions[k], tr.velocities[k]),
                                    EmpiricalMeasure(ref.positions[k], ref.velocities[k]))
            for k in range(z, len(ref))
        ])
    return ConvergenceTable(tuple(ns), times, series, datum.seed)


def kinetic_flocking_certificate(history: MeasureHistory, psi: InfluenceFunction,
                                 cfg: QuadratureConfig = QuadratureConfig()) -> FlockingCertificate:
    """Flocking condition for a measure history, reading diameters from supports.

    R_V is the largest atom speed over the grid.
    """
    dv = np.array([diameter(m.velocities) for m in history.measures])
    dx0 = diameter(history.measures[0].positions)
    R_v = max(float(np.max(np.linalg.norm(m.velocities, axis=1))) for m in history.measures)
    return certificate_from_series(history.times, dv, dx0, R_v, history.tau, psi, cfg)
