"""Scenario configuration, the builtin experiment library and run orchestration."""
from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as diag
from .errors import ConfigurationError, FlockError
from .influence import InfluenceFunction
from .integrator import IntegratorConfig, integrate
from .io import read_history_csv, read_json, write_json, write_series_csv, write_trajectory_csv
from .particles import InitialHistory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosticsConfig:
    eps_flock_rel: float = 1e-6
    t_tail_frac: float = 0.5
    certificate_intervals: int = 100

    def __post_init__(self):
        if not self.eps_flock_rel > 0:
            raise ConfigurationError("must be positive", "diagnostics.eps_flock_rel")
        if not 0 <= self.t_tail_frac < 1:
            raise ConfigurationError("must lie in [0, 1)", "diagnostics.t_tail_frac")
        if not (isinstance(self.certificate_intervals, int) and self.certificate_intervals >= 1):
            raise ConfigurationError("must be a positive integer", "diagnostics.certificate_intervals")


def _parse_anchor_time(value, tau):
    # "-tau" keeps the history anchored at the start of the window when tau is swept
    if value == "-tau":
        return -tau
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"expected a number or '-tau', got {value!r}", "history.anchor_time") from exc


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one run; serialized as JSON.

    ``history`` is a plain dict: either
    ``{"kind": "constant_velocity", "velocities": [[...]], "anchor_positions": [[...]] | null,
    "anchor_time": float | "-tau"}`` or ``{"kind": "tabulated", "path": "file.csv"}``.
    """

    name: str
    tau: float
    psi: InfluenceFunction
    history: dict
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: str = "runs"
    base_dir: Optional[str] = None  # resolves relative tabulation paths; not serialized

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ConfigurationError("must be a nonempty string", "name")
        if not (isinstance(self.tau, (int, float)) and self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigurationError(f"must be a positive finite real, got {self.tau!r}", "tau")
        if not isinstance(self.history, dict) or "kind" not in self.history:
            raise ConfigurationError("expected an object with a 'kind' key", "history")
        kind = self.history["kind"]
        if kind == "constant_velocity":
            if "velocities" not in self.history:
                raise ConfigurationError("missing 'velocities'", "history.velocities")
        elif kind == "tabulated":
            if "path" not in self.history:
                raise ConfigurationError("missing 'path'", "history.path")
            if not self._table_path().is_file():
                raise ConfigurationError(f"file not found: {self._table_path()}", "history.path")
        else:
            raise ConfigurationError(f"unknown history kind {kind!r}", "history.kind")

    def _table_path(self) -> Path:
        p = Path(self.history["path"])
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p

    def build_history(self) -> InitialHistory:
        h = self.history
        if h["kind"] == "tabulated":
            return read_history_csv(self._table_path(), self.tau)
        try:
            v = np.asarray(h["velocities"], dtype=float)
            x0 = h.get("anchor_positions")
            x0 = None if x0 is None else np.asarray(x0, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError("velocities/anchor_positions must be numeric arrays", "history") from exc
        if v.ndim == 1:
            v = v[:, None]
        if x0 is not None and x0.ndim == 1:
            x0 = x0[:, None]
        return InitialHistory.constant_velocity(v, self.tau, x0, _parse_anchor_time(h.get("anchor_time", 0.0), self.tau))

    @property
    def shape(self):
        h = self.build_history()
        return h.N, h.d

    def to_dict(self) -> dict:
        n, d = self.shape
        return {
            "name": self.name,
            "N": n,
            "d": d,
            "tau": self.tau,
            "psi": self.psi.to_dict(),
            "history": copy.deepcopy(self.history),
            "integrator": self.integrator.to_dict(),
            "diagnostics": {
                "eps_flock_rel": self.diagnostics.eps_flock_rel,
                "t_tail_frac": self.diagnostics.t_tail_frac,
                "certificate_intervals": self.diagnostics.certificate_intervals,
            },
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("scenario config must be a JSON object")
        known = {"name", "N", "d", "tau", "psi", "history", "integrator", "diagnostics", "output"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown field(s) {unknown}")
        for key in ("name", "tau", "psi", "history"):
            if key not in d:
                raise ConfigurationError("required field is missing", key)
        integ = d.get("integrator", {})
        diag_cfg = d.get("diagnostics", {})
        for section, obj, fields_ in (("integrator", integ, IntegratorConfig.__dataclass_fields__),
                                      ("diagnostics", diag_cfg, DiagnosticsConfig.__dataclass_fields__)):
            if not isinstance(obj, dict):
                raise ConfigurationError("expected an object", section)
            bad = sorted(set(obj) - set(fields_))
            if bad:
                raise ConfigurationError(f"unknown field(s) {bad}", section)
        try:
            tau = float(d["tau"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"expected a number, got {d['tau']!r}", "tau") from exc
        cfg = cls(
            name=d["name"],
            tau=tau,
            psi=InfluenceFunction.from_dict(d["psi"]),
            history=copy.deepcopy(d["history"]),
            integrator=IntegratorConfig(**integ),
            diagnostics=DiagnosticsConfig(**diag_cfg),
            output=d.get("output", "runs"),
            base_dir=None if base_dir is None else str(base_dir),
        )
        n, dim = cfg.shape
        for key, val in (("N", n), ("d", dim)):
            if key in d and d[key] != val:
                raise ConfigurationError(f"declared {d[key]} but the history has {val}", key)
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        return cls.from_dict(read_json(path), base_dir=path.parent)

    def save(self, path):
        write_json(path, self.to_dict())

    def with_overrides(self, tau=None, dt=None, scheme=None, beta=None) -> "ScenarioConfig":
        cfg = self
        if tau is not None:
            cfg = replace(cfg, tau=float(tau))
        if dt is not None or scheme is not None:
            integ = cfg.integrator
            cfg = replace(cfg, integrator=replace(integ, dt=integ.dt if dt is None else float(dt),
                                                  scheme=integ.scheme if scheme is None else scheme))
        if beta is not None:
            if cfg.psi.family.value != "cucker_smale":
                raise ConfigurationError("beta applies only to the cucker_smale family", "psi.beta")
            cfg = replace(cfg, psi=InfluenceFunction.cucker_smale(float(beta)))
        return cfg


# --------------------------------------------------------------------------
# builtin scenarios: constant velocities, every agent at the origin at s = -tau

_FAMILIES = {
    "fig1": dict(velocities=[1.0, -1.0], psi={"family": "exponential"}, t_max=20.0, eps=1e-6),
    "fig2": dict(velocities=[-10.0, 0.0, 20.0], psi={"family": "exponential"}, t_max=15.0, eps=1e-3),
    "fig3": dict(velocities=[-0.1, 0.0, 0.5, 0.6], psi={"family": "cucker_smale", "beta": 4.0}, t_max=60.0, eps=1e-6),
}
_TAUS = {"tau025": 0.25, "tau1": 1.0}


def builtin_names():
    return [f"{fig}_{tag}" for fig in _FAMILIES for tag in _TAUS]


def builtin(name: str) -> ScenarioConfig:
    try:
        fig, tag = name.split("_", 1)
        entry, tau = _FAMILIES[fig], _TAUS[tag]
    except (ValueError, KeyError):
        raise ConfigurationError(f"unknown builtin scenario {name!r}; available: {builtin_names()}", "name") from None
    return ScenarioConfig(
        name=name,
        tau=tau,
        psi=InfluenceFunction.from_dict(entry["psi"]),
        history={"kind": "constant_velocity", "velocities": [[v] for v in entry["velocities"]],
                 "anchor_positions": None, "anchor_time": "-tau"},
        integrator=IntegratorConfig(t_max=entry["t_max"]),
        diagnostics=DiagnosticsConfig(eps_flock_rel=entry["eps"]),
    )


# --------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    config: ScenarioConfig
    trajectory: object
    classification: diag.Classification
    certificate: diag.FlockingCertificate
    d_x: np.ndarray
    d_v: np.ndarray
    out_dir: Optional[Path] = None

    def summary(self) -> dict:
        return {
            "name": self.config.name,
            "classification": self.classification.kind,
            "rate": self.classification.rate,
            "monotone": self.classification.monotone,
            "n_local_maxima": self.classification.n_local_maxima,
            "d_v_final": self.classification.d_v_final,
            "certificate_satisfied": self.certificate.satisfied,
        }


def simulate(cfg: ScenarioConfig) -> RunResult:
    history = cfg.build_history()
    traj = integrate(history, cfg.psi, cfg.integrator)
    d_x, d_v = diag.diameter_series(traj)
    cls_ = diag.classify_behavior(traj, eps_flock_rel=cfg.diagnostics.eps_flock_rel,
                                  t_tail_frac=cfg.diagnostics.t_tail_frac)
    cert = diag.check_flocking_condition(history, cfg.psi, cfg.diagnostics.certificate_intervals)
    return RunResult(cfg, traj, cls_, cert, d_x, d_v)


def run_scenario(cfg: ScenarioConfig, out: Optional[str] = None) -> RunResult:
    """Integrate, diagnose and write ``<out>/<name>/`` with the run's artifacts.

    Files: trajectory.csv (+ trajectory.json sidecar), diameters.csv
    (t, d_X, d_V), diagnostics.json, certificate.json, config.json.
    """
    res = simulate(cfg)
    out_dir = Path(out if out is not None else cfg.output) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = res.trajectory
    write_trajectory_csv(traj, out_dir / "trajectory.csv")
    write_json(out_dir / "trajectory.json", {"config": cfg.to_dict(), **traj.metadata()})
    write_series_csv(out_dir / "diameters.csv", ["t", "d_X", "d_V"], [traj.times, res.d_x, res.d_v])
    write_json(out_dir / "diagnostics.json", {
        "classification": res.classification.to_dict(),
        "lyapunov_final": diag.lyapunov(traj, traj.t_end),
        "max_speed": float(np.max(np.linalg.norm(traj.velocities, axis=2))),
        "R_v": res.certificate.R_v,
    })
    write_json(out_dir / "certificate.json", res.certificate.to_dict())
    cfg.save(out_dir / "config.json")
    res.out_dir = out_dir
    log.info("%s: %s, outputs in %s", cfg.name, res.classification.kind, out_dir)
    return res


def _sweep_one(args):
    cfg, param, value = args
    row = {"parameter": param, "value": value}
    try:
        if param == "tau":
            run_cfg = cfg.with_overrides(tau=value)
        elif param == "dt":
            run_cfg = cfg.with_overrides(dt=value)
        else:
            run_cfg = cfg.with_overrides(beta=value)
        res = simulate(run_cfg)
        row.update(res.summary())
        row["error"] = None
    except (FlockError, ValueError) as exc:
        row.update({"classification": None, "rate": None, "error": f"{type(exc).__name__}: {exc}"})
    return row


def sweep(cfg: ScenarioConfig, parameter: str, values, workers: int = 1):
    """Run one simulation per value of tau, dt or beta; failures are recorded, not raised."""
    if parameter not in ("tau", "dt", "beta"):
        raise ConfigurationError(f"sweep parameter must be tau, dt or beta, got {parameter!r}", "parameter")
    values = [float(v) for v in values]
    if not values:
        raise ConfigurationError("no values to sweep", "values")
    jobs = [(cfg, parameter, v) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]
