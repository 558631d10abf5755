"""Influence functions psi and the integrals derived from them.

Every builtin family is bounded by 1, positive, nonincreasing and Lipschitz
on [0, inf) with psi(0) = 1.  Evaluation clamps from below at the smallest
positive normal double so normalized weights never divide by zero.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special

from .errors import ConfigurationError, ConvergenceError, DomainError

TINY = float(np.finfo(float).tiny)


class Family(str, enum.Enum):
    EXPONENTIAL = "exponential"
    CUCKER_SMALE = "cucker_smale"
    CONSTANT = "constant"
    TABULATED = "tabulated"


# integer codes understood by the compiled and pure-Python kernels
KERNEL_CODES = {
    Family.EXPONENTIAL: 0,
    Family.CUCKER_SMALE: 1,
    Family.CONSTANT: 2,
    Family.TABULATED: 3,
}


@dataclass(frozen=True)
class InfluenceFunction:
    """An influence kernel psi: [0, inf) -> (0, 1].

    Build instances with the classmethod constructors rather than directly.
    ``beta`` is only used by the Cucker-Smale family, ``grid``/``values`` only
    by the tabulated one.
    """

    family: Family
    beta: Optional[float] = None
    grid: Optional[tuple] = None
    values: Optional[tuple] = None
    _grid_arr: np.ndarray = field(default=None, repr=False, compare=False)
    _values_arr: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def exponential(cls) -> "InfluenceFunction":
        """psi(s) = exp(-s)."""
        return cls(Family.EXPONENTIAL)

    @classmethod
    def cucker_smale(cls, beta: float) -> "InfluenceFunction":
        """psi(s) = (1 + s^2)^(-beta), the classical rate with unit prefactor."""
        beta = float(beta)
        if not (beta > 0 and math.isfinite(beta)):
            raise ConfigurationError(f"beta must be a positive finite real, got {beta}", "psi.beta")
        return cls(Family.CUCKER_SMALE, beta=beta)

    @classmethod
    def constant(cls) -> "InfluenceFunction":
        return cls(Family.CONSTANT)

    @classmethod
    def tabulated(cls, grid, values) -> "InfluenceFunction":
        """Piecewise-linear interpolant through (grid, values).

        Constant extension past both ends.  Monotonicity and psi(0) = 1 are
        *not* enforced here; run :func:`validate_influence` for that.
        """
        g = np.asarray(grid, dtype=float)
        v = np.asarray(values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or g.size < 1:
            raise ConfigurationError("grid and values must be 1-D arrays of equal nonzero length", "psi.grid")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(v))):
            raise ConfigurationError("grid and values must be finite", "psi.grid")
        if g[0] < 0 or np.any(np.diff(g) <= 0):
            raise ConfigurationError("grid must be nonnegative and strictly increasing", "psi.grid")
        if np.any(v <= 0):
            raise ConfigurationError("tabulated values must be positive", "psi.values")
        g.setflags(write=False)
        v.setflags(write=False)
        obj = cls(Family.TABULATED, grid=tuple(g.tolist()), values=tuple(v.tolist()))
        object.__setattr__(obj, "_grid_arr", g)
        object.__setattr__(obj, "_values_arr", v)
        return obj

    def __call__(self, s):
        """Vectorized evaluation (no domain check, clamped below at TINY)."""
        s = np.asarray(s, dtype=float)
        fam = self.family
        if fam is Family.EXPONENTIAL:
            out = np.exp(-s)
        elif fam is Family.CUCKER_SMALE:
            out = (1.0 + s * s) ** (-self.beta)
        elif fam is Family.CONSTANT:
            out = np.ones_like(s)
        else:
            out = np.interp(s, self._grid_arr, self._values_arr)
        return np.maximum(out, TINY)

    @property
    def sup_bound(self) -> float:
        if self.family is Family.TABULATED:
            return float(np.max(self._values_arr))
        return 1.0

    @property
    def lipschitz_bound(self) -> float:
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return 1.0
        if fam is Family.CONSTANT:
            return 0.0
        if fam is Family.CUCKER_SMALE:
            # |psi'| = 2 beta s (1+s^2)^(-beta-1) peaks at s^2 = 1/(2 beta + 1)
            b = self.beta
            s2 = 1.0 / (2.0 * b + 1.0)
            return 2.0 * b * math.sqrt(s2) * (1.0 + s2) ** (-b - 1.0)
        if self._grid_arr.size < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self._values_arr) / np.diff(self._grid_arr))))

    @property
    def heavy_tailed(self) -> bool:
        """True when the integral of psi over [0, inf) diverges."""
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return False
        if fam is Family.CUCKER_SMALE:
            return self.beta <= 0.5
        # constant and tabulated kernels extend at a positive value forever
        return True

    def integral(self, a: float, b: float) -> float:
        """Exact definite integral of psi over [a, b] (signed, a may exceed b)."""
        if a > b:
            return -self.integral(b, a)
        if a < 0:
            raise DomainError(f"integration limits must be nonnegative, got {a}")
        if a == b:
            return 0.0
        fam = self.family
        if fam is Family.EXPONENTIAL:
            # -expm1 keeps accuracy when b - a is small
            return math.exp(-a) * -math.expm1(-(b - a))
        if fam is Family.CONSTANT:
            return b - a
        if fam is Family.CUCKER_SMALE:
            if math.isinf(b):
                return _cs_tail(self.beta, a)
            if self.beta > 0.5:
                return _cs_tail(self.beta, a) - _cs_tail(self.beta, b)
            val, _ = integrate.quad(lambda s: (1.0 + s * s) ** (-self.beta), a, b, epsabs=1e-13, epsrel=1e-13, limit=200)
            return val
        if math.isinf(b):
            return math.inf
        return _piecewise_linear_integral(self._grid_arr, self._values_arr, a, b)

    def kernel_params(self):
        """(code, beta, grid, values) in the form the stepping kernels expect."""
        if self.family is Family.TABULATED:
            grid, values = self._grid_arr, self._values_arr
        else:
            grid = values = np.zeros(1)
        return KERNEL_CODES[self.family], float(self.beta or 0.0), np.ascontiguousarray(grid), np.ascontiguousarray(values)

    def to_dict(self) -> dict:
        d = {"family": self.family.value}
        if self.family is Family.CUCKER_SMALE:
            d["beta"] = self.beta
        elif self.family is Family.TABULATED:
            d["grid"] = list(self.grid)
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InfluenceFunction":
        if not isinstance(d, dict) or "family" not in d:
            raise ConfigurationError("expected an object with a 'family' key", "psi")
        fam = d["family"]
        if fam == "exponential":
            return cls.exponential()
        if fam == "cucker_smale":
            if "beta" not in d:
                raise ConfigurationError("cucker_smale requires 'beta'", "psi.beta")
            return cls.cucker_smale(d["beta"])
        if fam == "constant":
            return cls.constant()
        if fam == "tabulated":
            return cls.tabulated(d.get("grid", []), d.get("values", []))
        raise ConfigurationError(f"unknown influence family {fam!r}", "psi.family")


def _cs_tail(beta: float, a: float) -> float:
    # with u = 1/(1+s^2): int_a^inf (1+s^2)^-beta ds = 1/2 B(1/(1+a^2); beta-1/2, 1/2)
    if beta <= 0.5:
        return math.inf
    x = 1.0 / (1.0 + a * a)
    return 0.5 * float(special.betainc(beta - 0.5, 0.5, x) * special.beta(beta - 0.5, 0.5))


def _piecewise_linear_integral(grid, values, a, b):
    knots = grid[(grid > a) & (grid < b)]
    xs = np.concatenate(([a], knots, [b]))
    ys = np.interp(xs, grid, values)
    return float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)))


def eval_psi(f: InfluenceFunction, s: float) -> float:
    """Evaluate psi at a single nonnegative distance."""
    s = float(s)
    if not s >= 0:
        raise DomainError(f"psi is defined on [0, inf), got s={s}")
    return float(f(s))


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-10
    truncation_radius: float = 1e3
    method: str = "auto"  # "auto" | "analytic" | "quadrature"
    limit: int = 500


@dataclass(frozen=True)
class TailIntegral:
    value: float
    method: str
    error_estimate: float = 0.0
    abs_tol: Optional[float] = None
    truncation_radius: Optional[float] = None

    @property
    def divergent(self) -> bool:
        return math.isinf(self.value)


def tail_integral(f: InfluenceFunction, a: float, cfg: QuadratureConfig = QuadratureConfig()) -> TailIntegral:
    """Integral of psi over [a, inf).

    Heavy-tailed kernels return ``+inf`` with method ``"analytic"``.  With
    ``cfg.method == "quadrature"`` the finite part is integrated adaptively on
    [a, a + truncation_radius] and the remainder beyond is added in closed form.

    Raises
    ------
    ConvergenceError
        If the adaptive quadrature error estimate exceeds ``cfg.abs_tol``.
    """
    a = float(a)
    if not a >= 0:
        raise DomainError(f"lower limit must be nonnegative, got {a}")
    if f.heavy_tailed:
        return TailIntegral(math.inf, "analytic")
    if cfg.method not in ("auto", "analytic", "quadrature"):
        raise ConfigurationError(f"unknown quadrature method {cfg.method!r}", "quadrature.method")
    if cfg.method in ("auto", "analytic"):
        return TailIntegral(f.integral(a, math.inf), "analytic")

    b = a + cfg.truncation_radius
    val, err, info = integrate.quad(
        f, a, b, epsabs=0.5 * cfg.abs_tol, epsrel=0.0, limit=cfg.limit, full_output=True
    )[:3]
    if f.family is Family.EXPONENTIAL:
        remainder = math.exp(-b)
    else:
        # (1+s^2)^-beta <= s^-2beta
        remainder = b ** (1.0 - 2.0 * f.beta) / (2.0 * f.beta - 1.0)
    if not err <= cfg.abs_tol:
        raise ConvergenceError(
            f"adaptive quadrature error {err:.3g} exceeds abs_tol {cfg.abs_tol:.3g} "
            f"after {info.get('last', '?')} subintervals",
            partial=val + remainder,
        )
    return TailIntegral(val + remainder, "quadrature", err + remainder, cfg.abs_tol, cfg.truncation_radius)


@dataclass(frozen=True)
class Violation:
    kind: str  # positivity | monotonicity | normalization | lipschitz | domain
    index: int
    detail: str


def validate_influence(f: InfluenceFunction, grid) -> list:
    """Check the kernel assumptions on a finite grid; an empty list means pass."""
    s = np.asarray(grid, dtype=float).ravel()
    report = []
    if s.size == 0:
        return [Violation("domain", -1, "empty grid")]
    if np.any(s < 0):
        i = int(np.argmax(s < 0))
        report.append(Violation("domain", i, f"negative grid point {s[i]}"))
        s = s[s >= 0]
    if np.any(np.diff(s) < 0):
        report.append(Violation("domain", int(np.argmax(np.diff(s) < 0)), "grid is not sorted"))
        s = np.sort(s)

    vals = f(s)
    for i in np.flatnonzero(~(vals > 0)):
        report.append(Violation("positivity", int(i), f"psi({s[i]}) = {vals[i]}"))

    psi0 = float(f(0.0))
    tol0 = 0.0 if f.family is not Family.TABULATED else 1e-12
    if abs(psi0 - 1.0) > tol0:
        report.append(Violation("normalization", 0, f"psi(0) = {psi0!r}"))

    dv = np.diff(vals)
    slack = 4 * np.finfo(float).eps * vals[:-1]
    for i in np.flatnonzero(dv > slack):
        report.append(Violation("monotonicity", int(i), f"psi increases between s={s[i]} and s={s[i + 1]}"))

    L = f.lipschitz_bound
    ds = np.diff(s)
    for i in np.flatnonzero(np.abs(dv) > L * ds * (1 + 1e-12) + 1e-15):
        report.append(Violation("lipschitz", int(i), f"|dpsi|={abs(dv[i]):.3g} > {L:.3g}*{ds[i]:.3g}"))
    return report

