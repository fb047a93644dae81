"""Viscosity laws F, the dissipation potentials G_eps and hypothesis checks.

The closed-form families are

=========== ===========================================
power_law   ``t**-alpha``
carreau     ``(mu + t**2)**(-alpha/2)``
cross       ``gamma + t**-alpha``
log_power   ``t**-alpha * log(1+t)**-beta`` up to ``gamma``,
            then ``log(1+gamma)**-beta * t**-alpha``
constant    ``c``
table       monotone interpolation of a user supplied table
=========== ===========================================

The potential is ``G_eps(t) = int_0^t s F(sqrt(eps + s**2)) ds`` and its
derivative ``G_eps'(t) = t F(sqrt(eps + t**2))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

__all__ = [
    "KINDS",
    "ViscosityModel",
    "ConditionReport",
    "ParameterError",
    "DomainError",
    "QuadratureError",
    "eval_F",
    "eval_Gprime",
    "eval_G",
    "check_conditions",
    "check_lower_bound",
    "theta_for_power_law",
    "default_grid",
    "catalog",
    "model_from_params",
    "load_table_model",
]

KINDS = ("power_law", "carreau", "cross", "log_power", "constant", "table")
KIND_CODES = {name: code for code, name in enumerate(KINDS)}

QUAD_ATOL = 1e-10
QUAD_RTOL = 1e-8


class ParameterError(ValueError):
    """Model fields violate the constraints of their kind."""


class DomainError(ValueError):
    """Evaluation requested outside the domain of the law."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class _Table:
    logt: np.ndarray
    logtf: np.ndarray
    interp: PchipInterpolator = field(repr=False)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        s = np.log(t)
        out = np.empty_like(s)
        lo, hi = self.logt[0], self.logt[-1]
        inside = (s >= lo) & (s <= hi)
        out[inside] = self.interp(s[inside])
        # power-law continuation with the end secant slopes
        left = s < lo
        if left.any():
            slope = (self.logtf[1] - self.logtf[0]) / (self.logt[1] - self.logt[0])
            out[left] = self.logtf[0] + slope * (s[left] - lo)
        right = s > hi
        if right.any():
            slope = (self.logtf[-1] - self.logtf[-2]) / (self.logt[-1] - self.logt[-2])
            out[right] = self.logtf[-1] + slope * (s[right] - hi)
        return np.exp(out) / t


@dataclass(frozen=True)
class ViscosityModel:
    """A viscosity law ``F`` together with the constants of (C1)-(C4).

    Parameters
    ----------
    kind : str
        One of :data:`KINDS`.
    alpha : float
        Decay exponent of the law.
    mu : float
        Carreau smoothing.
    gamma : float
        Cross offset, or log-power cutoff.
    beta : float
        Log-power exponent.
    kappa : float
        Lower-bound constant in ``F(t) >= kappa t**-alpha``.
    K, t0 : float, optional
        Constants of the growth condition ``F(t) <= K t**-a`` for ``t >= t0``.
        Defaults are derived from the kind.
    c : float
        Value of the constant law.
    strict : bool
        When False the kind constraints are not enforced, which lets
        deliberately inadmissible laws reach :func:`check_conditions`.
    """

    kind: str
    alpha: float = 1.0
    mu: float = 1.0
    gamma: float = 1.0
    beta: float = 0.25
    kappa: float = 1.0
    K: float | None = None
    t0: float | None = None
    c: float = 1.0
    strict: bool = True
    table: _Table | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown viscosity kind {self.kind!r}")
        if self.kind == "table" and self.table is None:
            raise ParameterError("table kind needs tabulated data")
        if self.strict:
            self.validate()

    def validate(self) -> None:
        """Raise :class:`ParameterError` if the fields break the kind constraints."""
        a = self.alpha
        if self.kind in ("power_law", "carreau", "cross"):
            if not 0.0 <= a <= 1.0:
                raise ParameterError(
                    f"alpha={a} outside [0, 1]: t*F(t) must be non-decreasing (C3)"
                )
        if self.kind == "carreau" and self.mu < 0:
            raise ParameterError("carreau needs mu >= 0")
        if self.kind == "cross" and self.gamma <= 0:
            raise ParameterError("cross needs gamma > 0")
        if self.kind == "log_power":
            if not 0.0 < a < 1.0 or self.beta <= 0 or self.gamma <= 0:
                raise ParameterError("log_power needs 0 < alpha < 1, beta > 0, gamma > 0")
            if a + self.beta > 1.0:
                raise ParameterError(
                    f"alpha + beta = {a + self.beta} > 1: t*F(t) decreases near 0 (C3)"
                )
        if self.kind == "constant" and self.c < 0:
            raise ParameterError("constant law needs c >= 0")
        if self.kappa <= 0:
            raise ParameterError("kappa must be positive")

    # -- derived constants ---------------------------------------------
    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def params(self) -> np.ndarray:
        """Packed ``(alpha, mu, gamma, beta, c)`` used by the compiled kernels."""
        return np.array([self.alpha, self.mu, self.gamma, self.beta, self.c])

    @property
    def bounded_at_zero(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "carreau":
            return self.mu > 0 or self.alpha == 0
        if self.kind in ("power_law", "cross"):
            return self.alpha == 0
        return False

    @property
    def growth_exponent(self) -> float:
        """Exponent used in the growth condition (C4)."""
        if self.kind in ("cross", "constant"):
            return 0.0
        return self.alpha

    def growth_constants(self) -> tuple[float, float, float]:
        """Return ``(exponent, K, t0)`` for (C4)."""
        a = self.growth_exponent
        t0 = 1.0 if self.t0 is None else self.t0
        if self.K is not None:
            return a, self.K, t0
        if self.kind in ("power_law", "carreau"):
            K = 1.0
        elif self.kind == "cross":
            K = self.gamma + t0 ** (-self.alpha)
        elif self.kind == "log_power":
            K = math.log1p(self.gamma) ** (-self.beta)
            if self.t0 is None:
                t0 = self.gamma
        elif self.kind == "constant":
            K = self.c
        else:
            K = 1.0
        return a, K, t0

    def F(self, t):
        return eval_F(self, t)


# -- evaluation ------------------------------------------------------------


def F_values(model: ViscosityModel, t: np.ndarray) -> np.ndarray:
    """Vectorised ``F`` without domain checks; ``t == 0`` may give ``inf``."""
    a = model.alpha
    kind = model.kind
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if kind == "power_law":
            return np.power(t, -a) if a != 0 else np.ones_like(t)
        if kind == "carreau":
            return np.power(model.mu + t * t, -0.5 * a)
        if kind == "cross":
            return model.gamma + (np.power(t, -a) if a != 0 else np.ones_like(t))
        if kind == "log_power":
            g = model.gamma
            low = np.power(t, -a) * np.power(np.log1p(t), -model.beta)
            high = math.log1p(g) ** (-model.beta) * np.power(t, -a)
            return np.where(t <= g, low, high)
        if kind == "constant":
            return np.full_like(t, model.c)
        pos = t > 0
        out = np.full_like(t, np.inf)
        out[pos] = model.table(t[pos])
        return out


def _as_array(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def eval_F(model: ViscosityModel, t):
    """Evaluate ``F(t)``.

    Raises
    ------
    DomainError
        If ``t <= 0`` for a law singular at the origin, or ``t < 0``.
    """
    if model.strict:
        model.validate()
    arr, scalar = _as_array(t)
    if np.any(arr < 0) or (np.any(arr == 0) and not model.bounded_at_zero):
        raise DomainError(f"F is singular at t=0 for kind {model.kind!r}")
    out = F_values(model, arr)
    return float(out[0]) if scalar else out


def eval_Gprime(model: ViscosityModel, t, eps: float = 0.0):
    """``G_eps'(t) = t F(sqrt(eps + t**2))``, non-decreasing in ``t``."""
    if eps < 0:
        raise DomainError("eps must be non-negative")
    arr, scalar = _as_array(t)
    if np.any(arr < 0):
        raise DomainError("G_eps' needs t >= 0")
    if eps == 0 and np.any(arr == 0) and not model.bounded_at_zero:
        raise DomainError(f"G' undefined at t=0 with eps=0 for kind {model.kind!r}")
    r = np.sqrt(eps + arr * arr)
    with np.errstate(invalid="ignore"):
        out = np.where(arr == 0, 0.0, arr * F_values(model, np.where(r == 0, 1.0, r)))
    return float(out[0]) if scalar else out


def _power_potential(t: np.ndarray, shift: float, a: float) -> np.ndarray:
    # int_0^t s (shift + s^2)^(-a/2) ds, written to avoid cancellation
    p = 1.0 - 0.5 * a
    if shift == 0:
        return np.power(t, 2 * p) / (2 * p)
    return shift**p * np.expm1(p * np.log1p(t * t / shift)) / (2 * p)


def _closed_form_G(model: ViscosityModel, t: np.ndarray, eps: float) -> np.ndarray | None:
    kind = model.kind
    if kind == "constant":
        return 0.5 * model.c * t * t
    if kind == "power_law":
        return _power_potential(t, eps, model.alpha)
    if kind == "carreau":
        return _power_potential(t, model.mu + eps, model.alpha)
    if kind == "cross":
        return 0.5 * model.gamma * t * t + _power_potential(t, eps, model.alpha)
    return None


def eval_G(
    model: ViscosityModel,
    t,
    eps: float = 0.0,
    rtol: float = QUAD_RTOL,
    atol: float = QUAD_ATOL,
):
    """Potential ``G_eps(t)``; closed form when the kind admits one.

    Other kinds use adaptive Gauss-Kronrod quadrature of ``G_eps'`` and raise
    :class:`QuadratureError` when the error estimate exceeds
    ``max(atol, rtol * |G|)``.
    """
    if eps < 0:
        raise DomainError("eps must be non-negative")
    arr, scalar = _as_array(t)
    if np.any(arr < 0):
        raise DomainError("G_eps needs t >= 0")
    out = _closed_form_G(model, arr, eps)
    if out is None:
        out = _quadrature_G(model, arr, eps, rtol, atol)
    return float(out[0]) if scalar else out


def _quadrature_G(model, t: np.ndarray, eps: float, rtol: float, atol: float) -> np.ndarray:
    out = np.zeros_like(t)
    pos = np.nonzero(t > 0)[0]
    if pos.size == 0:
        return out
    if pos.size <= 16:
        for k in pos:
            v, e = integrate.quad(
                lambda s: s * F_values(model, np.array([math.sqrt(eps + s * s)]))[0],
                0.0,
                t[k],
                epsabs=atol,
                epsrel=rtol,
                limit=200,
            )
            if not e <= max(atol, rtol * abs(v)):
                raise QuadratureError(f"G_eps({t[k]}) error estimate {e:.2e} above tolerance")
            out[k] = v
        return out

    tp = t[pos]

    # G(t) = t^2 int_0^1 y F(sqrt(eps + t^2 y^2)) dy, vectorised over t
    t2 = tp * tp

    def integrand(y):
        return t2 * y * F_values(model, np.sqrt(eps + t2 * y * y))

    res, err = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=atol, epsrel=rtol, norm="max", limit=400)
    if not err <= max(atol, rtol * np.max(np.abs(res))):
        raise QuadratureError(f"vectorised G_eps error estimate {err:.2e} above tolerance")
    out[pos] = res
    return out


def theta_for_power_law(alpha: float) -> float:
    """Scale ``theta`` with ``G(t) = theta t**2 F(theta t)`` for ``F = t**-alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"theta needs alpha in (0, 1], got {alpha}")
    if alpha == 1.0:
        return 1.0
    return (2.0 - alpha) ** (-1.0 / (1.0 - alpha))


# -- hypothesis checks -----------------------------------------------------


@dataclass
class ConditionReport:
    """Outcome of :func:`check_conditions`.

    ``passed`` maps each condition name to a boolean and ``witnesses`` maps
    failing conditions to ``(t, violation)`` pairs.
    """

    passed: dict[str, bool]
    witnesses: dict[str, list[tuple[float, float]]]

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def failures(self) -> list[str]:
        return [name for name, ok in self.passed.items() if not ok]


CONDITIONS = ("C1", "C2", "C3", "C4", "near_zero")


def default_grid(n: int = 512, lo: float = 1e-6, hi: float = 1e3) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def _lipschitz_witnesses(model, t: np.ndarray) -> list[tuple[float, float]]:
    bad = []
    k_lo = math.floor(math.log2(t[0]))
    k_hi = math.ceil(math.log2(t[-1]))
    for k in range(k_lo, k_hi):
        sel = t[(t >= 2.0**k) & (t <= 2.0 ** (k + 1))]
        if sel.size < 2:
            continue
        f = F_values(model, sel)
        coarse = np.abs(np.diff(f) / np.diff(sel))
        fine_t = np.sort(np.concatenate([sel, 0.5 * (sel[1:] + sel[:-1])]))
        ff = F_values(model, fine_t)
        fine = np.abs(np.diff(ff) / np.diff(fine_t))
        if not (np.all(np.isfinite(coarse)) and np.all(np.isfinite(fine))):
            bad.append((float(sel[0]), math.inf))
            continue
        c_max, f_max = coarse.max(), fine.max()
        # a jump doubles the quotient under refinement; a kink does not
        if f_max > 1.5 * c_max + 1e-12:
            j = int(np.argmax(fine))
            bad.append((float(fine_t[j]), float(f_max / max(c_max, 1e-300))))
    return bad


def check_conditions(
    model: ViscosityModel, t_grid: Sequence[float] | None = None, beta: float = 0.25
) -> ConditionReport:
    """Sample (C1)-(C4) and the near-zero bound ``F(t) <= t**-(1+beta)``.

    Failures are reported, never raised.  The near-zero bound is checked
    below ``delta0 = min(1, (sqrt(2) F(sqrt(2)))**(-1/beta))``, the radius on
    which it follows from (C3).
    """
    t = default_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be non-empty, positive and strictly increasing")
    if not 0 < beta < 0.5:
        raise ValueError("beta must lie in (0, 1/2)")
    f = F_values(model, t)
    w: dict[str, list[tuple[float, float]]] = {c: [] for c in CONDITIONS}

    for tk, fk in zip(t, f):
        if not (np.isfinite(fk) and fk > 0):
            w["C1"].append((float(tk), float(fk)))

    w["C2"] = _lipschitz_witnesses(model, t)

    tf = t * f
    drop = tf[:-1] - tf[1:]
    for k in np.nonzero(drop > 1e-12 * np.abs(tf[:-1]))[0]:
        w["C3"].append((float(t[k + 1]), float(drop[k])))

    a, K, t0 = model.growth_constants()
    sel = t >= t0
    excess = f[sel] - K * t[sel] ** (-a)
    for tk, ek in zip(t[sel], excess):
        if ek > 1e-12 * K * tk ** (-a):
            w["C4"].append((float(tk), float(ek)))

    f_sqrt2 = float(F_values(model, np.array([math.sqrt(2.0)]))[0])
    if f_sqrt2 > 0 and np.isfinite(f_sqrt2):
        delta0 = min(1.0, (math.sqrt(2.0) * f_sqrt2) ** (-1.0 / beta))
        sel = t < delta0
        excess = f[sel] - t[sel] ** (-(1.0 + beta))
        for tk, ek in zip(t[sel], excess):
            if ek > 0:
                w["near_zero"].append((float(tk), float(ek)))
    else:
        w["near_zero"].append((math.sqrt(2.0), f_sqrt2))

    passed = {c: not w[c] for c in CONDITIONS}
    return ConditionReport(passed=passed, witnesses={c: v for c, v in w.items() if v})


def check_lower_bound(
    model: ViscosityModel, alpha: float, t_grid: Sequence[float] | None = None
) -> list[tuple[float, float]]:
    """Witnesses where ``F(t) >= kappa t**-alpha`` fails on the grid."""
    t = default_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    f = F_values(model, t)
    lower = model.kappa * t ** (-alpha)
    bad = f < lower * (1 - 1e-12)
    return [(float(tk), float(lk - fk)) for tk, fk, lk in zip(t[bad], f[bad], lower[bad])]


# -- catalog and construction ---------------------------------------------

_CATALOG_DEFAULTS = {
    "power_law": dict(alpha=1.0),
    "carreau": dict(mu=1.0, alpha=1.0),
    "cross": dict(gamma=1.0, alpha=1.0),
    "log_power": dict(alpha=0.5, beta=0.25, gamma=0.5),
    "constant": dict(c=1.0),
}

_FIELDS = ("alpha", "mu", "gamma", "beta", "kappa", "K", "t0", "c")


def catalog() -> dict[str, ViscosityModel]:
    """The closed-form families at their default parameters."""
    return {name: ViscosityModel(kind=name, **kw) for name, kw in _CATALOG_DEFAULTS.items()}


def model_from_params(name: str, params: dict | None = None, strict: bool = True) -> ViscosityModel:
    """Build a catalog model, overriding defaults with ``params``."""
    params = dict(params or {})
    if name == "table":
        path = params.pop("file", None)
        if path is None:
            raise ParameterError("table model needs a 'file' parameter")
        return load_table_model(path, strict=strict, **params)
    if name not in _CATALOG_DEFAULTS:
        raise ParameterError(f"unknown model {name!r}")
    unknown = set(params) - set(_FIELDS)
    if unknown:
        raise ParameterError(f"unknown model parameter(s): {', '.join(sorted(unknown))}")
    kw = dict(_CATALOG_DEFAULTS[name])
    kw.update({k: float(v) for k, v in params.items()})
    return ViscosityModel(kind=name, strict=strict, **kw)


def table_model(t: Sequence[float], F: Sequence[float], strict: bool = True, **params) -> ViscosityModel:
    """Model interpolating ``(t, F)`` monotonically in ``log t``.

    The interpolated quantity is ``log(t F(t))`` so a non-decreasing
    ``t F(t)`` in the data stays non-decreasing between nodes.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(F, dtype=float)
    if t.ndim != 1 or t.size < 2 or t.shape != f.shape:
        raise ParameterError("table needs at least two (t, F) rows")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ParameterError("table t values must be positive and strictly increasing")
    if np.any(f <= 0):
        raise ParameterError("table F values must be positive")
    logt = np.log(t)
    logtf = np.log(t * f)
    tab = _Table(logt, logtf, PchipInterpolator(logt, logtf, extrapolate=False))
    unknown = set(params) - set(_FIELDS)
    if unknown:
        raise ParameterError(f"unknown model parameter(s): {', '.join(sorted(unknown))}")
    kw = {k: float(v) for k, v in params.items()}
    kw.setdefault("alpha", 0.0)
    return ViscosityModel(kind="table", table=tab, strict=strict, **kw)


def load_table_model(path, strict: bool = True, **params) -> ViscosityModel:
    """Read a two-column ``t,F`` CSV (an optional header row is skipped)."""
    rows = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise ParameterError(f"bad table row {row!r} in {path}") from None
    if not rows:
        raise ParameterError(f"no rows in table {path}")
    t, f = zip(*rows)
    return table_model(t, f, strict=strict, **params)
