"""Checks run on computed trajectories.

Energy inequality and balance, dual-norm bounds on the viscous term, the
Gagliardo-Nirenberg pairing, the regularization gap, the energy equality
with its scaling factor ``eta``, decay fits for ``||u||**alpha`` and the
stopping-time bound, and refinement studies over ``(eps, m)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .basis import BasisSpec, CoefficientVector, build_basis, l4_norm
from .integrator import IntegratorConfig, StoppingEvent, TrajectoryRecord, detect_stopping, run
from .rhs import ForcingSpec, GalerkinSystem, dissipation_potential, jprime_dual_norm
from .viscosity import ViscosityModel, eval_Gprime

__all__ = [
    "NoRootError",
    "WindowTooShortError",
    "EnergyReport",
    "EtaSeries",
    "DecayFit",
    "StoppingReport",
    "JprimeBound",
    "ConvergenceTable",
    "energy_inequality_check",
    "jprime_bound_check",
    "jprime_uniform",
    "gn_ratio",
    "j_gap",
    "eta_functional",
    "energy_equality_eta",
    "alpha_decay_fit",
    "late_window",
    "stopping_bound",
    "extrapolate_T0",
    "convergence_study",
    "sweep_threads",
    "power_triangle",
    "continuity_check",
]


class NoRootError(ValueError):
    """The ``eta`` bracket shows no sign change."""

    def __init__(self, message: str, residuals: tuple[float, float]):
        super().__init__(message)
        self.residuals = residuals


class WindowTooShortError(ValueError):
    pass


# -- energy -----------------------------------------------------------------


@dataclass
class EnergyReport:
    worst_inequality_margin: float
    balance_residual_max: float
    margins: np.ndarray
    balance_residuals: np.ndarray
    balance_rate_max: float = 0.0
    eta_series: "EtaSeries | None" = None


def energy_inequality_check(traj: TrajectoryRecord, u0_norm: float | None = None) -> EnergyReport:
    """Evaluate the a-priori energy inequality at every record.

    ``margin(t) = 2 int_0^t ||f||^2_{H^-1} + ||u0||^2 - ||u(t)||^2 - 1/2 int_0^t ||u||^2_{H^1}``

    and the per-interval balance residual

    ``1/2 delta ||u||^2 + delta int (|D u|^2 + <j'_eps(u), u> - <f, u>)``.

    Time integrals come from the work rates carried by the integrator.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    l2 = traj["l2"]
    u0 = l2[0] if u0_norm is None else float(u0_norm)
    wd, wj, wf, wfd = (traj[c] for c in ("work_dissipation", "work_jprime", "work_forcing", "work_forcing_dual"))
    margins = 2.0 * wfd + u0 * u0 - l2 * l2 - wd
    e = 0.5 * l2 * l2
    res = np.diff(e) + np.diff(wd) + np.diff(wj) - np.diff(wf)
    dt = np.diff(traj.times)
    return EnergyReport(
        worst_inequality_margin=float(margins.min()),
        balance_residual_max=float(np.abs(res).max()) if res.size else 0.0,
        margins=margins,
        balance_residuals=res,
        balance_rate_max=float(np.max(np.abs(res) / dt)) if res.size else 0.0,
    )


@dataclass(frozen=True)
class JprimeBound:
    lhs: float
    series: np.ndarray
    uniform_over: list
    data_scale: float


def jprime_bound_check(
    traj: TrajectoryRecord,
    model: ViscosityModel,
    eps: float,
    alpha: float | None = None,
) -> JprimeBound:
    """``L^{4/N}``-in-time norm of ``||j'_eps(u)||_{H^-1}`` over the records.

    ``data_scale`` is ``(1 + ||f|| + ||u0||)**(1 - alpha)`` with
    ``||f||`` the ``L^2(H^-1)`` norm, the growth the estimate allows.
    """
    b = traj.basis
    sys = GalerkinSystem(b, model, eps, convection=False)
    series = np.array([jprime_dual_norm(sys.viscous(d)[0], b) for d in traj.states])
    p = 4.0 / b.N
    t = traj.times
    lhs = float(np.trapezoid(series**p, t) ** (1.0 / p)) if len(t) > 1 else 0.0
    a = model.alpha if alpha is None else alpha
    fnorm = math.sqrt(max(float(traj["work_forcing_dual"][-1]), 0.0))
    scale = (1.0 + fnorm + float(traj["l2"][0])) ** (1.0 - a)
    return JprimeBound(lhs, series, [(float(eps), b.m_max, lhs)], scale)


def jprime_uniform(values: Sequence[float], ratio: float = 1.1) -> bool:
    """Successive members of a refinement family stay within ``ratio``."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return True
    lo, hi = np.minimum(v[:-1], v[1:]), np.maximum(v[:-1], v[1:])
    return bool(np.all((hi <= ratio * lo) | (hi == 0)))


def gn_ratio(coeffs: CoefficientVector, N: int | None = None) -> float:
    """``||u||_4^2 / (||u||_{H^1}^{N/2} ||u||_2^{(4-N)/2})``.

    Raises
    ------
    ZeroDivisionError
        For the zero state.
    """
    b = coeffs.basis
    N = b.N if N is None else N
    d = coeffs.d
    l2 = math.sqrt(float(d @ d))
    h1 = math.sqrt(float(b.lam @ (d * d)))
    if l2 == 0.0:
        raise ZeroDivisionError("ratio undefined for the zero state")
    return l4_norm(b, d) ** 2 / (h1 ** (N / 2) * l2 ** ((4 - N) / 2))


def j_gap(model: ViscosityModel, coeffs: CoefficientVector, eps: float) -> float:
    """``j(u) - j_eps(u)`` by grid quadrature."""
    if eps == 0:
        return 0.0
    j0 = dissipation_potential(coeffs.basis, coeffs.d, model, 0.0)
    if not math.isfinite(j0):
        raise ValueError("j(u) is not computable for this state")
    return j0 - dissipation_potential(coeffs.basis, coeffs.d, model, eps)


# -- energy equality --------------------------------------------------------


def _strain(basis: BasisSpec, d: np.ndarray) -> np.ndarray:
    S = basis.fields(d, ["sym_gradient"])
    return np.sqrt(basis.frobenius_sq(S)).ravel()


def eta_functional(model: ViscosityModel, strain: np.ndarray, eta: float, cell: float) -> float:
    """``(1/eta) <j'(eta u), eta u> = int |D u| G'(eta |D u|)`` from grid strain.

    Non-decreasing in ``eta``; equals ``j(u)`` at ``eta = theta`` and
    ``<j'(u), u>`` at ``eta = 1`` for laws with ``G(t) = theta t^2 F(theta t)``.
    """
    s = strain[strain > 0]
    if s.size == 0:
        return 0.0
    return float(np.sum(s * eval_Gprime(model, eta * s, 0.0)) * cell)


@dataclass
class EtaSeries:
    times: np.ndarray
    eta: np.ndarray
    residual: np.ndarray
    relative_residual: np.ndarray
    found: np.ndarray
    theta: float

    def fraction_found(self, tol: float) -> float:
        """Share of records with a root in ``[theta, 1]`` and relative residual ``<= tol``."""
        ok = self.found & (self.relative_residual <= tol)
        return float(np.mean(ok)) if ok.size else 1.0


def energy_equality_eta(
    traj: TrajectoryRecord,
    model: ViscosityModel,
    theta: float,
    strict: bool = False,
) -> EtaSeries:
    """Solve ``1/2 (||u||^2)' + int |D u|^2 + Q(eta) = <f, u>`` for ``eta`` per record.

    ``Q(eta) = (1/eta) <j'(eta u), eta u>`` uses the unregularized law, and
    ``(||u||^2)'`` is the right-hand side's energy rate.  The root is sought
    in ``[theta, 1]``; when ``theta == 1`` the bracket collapses and
    ``eta = 1``.  Zero states give ``eta = 1`` by convention.  A record
    without a sign change is marked not found and keeps the endpoint with
    the smaller residual, or raises :class:`NoRootError` when ``strict``.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    b = traj.basis
    cell = b.cell_volume
    target = traj["forcing_power"] - traj["dissipation"] - traj["energy_rate"]
    scale = traj["dissipation"] + np.abs(traj["jprime_pairing"]) + np.abs(traj["forcing_power"])
    n = len(traj)
    eta = np.ones(n)
    res = np.zeros(n)
    found = np.ones(n, dtype=bool)
    for k, d in enumerate(traj.states):
        s = _strain(b, d)
        if not np.any(s > 0):
            continue
        r = lambda e: eta_functional(model, s, e, cell) - target[k]
        r_hi = r(1.0)
        if theta >= 1.0:
            res[k] = r_hi
            continue
        r_lo = r(theta)
        if r_lo == 0.0 or r_hi == 0.0:
            eta[k] = theta if r_lo == 0.0 else 1.0
            continue
        if np.sign(r_lo) == np.sign(r_hi):
            if strict:
                raise NoRootError(f"no sign change in [theta, 1] at t={traj.times[k]}", (r_lo, r_hi))
            found[k] = False
            eta[k], res[k] = (theta, r_lo) if abs(r_lo) < abs(r_hi) else (1.0, r_hi)
            continue
        eta[k] = brentq(r, theta, 1.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        res[k] = r(eta[k])
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(res) / scale, 0.0)
    return EtaSeries(traj.times, eta, res, rel, found, theta)


# -- decay and stopping -----------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r2: float
    n: int
    window: tuple[float, float]


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def alpha_decay_fit(
    traj_or_series,
    alpha: float,
    window: tuple[float, float],
    floor: float = 0.0,
) -> DecayFit:
    """Least-squares line through ``||u(t)||**alpha`` for ``t`` in ``window``.

    Accepts a trajectory or a ``(times, l2)`` pair.  Records with
    ``||u|| <= floor`` are left out.

    Raises
    ------
    WindowTooShortError
        With fewer than 10 records in the window.
    """
    t, l2 = _series(traj_or_series)
    lo, hi = window
    sel = (t >= lo) & (t <= hi) & (l2 > floor)
    if sel.sum() < 10:
        raise WindowTooShortError(f"only {int(sel.sum())} records in window {window}")
    slope, intercept, r2 = _linear_fit(t[sel], l2[sel] ** alpha)
    return DecayFit(slope, intercept, r2, int(sel.sum()), (float(lo), float(hi)))


def _series(obj) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(obj, TrajectoryRecord):
        return obj.times, obj["l2"]
    t, l2 = obj
    return np.asarray(t, dtype=float), np.asarray(l2, dtype=float)


def late_window(
    traj_or_series, alpha: float, T1: float = 0.0, lo: float = 0.01, hi: float = 0.5
) -> tuple[float, float]:
    """Time span after ``T1`` where ``||u||**alpha`` lies in ``[lo, hi]`` times its value at ``T1``."""
    t, l2 = _series(traj_or_series)
    k1 = int(np.searchsorted(t, T1 - 1e-12 * max(1.0, T1)))
    ref = l2[k1] ** alpha
    y = l2 ** alpha
    sel = (t >= t[k1]) & (y >= lo * ref) & (y <= hi * ref)
    if not np.any(sel):
        raise WindowTooShortError("no records in the late window")
    ts = t[sel]
    return float(ts[0]), float(ts[-1])


@dataclass
class StoppingReport:
    alpha: float
    fit_slope: float
    fit_r2: float
    T0_bound: float
    T0_measured: float | None = None
    T1: float = 0.0
    l2_T1: float = math.nan
    eps_extrapolation: list[tuple[float, float]] = field(default_factory=list)
    T0_extrapolated: float | None = None

    @property
    def bound_ok(self) -> bool | None:
        if self.T0_measured is None:
            return None
        return self.T0_measured <= self.T0_bound * 1.05

    def summary(self) -> str:
        lines = [
            f"alpha          {self.alpha!r}",
            f"fit slope      {self.fit_slope!r}",
            f"fit R2         {self.fit_r2!r}",
            f"T1             {self.T1!r}",
            f"||u(T1)||      {self.l2_T1!r}",
            f"T0 bound       {self.T0_bound!r}",
            f"T0 measured    {self.T0_measured!r}",
            f"bound holds    {self.bound_ok}",
        ]
        if self.eps_extrapolation:
            lines.append("eps            T0")
            lines += [f"{e!r}  {t!r}" for e, t in self.eps_extrapolation]
            lines.append(f"T0 (eps -> 0)  {self.T0_extrapolated!r}")
        return "\n".join(lines)


def stopping_bound(
    traj_or_series,
    T1: float,
    alpha: float,
    fit: DecayFit,
    event: StoppingEvent | None = None,
) -> StoppingReport:
    """``T0_bound = T1 + ||u(T1)||**alpha / |slope|`` and the measured time.

    The measured time is ``event.T0``, else the trajectory's own event.
    """
    if not fit.slope < 0:
        raise ValueError("decay fit slope must be negative")
    t, l2 = _series(traj_or_series)
    k1 = int(np.searchsorted(t, T1 - 1e-12 * max(1.0, T1)))
    l2_T1 = float(l2[min(k1, len(l2) - 1)])
    bound = T1 + l2_T1**alpha / abs(fit.slope)
    if event is None and isinstance(traj_or_series, TrajectoryRecord):
        event = traj_or_series.event
    return StoppingReport(
        alpha=alpha,
        fit_slope=fit.slope,
        fit_r2=fit.r2,
        T0_bound=bound,
        T0_measured=None if event is None else event.T0,
        T1=T1,
        l2_T1=l2_T1,
    )


@dataclass(frozen=True)
class Extrapolation:
    table: list[tuple[float, float]]
    T0_limit: float
    monotone: bool


def extrapolate_T0(pairs: Sequence[tuple[float, float]]) -> Extrapolation:
    """Linear fit of ``T0`` against ``eps`` evaluated at ``eps = 0``.

    ``monotone`` states that ``T0`` moves in one direction as ``eps`` shrinks.
    """
    if len(pairs) < 3:
        raise ValueError("need at least three (eps, T0) pairs")
    table = sorted(((float(e), float(t)) for e, t in pairs), reverse=True)
    e = np.array([p[0] for p in table])
    T = np.array([p[1] for p in table])
    slope, intercept, _ = _linear_fit(e, T)
    steps = np.diff(T)
    monotone = bool(np.all(steps <= 0) or np.all(steps >= 0))
    return Extrapolation(table, float(intercept), monotone)


# -- refinement study -------------------------------------------------------


@dataclass
class ConvergenceTable:
    eps_list: list[float]
    m_list: list[int]
    eps_diffs: np.ndarray  # (len(m_list), len(eps_list) - 1)
    m_diffs: np.ndarray  # (len(eps_list), len(m_list) - 1)
    zero_tol: float = 1e-12

    def _decreasing(self, rows: np.ndarray) -> bool:
        for r in rows:
            for a, b in zip(r[:-1], r[1:]):
                if not (b < a or (a <= self.zero_tol and b <= self.zero_tol)):
                    return False
        return True

    @property
    def eps_monotone(self) -> bool:
        return self._decreasing(self.eps_diffs)

    @property
    def m_monotone(self) -> bool:
        return self._decreasing(self.m_diffs)

    @property
    def monotone(self) -> bool:
        return self.eps_monotone and self.m_monotone

    def rows(self) -> list[tuple[str, float, float, float, float]]:
        out = []
        for i, m in enumerate(self.m_list):
            for k in range(len(self.eps_list) - 1):
                out.append(("eps", float(m), self.eps_list[k], self.eps_list[k + 1], float(self.eps_diffs[i, k])))
        for j, e in enumerate(self.eps_list):
            for k in range(len(self.m_list) - 1):
                out.append(("m", e, float(self.m_list[k]), float(self.m_list[k + 1]), float(self.m_diffs[j, k])))
        return out


def sweep_threads() -> int:
    """Worker count for sweeps: ``VISCO_THREADS`` if set, else the CPU count."""
    default = os.cpu_count() or 1
    try:
        n = int(os.environ.get("VISCO_THREADS", default))
    except ValueError:
        n = default
    return max(1, n)


def _sampled(traj: TrajectoryRecord, times: np.ndarray) -> np.ndarray:
    """States at ``times``; zero after extinction."""
    index = {float(t): k for k, t in enumerate(traj.times)}
    states = traj.states
    out = np.zeros((len(times), traj.basis.M))
    for i, t in enumerate(times):
        k = index.get(float(t))
        if k is not None:
            out[i] = states[k]
        elif traj.event is None or t < traj.event.T0:
            raise ValueError(f"run has no record at t={t}; use record_dt shared by all runs")
    return out


def _restrict(fine: BasisSpec, coarse: BasisSpec) -> np.ndarray:
    return np.array([fine.index(m.xi, m.phase, m.branch) for m in coarse.modes])


def _l2l2(times: np.ndarray, diff: np.ndarray) -> float:
    return float(math.sqrt(max(np.trapezoid(np.sum(diff * diff, axis=1), times), 0.0)))


def convergence_study(
    model: ViscosityModel,
    u0_factory: Callable[[BasisSpec], CoefficientVector],
    cfg: IntegratorConfig,
    eps_list: Sequence[float],
    m_list: Sequence[int],
    forcing: ForcingSpec | None = None,
    N: int = 2,
    grid_size: Callable[[int], int] | None = None,
    threads: int | None = None,
    convection: bool = True,
) -> ConvergenceTable:
    """Run the ``(eps, m)`` matrix from shared data and compare neighbours.

    Differences are ``L^2((0,T); L^2)`` norms over the ``record_dt`` grid;
    along the ``m`` axis the finer state is restricted to the coarser modes.
    Runs execute on up to ``VISCO_THREADS`` worker threads.
    """
    eps_list = [float(e) for e in eps_list]
    m_list = [int(m) for m in m_list]
    if len(eps_list) < 3 or len(m_list) < 3:
        raise ValueError("eps_list and m_list need at least three entries")
    if cfg.record_dt is None:
        raise ValueError("convergence_study needs cfg.record_dt for shared sample times")
    bases = {m: build_basis(N, m, None if grid_size is None else grid_size(m)) for m in m_list}

    def one(job):
        e, m = job
        cfg_run = IntegratorConfig(**{**cfg.__dict__, "record_every": 10**9, "record_j": False})
        traj, _ = run(u0_factory(bases[m]), cfg_run, model, e, forcing, convection=convection)
        return job, traj

    jobs = [(e, m) for e in eps_list for m in m_list]
    workers = min(threads or sweep_threads(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(one, jobs))
    else:
        results = dict(map(one, jobs))

    # every run lands on the same record_dt grid; extinct runs stop early
    longest = max(results.values(), key=lambda tr: tr.times[-1])
    times = longest.times
    if longest.event is not None:
        times = times[:-1]
    sampled = {job: _sampled(traj, times) for job, traj in results.items()}

    eps_d = np.zeros((len(m_list), len(eps_list) - 1))
    for i, m in enumerate(m_list):
        for k in range(len(eps_list) - 1):
            eps_d[i, k] = _l2l2(times, sampled[(eps_list[k], m)] - sampled[(eps_list[k + 1], m)])
    m_d = np.zeros((len(eps_list), len(m_list) - 1))
    for j, e in enumerate(eps_list):
        for k in range(len(m_list) - 1):
            mc, mf = m_list[k], m_list[k + 1]
            idx = _restrict(bases[mf], bases[mc])
            m_d[j, k] = _l2l2(times, sampled[(e, mf)][:, idx] - sampled[(e, mc)])
    return ConvergenceTable(eps_list, m_list, eps_d, m_d)


# -- scalar helpers -----------------------------------------------------------


def power_triangle(u_norm: float, v_norm: float, sum_norm: float, gamma: float) -> tuple[float, float]:
    """Both sides of ``||u + v||**g <= 2**(g - 1/2) (||u||**g + ||v||**g)`` for ``g >= 1/2``."""
    if gamma < 0.5:
        raise ValueError("gamma must be >= 1/2")
    return sum_norm**gamma, 2.0 ** (gamma - 0.5) * (u_norm**gamma + v_norm**gamma)


def continuity_check(traj: TrajectoryRecord, safety: float = 1.1) -> tuple[bool, float, float]:
    """``|delta ||u||^2| <= L delta t`` between consecutive records.

    ``L = 2 max(|D u|^2 + <j'_eps(u), u> + |<f, u>|)`` over the records,
    scaled by ``safety``.  Returns ``(holds, L, worst ratio)``.
    """
    l2sq = traj["l2"] ** 2
    dt = np.diff(traj.times)
    rate = traj["dissipation"] + np.abs(traj["jprime_pairing"]) + np.abs(traj["forcing_power"])
    L = safety * 2.0 * float(rate.max()) if rate.size else 0.0
    if dt.size == 0:
        return True, L, 0.0
    obs = np.abs(np.diff(l2sq)) / dt
    worst = float(obs.max() / L) if L > 0 else (0.0 if obs.max() == 0 else math.inf)
    return bool(worst <= 1.0), L, worst
