"""Time stepping for the Galerkin system.

The Stokes part ``-1/2 lambda_i d_i`` is integrated exactly through the
factor ``exp(-lambda_i dt / 2)``; the remaining terms use the classical
fourth-order Runge-Kutta scheme in the integrating-factor (Lawson) form.
Step size is controlled by step doubling.

Alongside the state the stepper integrates four work rates with the same
stage weights: the Stokes dissipation ``int |D u|^2``, the pairing
``<j'_eps(u), u>``, the forcing power ``<f, u>`` and ``||f||^2_{H^-1}``.
Their running integrals make the discrete energy balance checkable to the
local truncation error rather than to a quadrature rule over records.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .basis import BasisSpec, CoefficientVector, l4_norm
from .rhs import ForcingSpec, GalerkinSystem, dissipation_potential
from .viscosity import ViscosityModel

__all__ = [
    "IntegratorError",
    "NonFiniteStateError",
    "StepUnderflowError",
    "IntegratorConfig",
    "TrajectoryRecord",
    "StoppingEvent",
    "SCALAR_COLUMNS",
    "WORK_COLUMNS",
    "step",
    "run",
    "detect_stopping",
]

log = logging.getLogger(__name__)

SCALAR_COLUMNS = ("l2", "h1", "dissipation", "j_eps_value", "jprime_pairing", "forcing_power", "l4")
WORK_COLUMNS = ("energy_rate", "work_dissipation", "work_jprime", "work_forcing", "work_forcing_dual")
COLUMNS = SCALAR_COLUMNS + WORK_COLUMNS


class IntegratorError(RuntimeError):
    """Integration stopped early; ``trajectory`` holds the records so far."""

    def __init__(self, message: str, trajectory: "TrajectoryRecord | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


class NonFiniteStateError(IntegratorError):
    pass


class StepUnderflowError(IntegratorError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-size control, horizon and recording cadence.

    ``record_dt`` adds records on multiples of that spacing (stepping is
    clipped to land on them); ``record_every`` records every k-th step.
    """

    t_end: float = 1.0
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 0.1
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    stop_tol: float = 1e-10
    record_every: int = 1
    record_dt: float | None = None
    max_steps: int = 5_000_000
    record_j: bool = True

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0 (an empty horizon has no trajectory)")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be > 0")
        if self.rel_tol < 0 or self.abs_tol < 0 or self.rel_tol + self.abs_tol == 0:
            raise ValueError("tolerances must be >= 0 and not both zero")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.record_dt is not None and not self.record_dt > 0:
            raise ValueError("record_dt must be > 0")

    def tightened(self, factor: float = 0.5) -> "IntegratorConfig":
        """Copy with both tolerances scaled by ``factor``."""
        from dataclasses import replace

        return replace(self, rel_tol=self.rel_tol * factor, abs_tol=self.abs_tol * factor)


@dataclass(frozen=True)
class StoppingEvent:
    T0: float
    attained_norm: float

    def log_line(self) -> str:
        return f"STOP T0={self.T0!r} norm={self.attained_norm!r}"


class TrajectoryRecord:
    """Recorded times, states and per-record scalars.

    Columns are listed in :data:`COLUMNS`; the ``work_*`` columns are running
    integrals from the first record and ``energy_rate`` is
    ``d/dt (1/2 ||u||^2)`` from the right-hand side.
    """

    def __init__(self, basis: BasisSpec, meta: dict | None = None):
        self.basis = basis
        self.meta = dict(meta or {})
        self._t: list[float] = []
        self._d: list[np.ndarray] = []
        self._rows: list[tuple[float, ...]] = []
        self.event: StoppingEvent | None = None

    def append(self, t: float, d: np.ndarray, row: tuple[float, ...]) -> None:
        if self._t and not t > self._t[-1]:
            raise ValueError(f"record time {t} not after {self._t[-1]}")
        self._t.append(float(t))
        self._d.append(np.array(d, dtype=float))
        self._rows.append(tuple(float(v) for v in row))

    def __len__(self) -> int:
        return len(self._t)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._t)

    @property
    def states(self) -> np.ndarray:
        return np.asarray(self._d).reshape(len(self._d), self.basis.M)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            k = COLUMNS.index(name)
        except ValueError:
            raise KeyError(name) from None
        return np.array([r[k] for r in self._rows])

    def rows(self) -> Iterator[tuple[float, ...]]:
        for t, r in zip(self._t, self._rows):
            yield (t,) + r

    def state(self, k: int) -> CoefficientVector:
        return CoefficientVector(self.basis, self._d[k].copy(), self._t[k])


class _Stepper:
    """Lawson RK4 with the work rates carried as extra quadrature variables."""

    def __init__(self, system: GalerkinSystem):
        self.sys = system
        self.decay = system.decay
        self.lam = system.basis.lam
        self.forced = bool(system._entries)
        self.T1 = system.forcing.T1
        self.evaluations = 0

    def forcing(self, t: float) -> np.ndarray:
        """Forcing with the envelope evaluated at ``t`` regardless of cutoff."""
        out = np.zeros(self.sys.basis.M)
        for i, env in self.sys._entries:
            out[i] += env(t) if callable(env) else float(env)
        return out

    def stage(self, t: float, d: np.ndarray, forcing_on: bool) -> tuple[np.ndarray, np.ndarray]:
        self.evaluations += 1
        k, jp = self.sys.nonlinear(d)
        diss = float(self.decay @ (d * d))
        fp = fd = 0.0
        if forcing_on:
            f = self.forcing(t)
            k = k + f
            fp = float(f @ d)
            fd = float(f @ (f / self.lam))
        return k, np.array([diss, jp, fp, fd])

    def lawson(self, t, d, h, forcing_on, first=None):
        E = np.exp(-0.5 * h * self.decay)
        E2 = E * E
        k1, q1 = first if first is not None else self.stage(t, d, forcing_on)
        k2, q2 = self.stage(t + 0.5 * h, E * (d + 0.5 * h * k1), forcing_on)
        k3, q3 = self.stage(t + 0.5 * h, E * d + 0.5 * h * k2, forcing_on)
        k4, q4 = self.stage(t + h, E2 * d + h * E * k3, forcing_on)
        dn = E2 * d + (h / 6.0) * (E2 * k1 + 2.0 * E * (k2 + k3) + k4)
        return dn, (h / 6.0) * (q1 + 2.0 * (q2 + q3) + q4)


def _system(basis, model, eps, spec, convection=True):
    return GalerkinSystem(basis, model, eps, spec or ForcingSpec(), convection=convection)


def step(
    state: CoefficientVector,
    dt: float,
    model: ViscosityModel,
    eps: float,
    spec: ForcingSpec | None = None,
) -> CoefficientVector:
    """One Lawson RK4 step of size ``dt`` from ``state``.

    A step starting before the forcing cutoff uses the forcing envelope on
    the whole step, so a step ending exactly at the cutoff sees no jump.

    Raises
    ------
    NonFiniteStateError
        If any coefficient becomes NaN or infinite.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    st = _Stepper(_system(state.basis, model, eps, spec))
    on = st.forced and state.t < st.T1
    dn, _ = st.lawson(state.t, state.d, dt, on)
    if not np.all(np.isfinite(dn)):
        raise NonFiniteStateError(f"non-finite state after step at t={state.t}")
    return CoefficientVector(state.basis, dn, state.t + dt)


def _targets(t0: float, cfg: IntegratorConfig, T1: float) -> list[float]:
    out = {cfg.t_end}
    if t0 < T1 < cfg.t_end:
        out.add(T1)
    if cfg.record_dt:
        k0 = math.floor(t0 / cfg.record_dt) + 1
        k1 = math.floor(cfg.t_end / cfg.record_dt)
        if k1 - k0 > 10_000_000:
            raise ValueError("record_dt too small for the horizon")
        out.update(k * cfg.record_dt for k in range(k0, k1 + 1) if t0 < k * cfg.record_dt < cfg.t_end)
    return sorted(out)


def run(
    u0: CoefficientVector,
    cfg: IntegratorConfig,
    model: ViscosityModel,
    eps: float,
    spec: ForcingSpec | None = None,
    *,
    convection: bool = True,
    sink: Callable[[float, np.ndarray, tuple], None] | None = None,
) -> tuple[TrajectoryRecord, StoppingEvent | None]:
    """Integrate from ``u0`` (at time ``u0.t``) to ``cfg.t_end``.

    Records the initial state, every ``record_every`` accepted steps, the
    cutoff ``T1``, multiples of ``record_dt`` and ``t_end``.  Halts at the
    first accepted step with ``||u|| <= stop_tol`` and returns the event.
    ``sink`` is called with each record as it is made.

    Raises
    ------
    StepUnderflowError
        If the error test fails at ``dt_min``.
    NonFiniteStateError
        If the state stops being finite.
    """
    basis = u0.basis
    sys = _system(basis, model, eps, spec, convection)
    st = _Stepper(sys)
    traj = TrajectoryRecord(
        basis,
        meta=dict(model=model, eps=float(eps), T1=sys.forcing.T1, convection=convection),
    )
    work = np.zeros(4)
    t = float(u0.t)
    d = np.array(u0.d, dtype=float)
    if t >= cfg.t_end:
        raise ValueError(f"start time {t} is not before t_end={cfg.t_end}")

    def record(t, d):
        row = _record_row(sys, st, t, d, work, cfg.record_j)
        traj.append(t, d, row)
        if sink is not None:
            sink(t, d, row)
        return row[0]

    l2 = record(t, d)
    if l2 <= cfg.stop_tol:
        traj.event = StoppingEvent(t, l2)
        return traj, traj.event

    targets = _targets(t, cfg, sys.forcing.T1)
    ti = 0
    dt = cfg.dt_init
    steps = 0
    while True:
        while targets[ti] <= t:
            ti += 1
        target = targets[ti]
        h = min(dt, target - t)
        lands = t + h >= target * (1 - 1e-14) or target - (t + h) < 1e-3 * h
        if lands:
            h = target - t
        on = st.forced and t < st.T1
        first = st.stage(t, d, on)
        big, _ = st.lawson(t, d, h, on, first)
        mid, w1 = st.lawson(t, d, 0.5 * h, on, first)
        new, w2 = st.lawson(t + 0.5 * h, mid, 0.5 * h, on)
        if not (np.all(np.isfinite(new)) and np.all(np.isfinite(big))):
            if h > cfg.dt_min:
                dt = max(cfg.dt_min, 0.25 * h)
                continue
            raise NonFiniteStateError(f"non-finite state at t={t}", traj)
        err = float(np.sqrt(np.sum((new - big) ** 2)))
        tol = max(cfg.abs_tol, cfg.rel_tol * float(np.sqrt(new @ new)))
        if err > tol:
            if h <= cfg.dt_min * (1 + 1e-12):
                raise StepUnderflowError(
                    f"error {err:.3e} above tolerance {tol:.3e} at dt_min={cfg.dt_min:g}, t={t}", traj
                )
            dt = max(cfg.dt_min, h * max(0.2, 0.9 * (tol / err) ** 0.2))
            continue
        steps += 1
        if steps > cfg.max_steps:
            raise IntegratorError(f"exceeded max_steps={cfg.max_steps} at t={t}", traj)
        grow = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * (tol / err) ** 0.2))
        # a step shortened to land on a target should not shrink the next one
        dt = min(cfg.dt_max, max(cfg.dt_min, max(dt, h * grow) if lands else h * grow))
        t = target if lands else t + h
        d = new
        work += w1 + w2
        l2 = float(np.sqrt(d @ d))
        stop = l2 <= cfg.stop_tol
        if lands or stop or steps % cfg.record_every == 0:
            record(t, d)
        if stop:
            traj.event = StoppingEvent(t, l2)
            log.info("extinction at t=%.6g after %d steps", t, steps)
            break
        if lands and target >= cfg.t_end:
            break
    traj.meta.update(steps=steps, evaluations=st.evaluations)
    return traj, traj.event


def _record_row(sys: GalerkinSystem, st: _Stepper, t: float, d: np.ndarray, work, with_j: bool):
    b = sys.basis
    visc, jp = sys.nonlinear(d, convection=False)
    total, _ = sys.nonlinear(d)
    f = sys.forcing_vector(t)
    h1sq = float(b.lam @ (d * d))
    diss = 0.5 * h1sq
    fp = float(f @ d)
    rate = float(d @ (total - sys.decay * d + f))
    jv = dissipation_potential(b, d, sys.model, sys.eps) if with_j else math.nan
    l4 = l4_norm(b, d)
    return (
        float(np.sqrt(d @ d)), math.sqrt(h1sq), diss, jv, jp, fp, l4,
        rate, work[0], work[1], work[2], work[3],
    )


def detect_stopping(
    traj: TrajectoryRecord, stop_tol: float, alpha: float | None = None
) -> StoppingEvent | None:
    """First recorded time with ``||u|| <= stop_tol``.

    With ``alpha`` the crossing is refined by linear interpolation of
    ``||u||**alpha`` between the bracketing records.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    t = traj.times
    l2 = traj["l2"]
    return detect_stopping_series(t, l2, stop_tol, alpha)


def detect_stopping_series(t, l2, stop_tol: float, alpha: float | None = None) -> StoppingEvent | None:
    t = np.asarray(t, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    hit = np.nonzero(l2 <= stop_tol)[0]
    if hit.size == 0:
        return None
    k = int(hit[0])
    if alpha is None or k == 0:
        return StoppingEvent(float(t[k]), float(l2[k]))
    ya, yb, yt = l2[k - 1] ** alpha, l2[k] ** alpha, stop_tol**alpha
    if ya == yb:
        return StoppingEvent(float(t[k]), float(l2[k]))
    s = (ya - yt) / (ya - yb)
    return StoppingEvent(float(t[k - 1] + s * (t[k] - t[k - 1])), float(stop_tol))
