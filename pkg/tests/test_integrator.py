import math

import numpy as np
import pytest

from viscogalerkin.basis import CoefficientVector, build_basis, norms, project_function, taylor_green
from viscogalerkin.integrator import (
    COLUMNS,
    IntegratorConfig,
    IntegratorError,
    NonFiniteStateError,
    StepUnderflowError,
    StoppingEvent,
    TrajectoryRecord,
    detect_stopping,
    detect_stopping_series,
    run,
    step,
)
from viscogalerkin.rhs import ForcingSpec
from viscogalerkin.viscosity import ViscosityModel

STOKES = ViscosityModel("constant", c=0.0, strict=False)
POWER = ViscosityModel("power_law", alpha=1.0)
CARREAU = ViscosityModel("carreau", mu=1.0, alpha=1.0)


def single(basis, xi=(1, 0), amp=1.0):
    return CoefficientVector.unit(basis, basis.index(xi, "cos"), amp)


def two_mode(basis):
    d = np.zeros(basis.M)
    d[basis.index((1, 0), "cos")] = d[basis.index((1, 1), "sin")] = math.sqrt(0.5)
    return CoefficientVector(basis, d)


def at(traj, t):
    return int(np.argmin(np.abs(traj.times - t)))


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(t_end=0.0),
            dict(dt_min=1e-2, dt_init=1e-3),
            dict(dt_init=1.0, dt_max=0.1),
            dict(stop_tol=0.0),
            dict(rel_tol=0.0, abs_tol=0.0),
            dict(record_every=0),
            dict(record_dt=-1.0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            IntegratorConfig(**kw)

    def test_tightened(self):
        cfg = IntegratorConfig().tightened()
        assert cfg.rel_tol == 0.5e-8 and cfg.abs_tol == 0.5e-12


class TestStep:
    def test_stokes_exact(self, basis2):
        out = step(single(basis2), 0.1, STOKES, 0.0)
        i = basis2.index((1, 0), "cos")
        assert out.d[i] == pytest.approx(math.exp(-0.05), rel=1e-15)
        assert out.t == pytest.approx(0.1)

    def test_zero_state(self, basis2):
        out = step(CoefficientVector.zeros(basis2), 0.1, CARREAU, 0.0)
        assert not np.any(out.d)

    def test_constant_law_fifth_order(self, basis2):
        c = 2.0
        model = ViscosityModel("constant", c=c)
        i = basis2.index((1, 0), "cos")
        errs = []
        for dt in (0.2, 0.1, 0.05):
            out = step(single(basis2), dt, model, 0.0)
            errs.append(abs(out.d[i] - math.exp(-(1 + c) * dt / 2)))
        # local error O(dt^5): halving dt divides the error by about 32
        assert 20 < errs[0] / errs[1] < 40
        assert 20 < errs[1] / errs[2] < 40

    def test_rejects_bad_dt(self, basis2):
        with pytest.raises(ValueError):
            step(single(basis2), 0.0, STOKES, 0.0)

    def test_non_finite(self, basis2):
        bad = single(basis2, amp=np.inf)
        with pytest.raises(NonFiniteStateError):
            step(bad, 0.1, STOKES, 0.0)


class TestRun:
    def test_stokes_decay(self, basis2):
        traj, ev = run(single(basis2), IntegratorConfig(t_end=1.0), STOKES, 0.0)
        assert ev is None
        assert traj["l2"][-1] / traj["l2"][0] == pytest.approx(math.exp(-0.5), rel=1e-8)
        assert traj.times[-1] == 1.0

    def test_zero_initial_state(self, basis2):
        traj, ev = run(CoefficientVector.zeros(basis2), IntegratorConfig(), POWER, 1e-8)
        assert ev == StoppingEvent(0.0, 0.0)
        assert len(traj) == 1

    def test_extinction(self, basis2):
        cfg = IntegratorConfig(t_end=10.0)
        traj, ev = run(two_mode(basis2), cfg, POWER, 1e-8)
        assert ev is not None and ev.T0 < 10.0
        assert ev.attained_norm <= cfg.stop_tol
        assert traj.event is ev

    def test_monotone_energy_without_forcing(self, basis2):
        u0 = project_function(taylor_green, basis2)
        traj, _ = run(u0, IntegratorConfig(t_end=0.5), CARREAU, 1e-4)
        assert np.all(np.diff(traj["l2"]) <= 1e-10)

    def test_records(self, basis2):
        cfg = IntegratorConfig(t_end=1.0, record_dt=0.25, record_every=10**9)
        spec = ForcingSpec({0: 1.0}, T1=0.6)
        traj, _ = run(single(basis2), cfg, CARREAU, 1e-3, spec)
        assert traj.times.tolist() == [0.0, 0.25, 0.5, 0.6, 0.75, 1.0]
        assert np.all(np.diff(traj.times) > 0)
        assert traj.meta["T1"] == 0.6 and traj.meta["steps"] > 0

    def test_scalars_consistent_with_states(self, basis2):
        traj, _ = run(two_mode(basis2), IntegratorConfig(t_end=0.1), CARREAU, 1e-3)
        for k in range(len(traj)):
            n = norms(traj.state(k))
            assert traj["l2"][k] == pytest.approx(n.l2, rel=1e-12)
            assert traj["h1"][k] == pytest.approx(n.h1, rel=1e-12)
            assert traj["dissipation"][k] == pytest.approx(n.dissipation, rel=1e-12)
            assert traj["l4"][k] == pytest.approx(n.l4, rel=1e-12)

    def test_balance_per_interval(self, basis2):
        u0 = project_function(taylor_green, basis2)
        spec = ForcingSpec({((1, 0), "cos"): 1.0}, T1=0.3)
        cfg = IntegratorConfig(t_end=0.6, record_dt=0.05)
        traj, _ = run(u0, cfg, CARREAU, 1e-3, spec)
        e = 0.5 * traj["l2"] ** 2
        res = np.diff(e) + np.diff(traj["work_dissipation"]) + np.diff(traj["work_jprime"]) - np.diff(traj["work_forcing"])
        scale = cfg.rel_tol * max(traj["l2"])
        assert np.all(np.abs(res) <= scale * np.maximum(np.diff(traj.times), 1.0))

    def test_forcing_stops_at_cutoff(self, basis2):
        spec = ForcingSpec({0: 5.0}, T1=0.2)
        cfg = IntegratorConfig(t_end=0.4, record_dt=0.1)
        traj, _ = run(CoefficientVector.zeros(basis2), cfg, CARREAU, 1e-3, spec)
        fp = traj["forcing_power"]
        assert fp[at(traj, 0.2)] == 0.0
        wf = traj["work_forcing"]
        assert wf[-1] == wf[at(traj, 0.2)]

    def test_tolerance_refinement(self, basis2):
        cfg = IntegratorConfig(t_end=0.5, rel_tol=1e-6)
        u0 = project_function(taylor_green, basis2)
        a, _ = run(u0, cfg, CARREAU, 1e-3)
        b, _ = run(u0, cfg.tightened(), CARREAU, 1e-3)
        assert abs(a["l2"][-1] - b["l2"][-1]) < 1e-6

    def test_deterministic(self, basis2):
        u0 = two_mode(basis2)
        cfg = IntegratorConfig(t_end=0.2)
        a, _ = run(u0, cfg, CARREAU, 1e-3)
        b, _ = run(u0, cfg, CARREAU, 1e-3)
        assert np.array_equal(a.states, b.states)
        assert list(a.rows()) == list(b.rows())

    def test_sink_sees_every_record(self, basis2):
        seen = []
        traj, _ = run(single(basis2), IntegratorConfig(t_end=0.1), CARREAU, 1e-3,
                      sink=lambda t, d, row: seen.append(t))
        assert seen == traj.times.tolist()

    def test_restart_from_record(self, basis2):
        cfg = IntegratorConfig(t_end=0.6, record_dt=0.1, record_every=10**9)
        u0 = project_function(taylor_green, basis2)
        full, _ = run(u0, cfg, CARREAU, 1e-3)
        k = at(full, 0.3)
        rest, _ = run(full.state(k), cfg, CARREAU, 1e-3)
        assert rest.times[0] == full.times[k]
        assert np.allclose(rest.states[-1], full.states[-1], atol=1e-7)

    def test_start_after_end(self, basis2):
        with pytest.raises(ValueError):
            run(single(basis2).replace(t=2.0), IntegratorConfig(t_end=1.0), STOKES, 0.0)

    def test_step_underflow(self, basis2):
        cfg = IntegratorConfig(t_end=1.0, dt_min=0.5, dt_init=0.5, dt_max=0.5, rel_tol=1e-14, abs_tol=1e-16)
        u0 = project_function(taylor_green, basis2)
        with pytest.raises(StepUnderflowError) as info:
            run(u0, cfg, CARREAU, 1e-3)
        assert isinstance(info.value, IntegratorError)
        assert len(info.value.trajectory) == 1

    def test_max_steps(self, basis2):
        cfg = IntegratorConfig(t_end=1.0, dt_max=1e-3, max_steps=10)
        with pytest.raises(IntegratorError, match="max_steps"):
            run(single(basis2), cfg, CARREAU, 1e-3)


class TestTrajectoryRecord:
    def test_times_strictly_increasing(self, basis2):
        tr = TrajectoryRecord(basis2)
        row = tuple(range(len(COLUMNS)))
        tr.append(0.0, np.zeros(basis2.M), row)
        with pytest.raises(ValueError):
            tr.append(0.0, np.zeros(basis2.M), row)

    def test_unknown_column(self, basis2):
        with pytest.raises(KeyError):
            TrajectoryRecord(basis2)["nope"]


class TestDetectStopping:
    def test_linear(self):
        t = np.linspace(0, 2, 201)
        ev = detect_stopping_series(t, np.maximum(0.0, 1 - t), 1e-10)
        assert abs(ev.T0 - 1.0) <= 0.01

    def test_never(self):
        t = np.linspace(0, 1, 11)
        assert detect_stopping_series(t, np.full(11, 2e-10), 1e-10) is None

    def test_exponential(self):
        t = np.linspace(0, 10, 1001)
        ev = detect_stopping_series(t, np.exp(-t), 1e-3, alpha=1.0)
        assert ev.T0 == pytest.approx(math.log(1e3), abs=1e-4)
        coarse = detect_stopping_series(t, np.exp(-t), 1e-3)
        assert coarse.T0 - math.log(1e3) < 0.01

    def test_alpha_interpolation_exact_for_power_series(self):
        t = np.linspace(0, 2, 21)
        l2 = np.maximum(0.0, 1 - t) ** 2  # l2^(1/2) is linear
        ev = detect_stopping_series(t, l2, 0.25**2, alpha=0.5)
        assert ev.T0 == pytest.approx(0.75, abs=1e-12)

    def test_from_trajectory(self, basis2):
        traj, ev = run(two_mode(basis2), IntegratorConfig(t_end=10.0), POWER, 1e-8)
        again = detect_stopping(traj, 1e-10)
        assert again.T0 == ev.T0
