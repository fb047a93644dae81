import math

import numpy as np
import pytest

from viscogalerkin import kernels
from viscogalerkin.basis import CoefficientVector, GridField, analyze, build_basis, synthesize
from viscogalerkin.rhs import (
    ForcingSpec,
    GalerkinSystem,
    UnknownModeError,
    ViscosityOverflowError,
    convection_term,
    dissipation_potential,
    forcing_term,
    jprime_dual_norm,
    jprime_pairing,
    rhs,
    stokes_term,
    viscous_nonlinear_term,
)
from viscogalerkin.viscosity import DomainError, ViscosityModel, eval_F

POWER = ViscosityModel("power_law", alpha=1.0)
CARREAU = ViscosityModel("carreau", mu=1.0, alpha=1.0)


def state(basis, rng, scale=1.0):
    return CoefficientVector(basis, scale * rng.standard_normal(basis.M))


def brute_convection(c):
    """-int (u . grad u) . w_i from grid products."""
    b = c.basis
    u = synthesize(c).values
    g = synthesize(c, "gradient").values
    adv = np.stack([sum(u[j] * g[i, j] for j in range(b.N)) for i in range(b.N)])
    return -analyze(GridField(adv, "vector"), b)


def brute_viscous(c, model, eps, n=None):
    b = c.basis
    S = synthesize(c, "sym_gradient").values
    mag = np.sqrt(eps + np.sum(S * S, axis=(0, 1)))
    return -analyze(GridField(eval_F(model, mag) * S, "tensor"), b, "Dw")


class TestStokes:
    def test_unit(self, basis2):
        i = basis2.index((1, 1), "sin")
        out = stokes_term(CoefficientVector.unit(basis2, i))
        expect = np.zeros(basis2.M)
        expect[i] = -1.0
        assert np.array_equal(out, expect)

    def test_zero(self, basis2):
        assert not np.any(stokes_term(CoefficientVector.zeros(basis2)))

    def test_quadrature_oracle(self, basis2, rng):
        c = state(basis2, rng)
        S = synthesize(c, "sym_gradient")
        assert np.allclose(stokes_term(c), -analyze(S, basis2, "Dw"), atol=1e-12)


class TestViscous:
    @pytest.mark.parametrize("eps", [0.0, 1e-6, 1.0])
    def test_constant_reduction(self, basis2, rng, eps):
        c = state(basis2, rng)
        out = viscous_nonlinear_term(c, ViscosityModel("constant", c=2.5), eps)
        assert np.allclose(out, 2.5 * stokes_term(c), atol=1e-10)

    def test_zero_state(self, basis2):
        assert np.allclose(viscous_nonlinear_term(CoefficientVector.zeros(basis2), POWER, 1e-6), 0)

    def test_dissipative(self, basis2, rng):
        for _ in range(100):
            c = state(basis2, rng, 10 ** rng.uniform(-3, 1))
            assert -viscous_nonlinear_term(c, POWER, 1e-6) @ c.d >= 0

    @pytest.mark.parametrize("model", [POWER, CARREAU, ViscosityModel("log_power", alpha=0.5, beta=0.25, gamma=0.5)])
    def test_matches_brute_force(self, basis2, rng, model):
        c = state(basis2, rng)
        assert np.allclose(viscous_nonlinear_term(c, model, 1e-3), brute_viscous(c, model, 1e-3), atol=1e-12)

    def test_three_dimensional(self, basis3, rng):
        c = state(basis3, rng)
        assert np.allclose(viscous_nonlinear_term(c, CARREAU, 1e-3), brute_viscous(c, CARREAU, 1e-3), atol=1e-12)

    def test_eps_zero_singular_law(self, basis2, rng):
        with pytest.raises(DomainError):
            viscous_nonlinear_term(state(basis2, rng), POWER, 0.0)

    def test_eps_zero_bounded_law(self, basis2, rng):
        out = viscous_nonlinear_term(state(basis2, rng), CARREAU, 0.0)
        assert np.all(np.isfinite(out))

    def test_overflow(self, basis2):
        # F(sqrt(eps)) = eps**-1.5 = 1e450 at rest
        m = ViscosityModel("power_law", alpha=3.0, strict=False)
        with pytest.raises(ViscosityOverflowError):
            viscous_nonlinear_term(CoefficientVector.zeros(basis2), m, 1e-300)


class TestConvection:
    def test_single_mode(self, basis2):
        for i in range(basis2.M):
            assert np.max(np.abs(convection_term(CoefficientVector.unit(basis2, i, 3.0)))) < 1e-12

    def test_zero(self, basis2):
        assert not np.any(convection_term(CoefficientVector.zeros(basis2)))

    @pytest.mark.parametrize("which", ["2d", "3d"])
    def test_skew(self, basis2, basis3, rng, which):
        b = basis2 if which == "2d" else basis3
        for _ in range(20):
            c = state(b, rng)
            assert abs(convection_term(c) @ c.d) < 1e-10

    @pytest.mark.parametrize("which", ["2d", "3d"])
    def test_matches_brute_force(self, basis2, basis3, rng, which):
        b = basis2 if which == "2d" else basis3
        c = state(b, rng)
        assert np.allclose(convection_term(c), brute_convection(c), atol=1e-12)

    def test_dealiased(self, rng):
        # the same state on a much finer grid gives the same modal vector
        coarse, fine = build_basis(2, 4), build_basis(2, 4, 64)
        d = rng.standard_normal(coarse.M)
        a = convection_term(CoefficientVector(coarse, d))
        b = convection_term(CoefficientVector(fine, d))
        assert np.allclose(a, b, atol=1e-12)


class TestForcing:
    def test_cutoff(self, basis2):
        spec = ForcingSpec({0: 2.0}, T1=0.5)
        assert not np.any(forcing_term(0.5, spec, basis2))
        assert not np.any(forcing_term(3.0, spec, basis2))

    def test_constant(self, basis2):
        out = forcing_term(0.1, ForcingSpec({0: 2.0}, T1=0.5), basis2)
        assert out[0] == 2.0 and not np.any(out[1:])

    def test_empty(self, basis2):
        for t in (0.0, 1.0, 100.0):
            assert not np.any(forcing_term(t, ForcingSpec(), basis2))

    def test_callable_and_key(self, basis2):
        spec = ForcingSpec({((1, 0), "cos"): lambda t: math.cos(t)}, T1=1.0)
        out = forcing_term(0.3, spec, basis2)
        assert out[basis2.index((1, 0), "cos")] == pytest.approx(math.cos(0.3))

    def test_unknown_mode(self, basis2):
        with pytest.raises(UnknownModeError):
            forcing_term(0.0, ForcingSpec({((9, 9), "cos"): 1.0}, 1.0), basis2)
        with pytest.raises(UnknownModeError):
            forcing_term(0.0, ForcingSpec({basis2.M: 1.0}, 1.0), basis2)

    def test_negative_cutoff(self):
        with pytest.raises(ValueError):
            ForcingSpec({0: 1.0}, T1=-1.0)


class TestRhs:
    def test_stokes_decay(self, basis2):
        i = basis2.index((1, 0), "cos")
        c = CoefficientVector.unit(basis2, i, 0.7)
        br = rhs(c, ViscosityModel("constant", c=0.0, strict=False), 0.0)
        assert br.total[i] == pytest.approx(-0.35)

    def test_constant_law(self, basis2):
        i = basis2.index((0, 1), "sin")
        c = CoefficientVector.unit(basis2, i, 1.0)
        br = rhs(c, ViscosityModel("constant", c=3.0), 0.0)
        assert br.total[i] == pytest.approx(-2.0, rel=1e-12)
        assert np.max(np.abs(np.delete(br.total, i))) < 1e-12

    def test_rest_is_equilibrium(self, basis2):
        br = rhs(CoefficientVector.zeros(basis2), CARREAU, 1e-4)
        assert not np.any(br.total)

    def test_total_is_sum(self, basis2, rng):
        c = state(basis2, rng)
        br = rhs(c, CARREAU, 1e-3, ForcingSpec({0: 1.0, 5: -0.5}, T1=1.0))
        assert np.array_equal(br.total, br.stokes + br.viscous_nl + br.convection + br.forcing)

    def test_energy_identity(self, basis2, rng):
        spec = ForcingSpec({0: 1.0, 5: -0.5}, T1=1.0)
        for _ in range(10):
            c = state(basis2, rng)
            br = rhs(c, POWER, 1e-4, spec)
            diss = 0.5 * float(basis2.lam @ (c.d * c.d))
            jp = jprime_pairing(basis2, c.d, POWER, 1e-4)
            expect = -diss - jp + br.forcing @ c.d
            assert br.total @ c.d == pytest.approx(expect, abs=1e-10 * (1 + abs(expect)))

    def test_fast_path_matches_fft_path(self, basis2, rng):
        if kernels.Plan2D is None:
            pytest.skip("compiled kernels unavailable")
        sys_ = GalerkinSystem(basis2, CARREAU, 1e-3)
        assert sys_._plan is not None
        d = state(basis2, rng).d
        fast, fp = sys_.nonlinear(d)
        T, sp = sys_._tensor(d, True)
        assert np.allclose(fast, basis2.tensor_modal(T), atol=1e-12)
        assert fp == pytest.approx(sp, rel=1e-12)


class TestPotential:
    def test_directional_derivative_first_order(self, basis2, rng):
        v, w = state(basis2, rng).d, state(basis2, rng).d
        exact = jprime_pairing(basis2, v, POWER, 1e-3, direction=w)
        j0 = dissipation_potential(basis2, v, POWER, 1e-3)
        errs = []
        for h in (1e-3, 1e-4, 1e-5):
            fd = (dissipation_potential(basis2, v + h * w, POWER, 1e-3) - j0) / h
            errs.append(abs(fd - exact))
        assert errs[0] > errs[1] > errs[2]
        # first order: the error shrinks about tenfold per decade
        assert 3 < errs[0] / errs[1] < 30

    def test_convexity(self, basis2, rng):
        for _ in range(20):
            u, psi = state(basis2, rng).d, state(basis2, rng).d
            lhs = dissipation_potential(basis2, u, POWER, 1e-4) - dissipation_potential(basis2, psi, POWER, 1e-4)
            rhs_ = jprime_pairing(basis2, u, POWER, 1e-4, direction=u - psi)
            assert lhs <= rhs_ + 1e-9

    def test_pairing_default_direction(self, basis2, rng):
        d = state(basis2, rng).d
        assert jprime_pairing(basis2, d, CARREAU, 1e-3) == pytest.approx(
            jprime_pairing(basis2, d, CARREAU, 1e-3, direction=d), rel=1e-12
        )

    def test_dual_norm_constant_law(self, basis2, rng):
        c = state(basis2, rng)
        v = viscous_nonlinear_term(c, ViscosityModel("constant", c=1.0), 0.0)
        # -1/2 lam d in H^-1 has norm 1/2 ||d||_{H^1}
        assert jprime_dual_norm(v, basis2) == pytest.approx(0.5 * math.sqrt(basis2.lam @ (c.d**2)), rel=1e-12)
