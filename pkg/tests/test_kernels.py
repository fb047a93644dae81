import types

import numpy as np
import pytest

from viscogalerkin import _kernels_py, kernels, rhs
from viscogalerkin.basis import build_basis, random_coefficients
from viscogalerkin.viscosity import ViscosityModel

compiled = pytest.importorskip("viscogalerkin._kernels")

LAWS = [
    ViscosityModel("power_law", alpha=0.5),
    ViscosityModel("carreau", mu=1.0, alpha=1.0),
    ViscosityModel("cross", gamma=0.5, alpha=1.0),
    ViscosityModel("log_power", alpha=0.5, gamma=0.5, beta=0.25),
    ViscosityModel("constant", c=2.0),
]


def python_backend():
    ns = types.SimpleNamespace(**{k: getattr(_kernels_py, k) for k in kernels.__all__ if hasattr(_kernels_py, k)})
    ns.Plan2D = None
    return ns


class TestPointwise:
    @pytest.mark.parametrize("model", LAWS, ids=lambda m: m.kind)
    def test_viscosity(self, model, rng):
        r = np.ascontiguousarray(rng.uniform(1e-6, 10, 500))
        p = np.ascontiguousarray(model.params, dtype=float)
        np.testing.assert_allclose(compiled.viscosity(model.code, p, r), _kernels_py.viscosity(model.code, p, r),
                                   rtol=1e-14)

    @pytest.mark.parametrize("nsym", [3, 6])
    def test_strain(self, nsym, rng):
        S = np.ascontiguousarray(rng.standard_normal((nsym, 200)))
        np.testing.assert_allclose(compiled.strain_magnitude_sq(S), _kernels_py.strain_magnitude_sq(S), rtol=1e-14)

    @pytest.mark.parametrize("conv", [True, False])
    def test_stress(self, conv, rng):
        model = LAWS[1]
        p = np.ascontiguousarray(model.params, dtype=float)
        S = np.ascontiguousarray(rng.standard_normal((3, 64)))
        U = np.ascontiguousarray(rng.standard_normal((2, 64))) if conv else np.empty((0, 64))
        Ta, Tb = np.empty_like(S), np.empty_like(S)
        ra = compiled.stress(model.code, p, 1e-4, S, U, Ta, np.empty(0))
        rb = _kernels_py.stress(model.code, p, 1e-4, S, U, Tb, np.empty(0))
        np.testing.assert_allclose(Ta, Tb, rtol=1e-13, atol=1e-15)
        assert ra == pytest.approx(rb, rel=1e-12)


class TestSystemBackends:
    @pytest.mark.parametrize("N,m", [(2, 4), (2, 10), (3, 2)])
    @pytest.mark.parametrize("model", LAWS[:2], ids=lambda m: m.kind)
    def test_nonlinear_matches_reference(self, N, m, model, monkeypatch):
        b = build_basis(N, m)
        d = random_coefficients(b, 7).d
        fast = rhs.GalerkinSystem(b, model, 1e-4)
        monkeypatch.setattr(rhs, "kernels", python_backend())
        ref = rhs.GalerkinSystem(b, model, 1e-4)
        assert ref._plan is None
        va, fa = fast.nonlinear(d)
        vb, fb = ref.nonlinear(d)
        np.testing.assert_allclose(va, vb, rtol=1e-11, atol=1e-12 * np.abs(vb).max())
        assert fa == pytest.approx(fb, rel=1e-12)

    def test_direct_plan_used_for_small_2d(self):
        sys2 = rhs.GalerkinSystem(build_basis(2, 4), LAWS[0], 1e-6)
        assert (sys2._plan is not None) == (kernels.Plan2D is not None)

    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")
