"""Right-hand side of the regularized Galerkin system.

With ``u = sum d_i w_i`` the coefficients obey ``d' = stokes + viscous +
convection + forcing`` where, for each basis field ``w_i``,

* ``stokes_i     = -1/2 lambda_i d_i``            (Korn equality on the basis)
* ``viscous_i    = -int F(sqrt(eps + |D u|^2)) D u : D w_i``
* ``convection_i = -int (u . grad u) . w_i = int (u (x) u) : D w_i``
* ``forcing_i    = <f, w_i>``, identically zero from the cutoff time on.

The two nonlinear tensors are summed pointwise and analysed with a single
forward transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

from . import kernels
from .basis import BasisSpec, CoefficientVector
from .viscosity import DomainError, F_values, ViscosityModel, eval_G

__all__ = [
    "UnknownModeError",
    "ViscosityOverflowError",
    "ForcingSpec",
    "RhsBreakdown",
    "GalerkinSystem",
    "stokes_term",
    "viscous_nonlinear_term",
    "convection_term",
    "forcing_term",
    "rhs",
    "dissipation_potential",
    "jprime_pairing",
    "jprime_dual_norm",
]

OVERFLOW_LIMIT = 1e300
# above this cutoff the FFT path beats the direct separable transform
DIRECT_TRANSFORM_MAX_M = 8

Envelope = Union[float, Callable[[float], float]]
ModeKey = Union[int, tuple]


class UnknownModeError(KeyError):
    pass


class ViscosityOverflowError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ForcingSpec:
    """Modal forcing ``f(t) = sum a_i(t) w_i`` switched off for ``t >= T1``.

    Keys of ``modal_amplitudes`` are mode indices or ``(xi, phase)`` tuples;
    values are constants or callables of ``t``.
    """

    modal_amplitudes: Mapping[ModeKey, Envelope] = field(default_factory=dict)
    T1: float = 0.0

    def __post_init__(self):
        if self.T1 < 0:
            raise ValueError("T1 must be >= 0")

    @property
    def is_zero(self) -> bool:
        return not self.modal_amplitudes or self.T1 <= 0

    def resolve(self, basis: BasisSpec) -> list[tuple[int, Envelope]]:
        out = []
        for key, env in self.modal_amplitudes.items():
            if isinstance(key, (int, np.integer)):
                i = int(key)
                if not 0 <= i < basis.M:
                    raise UnknownModeError(f"mode index {i} outside basis of size {basis.M}")
            else:
                xi, phase = key[0], key[1]
                try:
                    i = basis.index(xi, phase, key[2] if len(key) > 2 else 0)
                except KeyError as exc:
                    raise UnknownModeError(str(exc)) from None
            out.append((i, env))
        return out


def forcing_term(t: float, spec: ForcingSpec, basis: BasisSpec) -> np.ndarray:
    out = np.zeros(basis.M)
    entries = spec.resolve(basis)
    if t >= spec.T1:
        return out
    for i, env in entries:
        out[i] += env(t) if callable(env) else float(env)
    return out


@dataclass(frozen=True)
class RhsBreakdown:
    stokes: np.ndarray
    viscous_nl: np.ndarray
    convection: np.ndarray
    forcing: np.ndarray
    total: np.ndarray


def _check_eps(model: ViscosityModel, eps: float) -> None:
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0 and not model.bounded_at_zero:
        raise DomainError(f"{model.kind} is singular at rest; eps = 0 is not allowed")


class GalerkinSystem:
    """A basis, viscosity law, regularization and forcing bound together.

    Holds the pieces that are reused on every right-hand-side evaluation.
    """

    def __init__(
        self,
        basis: BasisSpec,
        model: ViscosityModel,
        eps: float,
        forcing: ForcingSpec | None = None,
        convection: bool = True,
    ):
        _check_eps(model, eps)
        self.basis = basis
        self.model = model
        self.eps = float(eps)
        self.forcing = forcing or ForcingSpec()
        self.convection = convection
        self.decay = 0.5 * basis.lam
        self._params = np.ascontiguousarray(model.params, dtype=float)
        self._code = model.code
        self._table = model.kind == "table"
        self._entries = self.forcing.resolve(basis)
        self._empty = np.empty(0)
        self._no_u = np.empty((0, basis.grid_size**basis.N))
        self._want = ["velocity", "sym_gradient"] if convection else ["sym_gradient"]
        self._plan = None
        if (
            kernels.Plan2D is not None
            and basis.N == 2
            and basis.m_max <= DIRECT_TRANSFORM_MAX_M
            and not self._table
        ):
            self._plan = kernels.Plan2D(
                basis.grid_size,
                basis.m_max,
                basis.sigma[:, 0],
                basis.sigma[:, 1],
                basis._table(("velocity", "sym_gradient")),
                basis._k_sym,
                basis.flip,
                0.5 * basis.amplitude,
                basis.amplitude * basis.cell_volume,
            )

    def forcing_vector(self, t: float) -> np.ndarray:
        out = np.zeros(self.basis.M)
        if t < self.forcing.T1:
            for i, env in self._entries:
                out[i] += env(t) if callable(env) else float(env)
        return out

    def _tensor(self, d: np.ndarray, convection: bool) -> tuple[np.ndarray, float]:
        b = self.basis
        N, S = b.N, b.n_sym
        want = self._want if convection == self.convection else (
            ["velocity", "sym_gradient"] if convection else ["sym_gradient"])
        g = b.fields(d, want)
        shape = g.shape[1:]
        g = g.reshape(g.shape[0], -1)
        U = g[:N] if convection else self._no_u
        Sg = g[-S:]
        Fext = self._empty
        if self._table:
            Fext = np.ascontiguousarray(
                F_values(self.model, np.sqrt(self.eps + kernels.strain_magnitude_sq(Sg)))
            )
        T = np.empty_like(Sg)
        pairing, fmax = kernels.stress(self._code, self._params, self.eps, Sg, U, T, Fext)
        if not fmax <= OVERFLOW_LIMIT:
            raise ViscosityOverflowError(f"viscosity field reached {fmax:.3e}")
        return T.reshape((S,) + shape), pairing * b.cell_volume

    def nonlinear(self, d: np.ndarray, convection: bool | None = None) -> tuple[np.ndarray, float]:
        """Viscous (+ convective) modal vector and ``<j'_eps(u), u>``.

        Forcing is not included; see :meth:`forcing_vector`.
        """
        conv = self.convection if convection is None else convection
        if self._plan is not None:
            out = np.empty(self.basis.M)
            pairing, fmax = self._plan.evaluate(d, self._code, self._params, self.eps, conv, out)
            if not fmax <= OVERFLOW_LIMIT:
                raise ViscosityOverflowError(f"viscosity field reached {fmax:.3e}")
            return out, pairing * self.basis.cell_volume
        T, pairing = self._tensor(d, conv)
        return self.basis.tensor_modal(T), pairing

    def viscous(self, d: np.ndarray) -> tuple[np.ndarray, float]:
        return self.nonlinear(d, convection=False)

    def breakdown(self, t: float, d: np.ndarray) -> RhsBreakdown:
        stokes = -self.decay * d
        visc, _ = self.viscous(d)
        conv = convection_term(CoefficientVector(self.basis, d)) if self.convection else np.zeros_like(d)
        forc = self.forcing_vector(t)
        return RhsBreakdown(stokes, visc, conv, forc, stokes + visc + conv + forc)


def stokes_term(coeffs: CoefficientVector) -> np.ndarray:
    return -0.5 * coeffs.basis.lam * coeffs.d


def viscous_nonlinear_term(coeffs: CoefficientVector, model: ViscosityModel, eps: float) -> np.ndarray:
    """``-int F(sqrt(eps + |D u|^2)) D u : D w_i`` by grid quadrature.

    Raises
    ------
    DomainError
        If ``eps == 0`` and the law is singular at rest.
    ViscosityOverflowError
        If the viscosity field exceeds ``1e300`` or is not finite.
    """
    return GalerkinSystem(coeffs.basis, model, eps, convection=False).viscous(coeffs.d)[0]


def convection_term(coeffs: CoefficientVector) -> np.ndarray:
    """``-int (u . grad u) . w_i``, written as ``int (u (x) u) : D w_i``."""
    b = coeffs.basis
    u = b.fields(coeffs.d, ["velocity"])
    T = np.stack([u[c] * u[j] for c, j in b.pairs])
    return b.tensor_modal(T)


def rhs(
    coeffs: CoefficientVector,
    model: ViscosityModel,
    eps: float,
    spec: ForcingSpec | None = None,
) -> RhsBreakdown:
    return GalerkinSystem(coeffs.basis, model, eps, spec).breakdown(coeffs.t, coeffs.d)


def _strain_magnitude(basis: BasisSpec, d: np.ndarray, n: int | None = None) -> np.ndarray:
    S = basis.fields(d, ["sym_gradient"], n=n)
    return np.sqrt(basis.frobenius_sq(S))


def dissipation_potential(
    basis: BasisSpec, d: np.ndarray, model: ViscosityModel, eps: float, n: int | None = None
) -> float:
    """``j_eps(u) = int G_eps(|D u|) dx`` by grid quadrature."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    t = _strain_magnitude(basis, d, n)
    return basis.integrate(eval_G(model, t, eps))


def jprime_pairing(
    basis: BasisSpec, d: np.ndarray, model: ViscosityModel, eps: float, direction: np.ndarray | None = None
) -> float:
    """``<j'_eps(u), w> = int F(sqrt(eps + |D u|^2)) D u : D w`` (``w = u`` by default)."""
    if direction is None:
        return GalerkinSystem(basis, model, eps, convection=False).viscous(d)[1]
    g, _ = GalerkinSystem(basis, model, eps, convection=False).viscous(d)
    return float(-g @ direction)


def jprime_dual_norm(viscous: np.ndarray, basis: BasisSpec) -> float:
    """``||j'_eps(u)||_{H^-1}`` from the modal viscous vector."""
    return math.sqrt(float(np.sum(viscous * viscous / basis.lam)))
