"""Divergence-free Laplacian eigenbasis on the torus ``[0, 2pi)^N``.

Each retained wavevector ``xi`` (one representative of ``+-xi``, first
nonzero component positive, ``|xi|_inf <= m_max``) carries ``N - 1``
unit directions orthogonal to ``xi`` and two phases, giving the fields

    w = A e cos(xi.x),   w = A e sin(xi.x),   A = sqrt(2 / (2 pi)^N)

which are orthonormal in L2 and satisfy ``-Lap w = |xi|^2 w``.  Grid values
are produced with real FFTs; a grid of more than ``3 m_max`` points per
axis integrates every triple product of basis fields exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import fft

from . import kernels

__all__ = [
    "ConfigurationError",
    "ProjectionError",
    "WaveMode",
    "BasisSpec",
    "CoefficientVector",
    "GridField",
    "Norms",
    "build_basis",
    "default_grid_size",
    "synthesize",
    "analyze",
    "norms",
    "project_function",
    "taylor_green",
    "random_coefficients",
]


class ConfigurationError(ValueError):
    pass


class ProjectionError(ValueError):
    """The field handed to :func:`project_function` is not admissible."""


@dataclass(frozen=True)
class WaveMode:
    xi: tuple[int, ...]
    phase: str
    lam: float
    direction: tuple[float, ...]
    branch: int = 0

    @property
    def key(self) -> tuple:
        return (self.xi, self.branch, self.phase)


def _representatives(N: int, m: int) -> list[tuple[int, ...]]:
    out = []
    for xi in itertools.product(range(-m, m + 1), repeat=N):
        nz = [c for c in xi if c != 0]
        if nz and nz[0] > 0:
            out.append(xi)
    out.sort(key=lambda v: (sum(c * c for c in v), v))
    return out


def _directions(xi: tuple[int, ...]) -> list[np.ndarray]:
    x = np.array(xi, dtype=np.int64)
    if len(xi) == 2:
        perp = np.array([-x[1], x[0]])
        return [perp / np.sqrt(perp @ perp)]
    # integer cross products, normalised afterwards
    k = int(np.argmin(np.abs(x)))
    a = np.zeros(3, dtype=np.int64)
    a[k] = 1
    e1 = np.cross(a, x)
    e2 = np.cross(x, e1)
    return [e1 / np.sqrt(e1 @ e1), e2 / np.sqrt(e2 @ e2)]


def _sym_pairs(N: int) -> list[tuple[int, int]]:
    return [(c, j) for c in range(N) for j in range(c, N)]


def default_grid_size(m_max: int) -> int:
    """Smallest even grid with more than ``3 m_max`` points per axis."""
    n = 3 * m_max + 1
    return n + (n % 2)


class _Layout:
    """Positions of each slot's wavevector inside an rfft array of size ``n``.

    ``loc_neg`` is ``-1`` except on the ``k_last = 0`` plane, where the
    conjugate partner must be stored explicitly.
    """

    def __init__(self, sigma: np.ndarray, N: int, n: int):
        self.n = n
        self.shape = (n,) * N
        self.half = (n,) * (N - 1) + (n // 2 + 1,)
        self.size = int(np.prod(self.half))
        self.axes = tuple(range(-N, 0))
        idx = tuple(np.mod(sigma[:, a], n) for a in range(N - 1)) + (sigma[:, -1],)
        self.loc = np.ascontiguousarray(np.ravel_multi_index(idx, self.half), dtype=np.intp)
        neg = tuple(np.mod(-sigma[:, a], n) for a in range(N - 1)) + (sigma[:, -1],)
        self.loc_neg = np.where(
            sigma[:, -1] == 0, np.ravel_multi_index(neg, self.half), -1
        ).astype(np.intp)


class BasisSpec:
    """Ordered divergence-free modes plus the FFT bookkeeping for them.

    Parameters
    ----------
    N : int
        Spatial dimension (2 or 3).
    m_max : int
        Retain wavevectors with ``|xi|_inf <= m_max``.
    grid_size : int
        Collocation points per axis.
    """

    def __init__(self, N: int, m_max: int, grid_size: int):
        if N not in (2, 3):
            raise ConfigurationError("N must be 2 or 3")
        if m_max < 1:
            raise ConfigurationError("m_max must be >= 1")
        if grid_size < 3 * m_max:
            raise ConfigurationError(
                f"grid_size={grid_size} below 3*m_max={3 * m_max} needed for dealiasing"
            )
        self.N = N
        self.m_max = m_max
        self.grid_size = grid_size
        self.amplitude = math.sqrt(2.0 / (2.0 * math.pi) ** N)
        self.h = 2.0 * math.pi / grid_size
        self.pairs = _sym_pairs(N)

        modes: list[WaveMode] = []
        xis, dirs = [], []
        for xi in _representatives(N, m_max):
            lam = float(sum(c * c for c in xi))
            for b, e in enumerate(_directions(xi)):
                xis.append(xi)
                dirs.append(e)
                for phase in ("cos", "sin"):
                    modes.append(WaveMode(xi, phase, lam, tuple(float(v) for v in e), b))
        self.modes = tuple(modes)
        # one slot per (xi, branch); modes 2p and 2p+1 are its cos and sin
        self.xi = np.array(xis, dtype=np.int64)
        self.dirs = np.array(dirs)
        self.lam_slot = np.sum(self.xi**2, axis=1).astype(float)
        self.lam = np.repeat(self.lam_slot, 2)
        self.flip = np.where(self.xi[:, -1] < 0, -1.0, 1.0)
        self.sigma = self.xi * self.flip[:, None].astype(np.int64)
        self._layouts: dict[int, _Layout] = {}
        self._index = {m.key: i for i, m in enumerate(self.modes)}

        e, s = self.dirs, self.sigma.astype(float)
        self._c_vel = e
        self._c_sym = np.stack([0.5 * (s[:, j] * e[:, c] + s[:, c] * e[:, j]) for c, j in self.pairs], 1)
        self._c_grad = np.stack([s[:, j] * e[:, c] for c in range(N) for j in range(N)], 1)
        mult = np.array([1.0 if c == j else 2.0 for c, j in self.pairs])
        self._k_sym = np.ascontiguousarray(self._c_sym * mult)
        self._tables: dict[tuple[str, ...], np.ndarray] = {}

    def __repr__(self):
        return f"BasisSpec(N={self.N}, m_max={self.m_max}, grid_size={self.grid_size}, M={self.M})"

    @property
    def M(self) -> int:
        return len(self.modes)

    @property
    def n_sym(self) -> int:
        return len(self.pairs)

    def index(self, xi: Sequence[int], phase: str, branch: int = 0) -> int:
        """Position of the mode ``(xi, phase)``.

        ``xi`` must be the stored representative (first nonzero entry positive).
        """
        key = (tuple(int(v) for v in xi), branch, phase)
        try:
            return self._index[key]
        except KeyError:
            raise KeyError(f"mode {key[0]}/{phase} not in basis with m_max={self.m_max}") from None

    def layout(self, n: int | None = None) -> _Layout:
        n = self.grid_size if n is None else n
        if n not in self._layouts:
            if n < 2 * self.m_max + 1:
                raise ConfigurationError(f"grid of {n} points cannot hold m_max={self.m_max}")
            self._layouts[n] = _Layout(self.sigma, self.N, n)
        return self._layouts[n]

    @cached_property
    def grid(self) -> list[np.ndarray]:
        x = np.arange(self.grid_size) * self.h
        return np.meshgrid(*([x] * self.N), indexing="ij")

    @property
    def cell_volume(self) -> float:
        return self.h**self.N

    # -- spectral kernels ----------------------------------------------
    def _table(self, want: tuple[str, ...]) -> np.ndarray:
        """Per-slot spectral factors ``(P, Q)`` for the requested fields."""
        if want not in self._tables:
            blocks = []
            for w in want:
                if w == "velocity":
                    blocks.append(self._c_vel + 0j)
                elif w == "sym_gradient":
                    blocks.append(1j * self._c_sym)
                elif w == "gradient":
                    blocks.append(1j * self._c_grad)
                elif w == "laplacian":
                    blocks.append(self.lam_slot[:, None] * self._c_vel + 0j)
                else:
                    raise ValueError(f"unknown field {w!r}")
            self._tables[want] = np.ascontiguousarray(np.concatenate(blocks, axis=1))
        return self._tables[want]

    def fields(self, d: np.ndarray, want: Sequence[str], n: int | None = None) -> np.ndarray:
        """Grid values of several derived fields in a single transform.

        ``want`` items: ``velocity`` (N rows), ``sym_gradient`` (one row per
        symmetric pair), ``gradient`` (N*N rows, row-major ``du_c/dx_j``),
        ``laplacian`` (N rows of ``-Lap u``).
        """
        n = self.grid_size if n is None else n
        lay = self.layout(n)
        table = self._table(tuple(want))
        q = table.shape[1]
        spec = np.empty((q, lay.size), dtype=complex)
        scale = 0.5 * self.amplitude * float(n) ** self.N
        kernels.scatter(np.ascontiguousarray(d, dtype=float), self.flip, table,
                        lay.loc, lay.loc_neg, scale, spec)
        return fft.irfftn(spec.reshape((q,) + lay.half), s=lay.shape, axes=lay.axes)

    def _modal(self, arr: np.ndarray, ktab: np.ndarray, vector: bool) -> np.ndarray:
        n = arr.shape[-1]
        lay = self.layout(n)
        spec = fft.rfftn(arr, axes=lay.axes).reshape(arr.shape[0], lay.size)
        out = np.empty(self.M)
        scale = self.amplitude * (2.0 * math.pi / n) ** self.N
        kernels.gather(spec, lay.loc, ktab, self.flip, scale, vector, out)
        return out

    def tensor_modal(self, T: np.ndarray) -> np.ndarray:
        """``int T : D(w_i) dx`` for symmetric-storage tensors ``(S, n, ..)``."""
        return self._modal(T, self._k_sym, False)

    def vector_modal(self, v: np.ndarray) -> np.ndarray:
        """``int v . w_i dx`` for vector fields ``(N, n, ..)``."""
        return self._modal(v, self._c_vel, True)

    def frobenius_sq(self, S: np.ndarray) -> np.ndarray:
        """Pointwise ``|D|^2`` from symmetric storage."""
        out = np.zeros(S.shape[1:])
        for q, (c, j) in enumerate(self.pairs):
            out += (1.0 if c == j else 2.0) * S[q] ** 2
        return out

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoidal (spectrally exact) torus quadrature of grid values."""
        n = values.shape[-1]
        return float(np.sum(values) * (2.0 * math.pi / n) ** self.N)


def build_basis(N: int = 2, m_max: int = 4, grid_size: int | None = None) -> BasisSpec:
    """Enumerate the modes with ``|xi|_inf <= m_max``.

    ``grid_size`` defaults to :func:`default_grid_size`.
    """
    return BasisSpec(N, m_max, default_grid_size(m_max) if grid_size is None else grid_size)


@dataclass
class CoefficientVector:
    """State ``u = sum_i d_i w_i`` at time ``t``."""

    basis: BasisSpec
    d: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if self.d.shape != (self.basis.M,):
            raise ValueError(f"expected {self.basis.M} coefficients, got {self.d.shape}")

    @classmethod
    def zeros(cls, basis: BasisSpec, t: float = 0.0) -> "CoefficientVector":
        return cls(basis, np.zeros(basis.M), t)

    @classmethod
    def unit(cls, basis: BasisSpec, i: int, amplitude: float = 1.0) -> "CoefficientVector":
        d = np.zeros(basis.M)
        d[i] = amplitude
        return cls(basis, d)

    def replace(self, d: np.ndarray | None = None, t: float | None = None) -> "CoefficientVector":
        return CoefficientVector(self.basis, self.d.copy() if d is None else d, self.t if t is None else t)


@dataclass
class GridField:
    """Grid values of a scalar, vector ``(N, ...)`` or tensor ``(N, N, ...)`` field."""

    values: np.ndarray
    rank: str

    def __post_init__(self):
        if self.rank not in ("scalar", "vector", "tensor"):
            raise ValueError(f"bad rank {self.rank!r}")


def synthesize(coeffs: CoefficientVector, want: str = "velocity") -> GridField:
    """Evaluate ``u``, ``grad u`` or ``D(u)`` on the collocation grid."""
    b = coeffs.basis
    N, n = b.N, b.grid_size
    if want == "velocity":
        return GridField(b.fields(coeffs.d, ["velocity"]), "vector")
    if want == "laplacian":
        return GridField(b.fields(coeffs.d, ["laplacian"]), "vector")
    if want == "gradient":
        g = b.fields(coeffs.d, ["gradient"])
        return GridField(g.reshape((N, N) + (n,) * N), "tensor")
    if want == "sym_gradient":
        S = b.fields(coeffs.d, ["sym_gradient"])
        full = np.empty((N, N) + (n,) * N)
        for q, (c, j) in enumerate(b.pairs):
            full[c, j] = S[q]
            full[j, c] = S[q]
        return GridField(full, "tensor")
    raise ValueError(f"unknown field {want!r}")


def analyze(field: GridField, basis: BasisSpec, against: str = "w") -> np.ndarray:
    """Quadrature pairing of a grid field with every ``w_i`` or ``D(w_i)``.

    Raises
    ------
    ValueError
        If the field rank or grid shape does not match the pairing.
    """
    N, n = basis.N, basis.grid_size
    v = field.values
    if against == "w":
        if field.rank != "vector" or v.shape != (N,) + (n,) * N:
            raise ValueError(f"pairing with w_i needs a vector field of shape {(N,) + (n,) * N}")
        return basis.vector_modal(v)
    if against == "Dw":
        if field.rank != "tensor" or v.shape != (N, N) + (n,) * N:
            raise ValueError(f"pairing with D(w_i) needs a tensor field of shape {(N, N) + (n,) * N}")
        sym = np.stack([0.5 * (v[c, j] + v[j, c]) for c, j in basis.pairs])
        return basis.tensor_modal(sym)
    raise ValueError(f"unknown pairing {against!r}")


@dataclass(frozen=True)
class Norms:
    l2: float
    h1: float
    dissipation: float
    l4: float


def l4_norm(basis: BasisSpec, d: np.ndarray) -> float:
    """``(int |u|^4)^(1/4)`` on a grid fine enough to integrate it exactly."""
    n = max(basis.grid_size, 4 * basis.m_max + 1)
    u = basis.fields(d, ["velocity"], n=n)
    mag2 = np.sum(u * u, axis=0)
    return basis.integrate(mag2 * mag2) ** 0.25


def norms(coeffs: CoefficientVector) -> Norms:
    d, b = coeffs.d, coeffs.basis
    h1sq = float(np.sum(b.lam * d * d))
    return Norms(
        l2=float(np.sqrt(np.sum(d * d))),
        h1=math.sqrt(h1sq),
        dissipation=0.5 * h1sq,
        l4=l4_norm(b, d),
    )


def project_function(
    field_fn: Callable[[list[np.ndarray]], np.ndarray],
    basis: BasisSpec,
    tol: float = 1e-8,
) -> CoefficientVector:
    """L2 projection of a closed-form field onto the basis.

    ``field_fn`` receives the ``ij``-indexed coordinate arrays and returns an
    array of shape ``(N, n, ...)``.

    Raises
    ------
    ProjectionError
        If the field has a nonzero mean or divergence above ``tol``.
    """
    N, n = basis.N, basis.grid_size
    u = np.asarray(field_fn(basis.grid), dtype=float)
    if u.shape != (N,) + (n,) * N:
        raise ProjectionError(f"field has shape {u.shape}, expected {(N,) + (n,) * N}")
    axes = tuple(range(1, N + 1))
    mean = np.abs(u.mean(axis=axes)).max()
    if mean > tol:
        raise ProjectionError(f"field mean {mean:.3e} exceeds {tol:g}")
    k = np.fft.fftfreq(n, 1.0 / n)
    uh = np.fft.fftn(u, axes=axes)
    div_h = np.zeros((n,) * N, dtype=complex)
    for c in range(N):
        shape = [1] * N
        shape[c] = n
        div_h += 1j * k.reshape(shape) * uh[c]
    div = np.abs(np.fft.ifftn(div_h)).max()
    if div > tol:
        raise ProjectionError(f"field divergence {div:.3e} exceeds {tol:g}")
    return CoefficientVector(basis, basis.vector_modal(u))


def taylor_green(X: list[np.ndarray]) -> np.ndarray:
    """The vortex ``(cos x sin y, -sin x cos y)``."""
    x, y = X[0], X[1]
    return np.stack([np.cos(x) * np.sin(y), -np.sin(x) * np.cos(y)])


def random_coefficients(
    basis: BasisSpec, seed: int, slope: float = -1.0, energy: float = 1.0
) -> CoefficientVector:
    """Gaussian coefficients with shell amplitude ``|xi|**slope``, scaled to ``||u||_2^2 = energy``.

    Uses the counter-based Philox generator so a seed names the state.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    d = rng.standard_normal(basis.M) * np.sqrt(basis.lam) ** slope
    norm2 = float(d @ d)
    if norm2 > 0:
        d *= math.sqrt(energy / norm2)
    return CoefficientVector(basis, d)
