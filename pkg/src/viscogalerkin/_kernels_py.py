"""Pure-numpy pointwise kernels; the reference for the compiled versions."""

from __future__ import annotations

import numpy as np

_PAIRS = {
    3: ((0, 0), (0, 1), (1, 1)),
    6: ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)),
}


def viscosity(code: int, params: np.ndarray, r: np.ndarray) -> np.ndarray:
    a, mu, gamma, beta, c = (float(v) for v in params)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if code == 0:
            return np.power(r, -a)
        if code == 1:
            return np.power(mu + r * r, -0.5 * a)
        if code == 2:
            return gamma + np.power(r, -a)
        if code == 3:
            ra = np.power(r, -a)
            low = ra * np.power(np.log1p(r), -beta)
            return np.where(r <= gamma, low, np.log1p(gamma) ** -beta * ra)
        if code == 4:
            return np.full_like(r, c)
    raise ValueError(f"kernel has no closed form for kind code {code}")


def strain_magnitude_sq(S: np.ndarray) -> np.ndarray:
    """Pointwise ``|D|^2`` for symmetric storage ``(S, P)``."""
    out = np.zeros(S.shape[1])
    for q, (c, j) in enumerate(_PAIRS[S.shape[0]]):
        out += (1.0 if c == j else 2.0) * S[q] * S[q]
    return out


def stress(code, params, eps, S, U, T, Fext):
    """Write ``u (x) u - F(sqrt(eps + |D|^2)) D`` into ``T``.

    ``U`` with zero rows drops the convective part; a non-empty ``Fext``
    supplies the viscosity field directly.  Returns ``(sum F |D|^2, max F)``.
    """
    d2 = strain_magnitude_sq(S)
    F = Fext if Fext.shape[0] else viscosity(code, params, np.sqrt(eps + d2))
    np.multiply(S, -F, out=T)
    if U.shape[0]:
        for q, (c, j) in enumerate(_PAIRS[S.shape[0]]):
            T[q] += U[c] * U[j]
    with np.errstate(invalid="ignore"):
        pairing = float(np.sum(F * d2))
    return pairing, float(F.max()) if F.size else 0.0


def scatter(d, flip, table, loc, loc_neg, scale, out):
    """Fill the half spectrum ``out (Q, H)`` from coefficients ``d``.

    Slot ``p`` holds ``scale * table[p, q] * (d[2p] - i flip[p] d[2p+1])`` at
    ``loc[p]`` and its conjugate at ``loc_neg[p]`` when that is ``>= 0``.
    Slots may share a location; contributions add.
    """
    a = scale * (d[0::2] - 1j * flip * d[1::2])
    v = (table * a[:, None]).T
    out[...] = 0
    np.add.at(out, (slice(None), loc), v)
    neg = loc_neg >= 0
    np.add.at(out, (slice(None), loc_neg[neg]), np.conj(v[:, neg]))


def gather(spec, loc, ktab, flip, scale, vector, out):
    """Modal pairing from a forward half spectrum ``spec (Q, H)``.

    ``vector`` selects pairing with ``w_i`` instead of ``D(w_i)``.
    """
    s = np.einsum("pq,qp->p", ktab, spec[:, loc])
    if vector:
        out[0::2] = scale * s.real
        out[1::2] = -scale * flip * s.imag
    else:
        out[0::2] = scale * s.imag
        out[1::2] = scale * flip * s.real
