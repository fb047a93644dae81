# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pointwise kernels mirroring ``_kernels_py``."""

from libc.math cimport sqrt, pow, log1p


cdef inline double _visc(int code, double r, double a, double mu, double gamma,
                         double beta, double c) noexcept nogil:
    if code == 0:
        return pow(r, -a)
    elif code == 1:
        return pow(mu + r * r, -0.5 * a)
    elif code == 2:
        return gamma + pow(r, -a)
    elif code == 3:
        if r <= gamma:
            return pow(r, -a) * pow(log1p(r), -beta)
        return pow(log1p(gamma), -beta) * pow(r, -a)
    return c


def viscosity(int code, double[::1] params, double[::1] r):
    import numpy as np
    if code < 0 or code > 4:
        raise ValueError(f"kernel has no closed form for kind code {code}")
    out = np.empty(r.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t p
    cdef double a = params[0], mu = params[1], g = params[2], b = params[3], c = params[4]
    with nogil:
        for p in range(r.shape[0]):
            o[p] = _visc(code, r[p], a, mu, g, b, c)
    return out


def strain_magnitude_sq(double[:, ::1] S):
    import numpy as np
    out = np.empty(S.shape[1])
    cdef double[::1] o = out
    cdef Py_ssize_t p
    with nogil:
        if S.shape[0] == 3:
            for p in range(S.shape[1]):
                o[p] = S[0, p] * S[0, p] + 2.0 * S[1, p] * S[1, p] + S[2, p] * S[2, p]
        else:
            for p in range(S.shape[1]):
                o[p] = (S[0, p] * S[0, p] + S[3, p] * S[3, p] + S[5, p] * S[5, p]
                        + 2.0 * (S[1, p] * S[1, p] + S[2, p] * S[2, p] + S[4, p] * S[4, p]))
    return out


def stress(int code, double[::1] params, double eps, double[:, ::1] S,
           double[:, ::1] U, double[:, ::1] T, double[::1] Fext):
    if Fext.shape[0] == 0 and (code < 0 or code > 4):
        raise ValueError(f"kernel has no closed form for kind code {code}")
    cdef Py_ssize_t p, P = S.shape[1]
    cdef int nsym = S.shape[0]
    cdef bint conv = U.shape[0] > 0
    cdef bint ext = Fext.shape[0] > 0
    cdef double a = params[0], mu = params[1], g = params[2], b = params[3], c = params[4]
    cdef double d2, F, pairing = 0.0, fmax = 0.0
    with nogil:
        for p in range(P):
            if nsym == 3:
                d2 = S[0, p] * S[0, p] + 2.0 * S[1, p] * S[1, p] + S[2, p] * S[2, p]
            else:
                d2 = (S[0, p] * S[0, p] + S[3, p] * S[3, p] + S[5, p] * S[5, p]
                      + 2.0 * (S[1, p] * S[1, p] + S[2, p] * S[2, p] + S[4, p] * S[4, p]))
            F = Fext[p] if ext else _visc(code, sqrt(eps + d2), a, mu, g, b, c)
            # NaN-propagating max
            if not (F <= fmax):
                fmax = F
            pairing += F * d2
            if nsym == 3:
                T[0, p] = -F * S[0, p]
                T[1, p] = -F * S[1, p]
                T[2, p] = -F * S[2, p]
                if conv:
                    T[0, p] += U[0, p] * U[0, p]
                    T[1, p] += U[0, p] * U[1, p]
                    T[2, p] += U[1, p] * U[1, p]
            else:
                T[0, p] = -F * S[0, p]
                T[1, p] = -F * S[1, p]
                T[2, p] = -F * S[2, p]
                T[3, p] = -F * S[3, p]
                T[4, p] = -F * S[4, p]
                T[5, p] = -F * S[5, p]
                if conv:
                    T[0, p] += U[0, p] * U[0, p]
                    T[1, p] += U[0, p] * U[1, p]
                    T[2, p] += U[0, p] * U[2, p]
                    T[3, p] += U[1, p] * U[1, p]
                    T[4, p] += U[1, p] * U[2, p]
                    T[5, p] += U[2, p] * U[2, p]
    return pairing, fmax


def scatter(double[::1] d, double[::1] flip, double complex[:, ::1] table,
            Py_ssize_t[::1] loc, Py_ssize_t[::1] loc_neg, double scale,
            double complex[:, ::1] out):
    cdef Py_ssize_t p, q, P = table.shape[0], Q = table.shape[1], H = out.shape[1]
    cdef double complex a, v
    with nogil:
        for q in range(Q):
            for p in range(H):
                out[q, p] = 0
        for p in range(P):
            a = scale * (d[2 * p] - 1j * flip[p] * d[2 * p + 1])
            for q in range(Q):
                v = table[p, q] * a
                out[q, loc[p]] += v
                if loc_neg[p] >= 0:
                    out[q, loc_neg[p]] += v.conjugate()


def gather(double complex[:, ::1] spec, Py_ssize_t[::1] loc, double[:, ::1] ktab,
           double[::1] flip, double scale, bint vector, double[::1] out):
    cdef Py_ssize_t p, q, P = ktab.shape[0], Q = ktab.shape[1]
    cdef double complex s
    with nogil:
        for p in range(P):
            s = 0
            for q in range(Q):
                s = s + ktab[p, q] * spec[q, loc[p]]
            if vector:
                out[2 * p] = scale * s.real
                out[2 * p + 1] = -scale * flip[p] * s.imag
            else:
                out[2 * p] = scale * s.imag
                out[2 * p + 1] = scale * flip[p] * s.real


cdef class Plan2D:
    """Fused nonlinear right-hand side for ``N = 2`` by direct separable DFTs.

    The basis is band-limited to ``|k|_inf <= m``, so synthesis and analysis
    touch only ``(2m + 1) x (m + 1)`` frequencies and need no FFT.

    Field rows are ``u_0, u_1, D_00, D_01, D_11``.
    """

    cdef int n, m, P
    cdef double[:, ::1] cx, sx, cy, sy
    cdef Py_ssize_t[::1] k1, k2
    cdef double[:, ::1] tre, tim, ktab
    cdef double[::1] flip
    cdef double synth_scale, anal_scale
    cdef double[:, :, ::1] Are, Aim, Cre, Cim, G, T, Rre, Rim

    def __init__(self, int n, int m, k1, k2, table, ktab, flip,
                 double synth_scale, double anal_scale):
        import numpy as np
        self.n = n
        self.m = m
        self.P = len(k1)
        x = np.arange(n) * (2.0 * np.pi / n)
        kf = np.arange(-m, m + 1)
        kh = np.arange(m + 1)
        self.cx = np.ascontiguousarray(np.cos(np.outer(x, kf)))
        self.sx = np.ascontiguousarray(np.sin(np.outer(x, kf)))
        # stored (k, point) so the inner loops over grid points are contiguous
        self.cy = np.ascontiguousarray(np.cos(np.outer(kh, x)))
        self.sy = np.ascontiguousarray(np.sin(np.outer(kh, x)))
        self.k1 = np.ascontiguousarray(np.asarray(k1) + m, dtype=np.intp)
        self.k2 = np.ascontiguousarray(k2, dtype=np.intp)
        table = np.asarray(table)
        self.tre = np.ascontiguousarray(table.real)
        self.tim = np.ascontiguousarray(table.imag)
        self.ktab = np.ascontiguousarray(ktab, dtype=float)
        self.flip = np.ascontiguousarray(flip, dtype=float)
        self.synth_scale = synth_scale
        self.anal_scale = anal_scale
        self.Are = np.zeros((5, 2 * m + 1, m + 1))
        self.Aim = np.zeros((5, 2 * m + 1, m + 1))
        self.Cre = np.zeros((5, 2 * m + 1, n))
        self.Cim = np.zeros((5, 2 * m + 1, n))
        self.G = np.zeros((5, n, n))
        self.T = np.zeros((3, n, n))
        self.Rre = np.zeros((3, n, m + 1))
        self.Rim = np.zeros((3, n, m + 1))

    def fields(self):
        """Grid values from the last evaluation, shape ``(5, n, n)``."""
        import numpy as np
        return np.asarray(self.G).copy()

    def evaluate(self, double[::1] d, int code, double[::1] params, double eps,
                 bint conv, double[::1] out):
        """Write the viscous (+ convective) modal vector into ``out``.

        Returns ``(sum F |D|^2, max F)`` over grid points.
        """
        if code < 0 or code > 4:
            raise ValueError(f"kernel has no closed form for kind code {code}")
        cdef int n = self.n, m = self.m, P = self.P, W = 2 * m + 1, H = m + 1
        cdef Py_ssize_t p, q, a, b, k, kk, i1, i2
        cdef int qlo = 0 if conv else 2
        cdef double ar, ai, vr, vi, cr, ci, acc, d2, F, pairing = 0.0, fmax = 0.0
        cdef double s00, s01, s11, rr, ri, sre, sim, tr, ti
        cdef double pa = params[0], pmu = params[1], pg = params[2], pb = params[3], pc = params[4]
        with nogil:
            # scatter coefficients to the frequency block
            for q in range(qlo, 5):
                for k in range(W):
                    for kk in range(H):
                        self.Are[q, k, kk] = 0.0
                        self.Aim[q, k, kk] = 0.0
            for p in range(P):
                ar = self.synth_scale * d[2 * p]
                ai = -self.synth_scale * self.flip[p] * d[2 * p + 1]
                i1 = self.k1[p]
                i2 = self.k2[p]
                for q in range(qlo, 5):
                    vr = self.tre[p, q] * ar - self.tim[p, q] * ai
                    vi = self.tre[p, q] * ai + self.tim[p, q] * ar
                    self.Are[q, i1, i2] += vr
                    self.Aim[q, i1, i2] += vi
            # transform along y, then along x with the real part doubled
            for q in range(qlo, 5):
                for k in range(W):
                    for b in range(n):
                        self.Cre[q, k, b] = 0.0
                        self.Cim[q, k, b] = 0.0
                    for kk in range(H):
                        ar = self.Are[q, k, kk]
                        ai = self.Aim[q, k, kk]
                        if ar == 0.0 and ai == 0.0:
                            continue
                        for b in range(n):
                            self.Cre[q, k, b] += ar * self.cy[kk, b] - ai * self.sy[kk, b]
                            self.Cim[q, k, b] += ar * self.sy[kk, b] + ai * self.cy[kk, b]
                for a in range(n):
                    for b in range(n):
                        self.G[q, a, b] = 0.0
                    for k in range(W):
                        cr = 2.0 * self.cx[a, k]
                        ci = 2.0 * self.sx[a, k]
                        for b in range(n):
                            self.G[q, a, b] += cr * self.Cre[q, k, b] - ci * self.Cim[q, k, b]
            # pointwise stress
            for a in range(n):
                for b in range(n):
                    s00 = self.G[2, a, b]
                    s01 = self.G[3, a, b]
                    s11 = self.G[4, a, b]
                    d2 = s00 * s00 + 2.0 * s01 * s01 + s11 * s11
                    F = _visc(code, sqrt(eps + d2), pa, pmu, pg, pb, pc)
                    if not (F <= fmax):
                        fmax = F
                    pairing += F * d2
                    self.T[0, a, b] = -F * s00
                    self.T[1, a, b] = -F * s01
                    self.T[2, a, b] = -F * s11
                    if conv:
                        self.T[0, a, b] += self.G[0, a, b] * self.G[0, a, b]
                        self.T[1, a, b] += self.G[0, a, b] * self.G[1, a, b]
                        self.T[2, a, b] += self.G[1, a, b] * self.G[1, a, b]
            # forward transform along y for all retained k2
            for q in range(3):
                for a in range(n):
                    for kk in range(H):
                        rr = 0.0
                        ri = 0.0
                        for b in range(n):
                            rr = rr + self.T[q, a, b] * self.cy[kk, b]
                            ri = ri - self.T[q, a, b] * self.sy[kk, b]
                        self.Rre[q, a, kk] = rr
                        self.Rim[q, a, kk] = ri
            # along x only at the slots, then contract with D(w)
            for p in range(P):
                i1 = self.k1[p]
                i2 = self.k2[p]
                sre = 0.0
                sim = 0.0
                for q in range(3):
                    tr = 0.0
                    ti = 0.0
                    for a in range(n):
                        tr = tr + self.cx[a, i1] * self.Rre[q, a, i2] + self.sx[a, i1] * self.Rim[q, a, i2]
                        ti = ti + self.cx[a, i1] * self.Rim[q, a, i2] - self.sx[a, i1] * self.Rre[q, a, i2]
                    sre = sre + self.ktab[p, q] * tr
                    sim = sim + self.ktab[p, q] * ti
                out[2 * p] = self.anal_scale * sim
                out[2 * p + 1] = self.anal_scale * self.flip[p] * sre
        return pairing, fmax
