# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled energy/flux kernel.  Same contract as ``_kernels_py.energy_flux``.

The grid is swept one last-axis row at a time.  For each row the forward
differences go into a small buffer, the power laws are evaluated in a
branch-free loop the compiler can vectorize, and the fluxes are scattered
straight into the gradient (they are never stored globally).  Energy
densities are reduced per row and the row partials summed by numpy.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow, fabs, exp, log, log1p, expm1

cnp.import_array()

DEF MAXDIM = 16


cdef inline void _diff_row(const double* uv, Py_ssize_t k0, Py_ssize_t m, Py_ssize_t st,
                           bint top, bint last_axis, double ih, double* out) noexcept nogil:
    cdef Py_ssize_t c
    if last_axis:
        for c in range(m - 1):
            out[c] = (uv[k0 + c + 1] - uv[k0 + c]) * ih
        out[m - 1] = -uv[k0 + m - 1] * ih
    elif top:
        for c in range(m):
            out[c] = -uv[k0 + c] * ih
    else:
        for c in range(m):
            out[c] = (uv[k0 + c + st] - uv[k0 + c]) * ih


cdef inline void _scatter_row(double* gr, const double* f, Py_ssize_t k0, Py_ssize_t m,
                              Py_ssize_t st, bint top, bint last_axis, double ih) noexcept nogil:
    cdef Py_ssize_t c
    for c in range(m):
        gr[k0 + c] -= f[c] * ih
    if last_axis:
        for c in range(m - 1):
            gr[k0 + c + 1] += f[c] * ih
    elif not top:
        for c in range(m):
            gr[k0 + c + st] += f[c] * ih


def energy_flux(u, h, exps, int n1, double delta, bint want_grad=True):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] uf = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef int N = u.ndim
    if N > MAXDIM:
        raise ValueError(f"at most {MAXDIM} dimensions supported")
    cdef Py_ssize_t n = uf.shape[0]
    cdef Py_ssize_t shape[MAXDIM]
    cdef Py_ssize_t stride[MAXDIM]
    cdef Py_ssize_t coord[MAXDIM]
    cdef double ih[MAXDIM]
    cdef double ev[MAXDIM]
    cdef double dq[MAXDIM]
    cdef bint top[MAXDIM]
    cdef int i, nterms = 1 + N - n1
    cdef Py_ssize_t c, row, k0, m, nrows, acc = 1
    for i in range(N - 1, -1, -1):
        shape[i] = u.shape[i]
        stride[i] = acc
        acc *= shape[i]
        ih[i] = 1.0 / float(h[i])
        ev[i] = float(exps[i])
        dq[i] = pow(delta, ev[i]) if delta > 0.0 else 0.0
        coord[i] = 0
    m = shape[N - 1]
    nrows = n // m

    cdef cnp.ndarray[cnp.float64_t, ndim=2] part = np.zeros((nrows, nterms))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gout = np.zeros(n if want_grad else 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gbuf = np.empty((N, m))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sbuf = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wbuf = np.empty(m)
    cdef double* P = <double*> part.data
    cdef double* gr = <double*> gout.data
    cdef const double* uv = <double*> uf.data
    cdef double* G = <double*> gbuf.data
    cdef double* S = <double*> sbuf.data
    cdef double* W = <double*> wbuf.data
    cdef double* Gi
    cdef double d2 = delta * delta
    cdef double r = ev[0] if n1 > 0 else 1.0
    cdef double dr = pow(delta, r) if n1 > 0 else 0.0
    cdef double e, q, a, t, sacc, x

    with nogil:
        for row in range(nrows):
            k0 = row * m
            for i in range(N - 1):
                top[i] = coord[i] == shape[i] - 1
            top[N - 1] = False
            for i in range(N):
                _diff_row(uv, k0, m, stride[i], top[i], i == N - 1, ih[i], G + i * m)

            if n1 > 0:
                for c in range(m):
                    S[c] = 0.0
                for i in range(n1):
                    Gi = G + i * m
                    for c in range(m):
                        S[c] += Gi[c] * Gi[c]
                e = 0.5 * r - 1.0
                sacc = 0.0
                for c in range(m):
                    a = S[c] + d2
                    t = a if a > 0.0 else 1.0
                    x = exp(e * log(t))
                    W[c] = x if a > 0.0 else 0.0
                    if delta > 0.0:
                        # delta^r ((1 + g^2/delta^2)^(r/2) - 1) without cancellation
                        sacc += dr * expm1(0.5 * r * log1p(S[c] / d2))
                    else:
                        sacc += W[c] * a
                P[row * nterms] = sacc / r
                if want_grad:
                    for i in range(n1):
                        Gi = G + i * m
                        for c in range(m):
                            Gi[c] *= W[c]
                        _scatter_row(gr, Gi, k0, m, stride[i], top[i], i == N - 1, ih[i])

            for i in range(n1, N):
                Gi = G + i * m
                q = ev[i]
                sacc = 0.0
                if q == 2.0:
                    for c in range(m):
                        sacc += Gi[c] * Gi[c]
                    sacc *= 0.5
                elif q > 2.0 or delta == 0.0:
                    e = q - 2.0
                    for c in range(m):
                        a = fabs(Gi[c])
                        t = a if a > 0.0 else 1.0
                        x = exp(e * log(t))
                        x = x if a > 0.0 else 0.0
                        sacc += x * a * a
                        Gi[c] *= x
                    sacc /= q
                else:
                    e = 0.5 * q - 1.0
                    for c in range(m):
                        a = Gi[c] * Gi[c]
                        x = exp(e * log(a + d2))
                        sacc += dq[i] * expm1(0.5 * q * log1p(a / d2))
                        Gi[c] *= x
                    sacc /= q
                P[row * nterms + 1 + i - n1] = sacc
                if want_grad:
                    _scatter_row(gr, Gi, k0, m, stride[i], top[i], i == N - 1, ih[i])

            i = N - 2
            while i >= 0:
                coord[i] += 1
                if coord[i] < shape[i]:
                    break
                coord[i] = 0
                i -= 1

    terms = part.sum(axis=0)
    if not want_grad:
        return terms, None
    return terms, gout.reshape(u.shape)
