# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled positive-P stepper: RK4 drift plus Ito noise increment per step."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite
from libc.stdlib cimport malloc, free

cdef extern from "complex.h" nogil:
    double complex conj(double complex)
    double creal(double complex)
    double cimag(double complex)

ctypedef double complex cplx


cdef inline double _abs2(cplx z) noexcept nogil:
    return creal(z) * creal(z) + cimag(z) * cimag(z)

cdef inline void _drift(int M, const cplx* lin, const double* kerr,
                        const cplx* drv, cplx* a, cplx* b, cplx* da, cplx* db) noexcept nogil:
    cdef int i, j
    cdef cplx sa, sb
    cdef cplx I = 1j
    for i in range(M):
        sa = 0
        sb = 0
        for j in range(M):
            sa = sa + lin[i * M + j] * a[j]
            sb = sb + conj(lin[i * M + j]) * b[j]
        da[i] = sa - 2 * I * kerr[i] * a[i] * a[i] * b[i] - I * drv[i]
        db[i] = sb + 2 * I * kerr[i] * b[i] * b[i] * a[i] + I * conj(drv[i])


def propagate(cplx[:, ::1] alpha0, cplx[:, ::1] beta0, double[:, :, ::1] noise,
              cplx[:, ::1] lin, double[::1] kerr, cplx[::1] kerr_amp, double[::1] gain_amp,
              cplx[:, ::1] drive, double dt, int record_every, double escape):
    cdef int K = alpha0.shape[0]
    cdef int M = alpha0.shape[1]
    cdef int S = noise.shape[1]
    cdef int Q = noise.shape[2]
    cdef int R = S // record_every + 1
    cdef bint has_gain = Q >= 4 * M
    out_a_np = np.full((K, R, M), np.nan + 0j, dtype=np.complex128)
    out_b_np = np.full((K, R, M), np.nan + 0j, dtype=np.complex128)
    escaped_np = np.zeros(K, dtype=np.uint8)
    cdef cplx[:, :, ::1] out_a = out_a_np
    cdef cplx[:, :, ::1] out_b = out_b_np
    cdef unsigned char[::1] escaped = escaped_np
    cdef cplx* buf = <cplx*> malloc(14 * M * sizeof(cplx))
    if buf == NULL:
        raise MemoryError()
    cdef cplx *a = buf
    cdef cplx *b = buf + M
    cdef cplx *ta = buf + 2 * M
    cdef cplx *tb = buf + 3 * M
    cdef cplx *k1a = buf + 4 * M
    cdef cplx *k1b = buf + 5 * M
    cdef cplx *k2a = buf + 6 * M
    cdef cplx *k2b = buf + 7 * M
    cdef cplx *k3a = buf + 8 * M
    cdef cplx *k3b = buf + 9 * M
    cdef cplx *k4a = buf + 10 * M
    cdef cplx *k4b = buf + 11 * M
    cdef cplx *a0 = buf + 12 * M
    cdef cplx *b0 = buf + 13 * M
    cdef int k, s, i, r
    cdef double sq = sqrt(dt)
    cdef double h = dt
    cdef cplx I = 1j
    cdef bint bad
    cdef double esc2 = escape * escape
    try:
        with nogil:
            for k in range(K):
                for i in range(M):
                    a[i] = alpha0[k, i]
                    b[i] = beta0[k, i]
                    out_a[k, 0, i] = a[i]
                    out_b[k, 0, i] = b[i]
                for s in range(S):
                    for i in range(M):
                        a0[i] = a[i]
                        b0[i] = b[i]
                    _drift(M, &lin[0, 0], &kerr[0], &drive[2 * s, 0], a, b, k1a, k1b)
                    for i in range(M):
                        ta[i] = a[i] + 0.5 * h * k1a[i]
                        tb[i] = b[i] + 0.5 * h * k1b[i]
                    _drift(M, &lin[0, 0], &kerr[0], &drive[2 * s + 1, 0], ta, tb, k2a, k2b)
                    for i in range(M):
                        ta[i] = a[i] + 0.5 * h * k2a[i]
                        tb[i] = b[i] + 0.5 * h * k2b[i]
                    _drift(M, &lin[0, 0], &kerr[0], &drive[2 * s + 1, 0], ta, tb, k3a, k3b)
                    for i in range(M):
                        ta[i] = a[i] + h * k3a[i]
                        tb[i] = b[i] + h * k3b[i]
                    _drift(M, &lin[0, 0], &kerr[0], &drive[2 * s + 2, 0], ta, tb, k4a, k4b)
                    bad = False
                    for i in range(M):
                        a[i] = a[i] + (h / 6.0) * (k1a[i] + 2 * k2a[i] + 2 * k3a[i] + k4a[i])
                        b[i] = b[i] + (h / 6.0) * (k1b[i] + 2 * k2b[i] + 2 * k3b[i] + k4b[i])
                        a[i] = a[i] + kerr_amp[i] * a0[i] * (noise[k, s, i] * sq)
                        b[i] = b[i] + conj(kerr_amp[i]) * b0[i] * (noise[k, s, M + i] * sq)
                        if has_gain:
                            a[i] = a[i] + gain_amp[i] * sq * (noise[k, s, 2 * M + i] + I * noise[k, s, 3 * M + i])
                            b[i] = b[i] + gain_amp[i] * sq * (noise[k, s, 2 * M + i] - I * noise[k, s, 3 * M + i])
                        if not (isfinite(creal(a[i])) and isfinite(cimag(a[i]))
                                and isfinite(creal(b[i])) and isfinite(cimag(b[i]))) \
                                or _abs2(a[i]) > esc2 or _abs2(b[i]) > esc2:
                            bad = True
                    if bad:
                        escaped[k] = 1
                        break
                    if (s + 1) % record_every == 0:
                        r = (s + 1) // record_every
                        for i in range(M):
                            out_a[k, r, i] = a[i]
                            out_b[k, r, i] = b[i]
    finally:
        free(buf)
    return out_a_np, out_b_np, escaped_np.astype(bool)
