# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mixed-radix FFT over the last axis of a 2-D complex array."""
import numpy as np

from libc.math cimport cos, sin, M_PI
from libc.stdlib cimport malloc, free

ctypedef double complex cplx

cdef enum:
    MAX_RADIX = 64


cdef void _work(cplx* out, const cplx* x, Py_ssize_t s, Py_ssize_t* factors,
                Py_ssize_t n, Py_ssize_t top, const cplx* roots, cplx* tmp) noexcept nogil:
    cdef Py_ssize_t p = factors[0]
    cdef Py_ssize_t m = n // p
    cdef Py_ssize_t r, q, k, e
    cdef cplx acc
    if m == 1:
        for r in range(p):
            out[r] = x[r * s]
    else:
        for r in range(p):
            _work(out + r * m, x + r * s, s * p, factors + 1, m, top, roots, tmp)
    # top // n == s, so W_n^e lives at roots[e * s]
    cdef cplx t0, t1, t2, t3, a, b, c, d
    cdef cplx wq = roots[top // 4] if top % 4 == 0 else 0
    if p == 2:
        for k in range(m):
            t0 = out[k]
            t1 = out[m + k] * roots[k * s]
            out[k] = t0 + t1
            out[m + k] = t0 - t1
    elif p == 4:
        # wq = W_4, i.e. -1j for the forward transform and +1j for the inverse
        for k in range(m):
            t0 = out[k]
            t1 = out[m + k] * roots[k * s]
            t2 = out[2 * m + k] * roots[2 * k * s]
            t3 = out[3 * m + k] * roots[3 * k * s]
            a = t0 + t2
            b = t0 - t2
            c = t1 + t3
            d = (t1 - t3) * wq
            out[k] = a + c
            out[m + k] = b + d
            out[2 * m + k] = a - c
            out[3 * m + k] = b - d
    else:
        e = top // p
        for k in range(m):
            for r in range(p):
                tmp[r] = out[r * m + k] * roots[(r * k * s) % top]
            for q in range(p):
                acc = tmp[0]
                for r in range(1, p):
                    acc = acc + tmp[r] * roots[(r * q * e) % top]
                out[q * m + k] = acc


cdef Py_ssize_t _factorize(Py_ssize_t n, Py_ssize_t* factors):
    cdef Py_ssize_t count = 0, f = 3
    while n % 4 == 0:
        factors[count] = 4
        count += 1
        n //= 4
    if n % 2 == 0:
        factors[count] = 2
        count += 1
        n //= 2
    while n > 1:
        if f * f > n:
            f = n
        if n % f == 0:
            factors[count] = f
            count += 1
            n //= f
        else:
            f += 2
    return count


def largest_factor(Py_ssize_t n):
    cdef Py_ssize_t factors[64]
    cdef Py_ssize_t c = _factorize(n, factors), i, best = 1
    for i in range(c):
        if factors[i] > best:
            best = factors[i]
    return best


def _native(cplx[:, ::1] x, int sign):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((rows, n), dtype=complex)
    cdef cplx[:, ::1] out = out_arr
    if n == 0:
        return out_arr
    cdef Py_ssize_t factors[64]
    _factorize(n, factors)
    cdef cplx* roots = <cplx*> malloc(n * sizeof(cplx))
    cdef cplx* tmp = <cplx*> malloc(MAX_RADIX * sizeof(cplx))
    cdef double ang
    if roots == NULL or tmp == NULL:
        free(roots)
        free(tmp)
        raise MemoryError()
    for j in range(n):
        ang = sign * 2.0 * M_PI * j / n
        roots[j] = cos(ang) + 1j * sin(ang)
    with nogil:
        for i in range(rows):
            if n == 1:
                out[i, 0] = x[i, 0]
            else:
                _work(&out[i, 0], &x[i, 0], 1, factors, n, n, roots, tmp)
    free(roots)
    free(tmp)
    return out_arr


def _bluestein(x, int sign):
    n = x.shape[1]
    size = 1 << (2 * n - 2).bit_length()
    k = np.arange(n)
    w = np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)
    a = np.zeros((x.shape[0], size), dtype=complex)
    a[:, :n] = x * w
    b = np.zeros((1, size), dtype=complex)
    b[0, :n] = np.conj(w)
    b[0, size - n + 1:] = np.conj(w[1:])[::-1]
    fa = _native(a, -1)
    fb = _native(b, -1)
    conv = _native(np.ascontiguousarray(fa * fb), 1) / size
    return conv[:, :n] * w


def fft_lastaxis(x, inverse=False):
    """Unnormalised DFT (or conjugate-sign DFT when ``inverse``) along the last axis."""
    x = np.asarray(x, dtype=complex)
    shape = x.shape
    n = shape[len(shape) - 1]
    flat = np.ascontiguousarray(x.reshape(-1, n))
    sign = 1 if inverse else -1
    if n > 1 and largest_factor(n) > MAX_RADIX:
        out = _bluestein(flat, sign)
    else:
        out = _native(flat, sign)
    return out.reshape(shape)
