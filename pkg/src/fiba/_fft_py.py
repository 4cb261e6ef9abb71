"""Pure-numpy mixed-radix FFT over the last axis.

Used when the compiled ``_fftcore`` extension is unavailable (or disabled with
``FIBA_PURE_PYTHON=1``). The recursion is decimation-in-time on the smallest
prime factor, vectorised across every leading axis, so a whole image channel
is transformed in one call. Prime lengths above ``BLUESTEIN_MIN`` go through
Bluestein's chirp-z algorithm on a power-of-two grid.
"""
from functools import lru_cache

import numpy as np

BLUESTEIN_MIN = 64


@lru_cache(maxsize=None)
def smallest_factor(n):
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(p, sign):
    k = np.arange(p)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / p)


@lru_cache(maxsize=None)
def _twiddles(p, m, sign):
    # w[r, k] = exp(sign * 2*pi*i * r*k / (p*m))
    return np.exp(sign * 2j * np.pi * np.outer(np.arange(p), np.arange(m)) / (p * m))


@lru_cache(maxsize=None)
def _chirp(n, sign):
    k = np.arange(n)
    # k*k mod 2n keeps the angle argument small for large n
    return np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)


def _bluestein(x, sign):
    n = x.shape[-1]
    size = 1 << (2 * n - 2).bit_length()
    w = _chirp(n, sign)
    a = np.zeros(x.shape[:-1] + (size,), dtype=complex)
    a[..., :n] = x * w
    b = np.zeros(size, dtype=complex)
    b[:n] = np.conj(w)
    b[size - n + 1:] = np.conj(w[1:])[::-1]
    conv = _fft(_fft(a, -1) * _fft(b, -1), 1) / size
    return conv[..., :n] * w


def _fft(x, sign):
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = smallest_factor(n)
    if p == n:
        if n > BLUESTEIN_MIN:
            return _bluestein(x, sign)
        return x @ _dft_matrix(n, sign)
    m = n // p
    lead = x.shape[:-1]
    # sub[..., r, k] = x[..., r + p*k]
    sub = x.reshape(lead + (m, p)).swapaxes(-1, -2)
    y = _fft(np.ascontiguousarray(sub), sign) * _twiddles(p, m, sign)
    # out[..., q*m + k] = sum_r W_p^{rq} y[..., r, k]
    out = np.einsum("qr,...rk->...qk", _dft_matrix(p, sign), y)
    return out.reshape(lead + (n,))


def fft_lastaxis(x, inverse=False):
    """Unnormalised DFT (or conjugate-sign DFT when ``inverse``) along the last axis."""
    x = np.asarray(x, dtype=complex)
    return _fft(x, 1 if inverse else -1)
