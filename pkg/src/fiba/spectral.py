"""Exact 2-D DFT analysis/synthesis and amplitude-phase decomposition.

Conventions: the forward transform is unnormalised with the DC bin at index
``(0, 0)``; the inverse carries the ``1/(H*W)`` factor. Multi-channel arrays are
laid out ``H x W x C`` and each channel is transformed independently.

The 1-D kernel is the compiled ``_fftcore`` extension when it is importable,
otherwise the numpy fallback in ``_fft_py``. Set ``FIBA_PURE_PYTHON=1`` to force
the fallback.
"""
import os
from dataclasses import dataclass

import numpy as np

from fiba import _fft_py

BACKEND = "python"
_fft_lastaxis = _fft_py.fft_lastaxis
if os.environ.get("FIBA_PURE_PYTHON") != "1":
    try:
        from fiba import _fftcore
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        _fft_lastaxis = _fftcore.fft_lastaxis

_BACKENDS = {"python": _fft_py.fft_lastaxis}
if BACKEND == "compiled":
    _BACKENDS["compiled"] = _fftcore.fft_lastaxis


def available_backends():
    return sorted(_BACKENDS)


def _check_finite(a, what):
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{what}: expected a 2-D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what}: input contains non-finite values")
    return a


def _transform2(a, inverse, backend):
    kernel = _BACKENDS[backend] if backend else _fft_lastaxis
    rows = kernel(np.asarray(a, dtype=complex), inverse)
    return kernel(np.ascontiguousarray(rows.T), inverse).T


def dft2(channel, backend=None):
    """Forward 2-D DFT of one real or complex ``H x W`` grid.

    ``out[m, n] = sum_{h,w} x[h, w] * exp(-2j*pi*(h*m/H + w*n/W))``
    """
    channel = _check_finite(channel, "dft2")
    return np.ascontiguousarray(_transform2(channel, False, backend))


def idft2(spectrum, backend=None):
    """Inverse of :func:`dft2`, including the ``1/(H*W)`` normalisation."""
    spectrum = _check_finite(spectrum, "idft2")
    h, w = spectrum.shape
    return np.ascontiguousarray(_transform2(spectrum, True, backend)) / (h * w)


def dft2_image(image, backend=None):
    """Channel-wise :func:`dft2` of an ``H x W x C`` array."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[:, :, None]
    return np.stack([dft2(image[:, :, c], backend) for c in range(image.shape[2])], axis=2)


def idft2_image(spectrum, backend=None):
    return np.stack([idft2(spectrum[:, :, c], backend) for c in range(spectrum.shape[2])], axis=2)


@dataclass(frozen=True)
class AmplitudePhase:
    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ValueError("amplitude and phase shapes differ")


def decompose(spectrum):
    """Split a complex spectrum into modulus and argument.

    Bins with zero modulus get phase 0, never NaN. Phase lies in (-pi, pi].
    """
    spectrum = np.asarray(spectrum, dtype=complex)
    if not np.all(np.isfinite(spectrum)):
        raise ValueError("decompose: spectrum contains non-finite values")
    amplitude = np.abs(spectrum)
    phase = np.where(amplitude > 0, np.angle(spectrum), 0.0)
    # np.angle returns -pi for (-x, -0.0); fold onto the half-open interval
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return AmplitudePhase(amplitude, phase)


def recompose(ap):
    if np.any(ap.amplitude < 0):
        raise ValueError("recompose: negative amplitude")
    return ap.amplitude * np.exp(1j * ap.phase)
