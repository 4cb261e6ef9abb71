"""Trigger injection functions: frequency-domain amplitude blending plus the
patch and blended spatial baselines, and trigger preparation."""
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from fiba.spectral import AmplitudePhase, decompose, dft2, idft2, recompose

KINDS = ("fiba", "patch", "blend")
LUMA = np.array([0.299, 0.587, 0.114])


def as_image(x, name="image", min_size=4):
    """Validate and return ``x`` as a float64 ``H x W x C`` array in [0, 1]."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"{name}: expected H x W x C with C in {{1, 3}}, got {a.shape}")
    if a.shape[0] < min_size or a.shape[1] < min_size:
        raise ValueError(f"{name}: height and width must be >= {min_size}, got {a.shape[:2]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite pixels")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name}: pixels outside [0, 1]")
    return a


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    trigger: np.ndarray = None
    alpha: float = 0.15
    beta: float = 0.10
    patch_size: int = 6
    patch_value: float = 1.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 0.5:
            raise ValueError(f"beta must lie in [0, 0.5], got {self.beta}")
        if self.kind == "patch":
            if self.patch_size < 1:
                raise ValueError("patch_size must be positive")
            if not 0.0 <= self.patch_value <= 1.0:
                raise ValueError("patch_value must lie in [0, 1]")
        elif self.trigger is None:
            raise ValueError(f"{self.kind} attack needs a trigger image")
        else:
            object.__setattr__(self, "trigger", as_image(self.trigger, "trigger", min_size=1))

    def with_trigger(self, trigger):
        """Same attack, different key image (used for pseudo triggers)."""
        return replace(self, trigger=trigger, _cache={})

    def prepared_trigger(self, h, w, c):
        key = ("img", h, w, c)
        if key not in self._cache:
            self._cache[key] = prepare_trigger(self.trigger, h, w, c)
        return self._cache[key]

    def trigger_amplitude(self, h, w, c):
        key = ("amp", h, w, c)
        if key not in self._cache:
            t = self.prepared_trigger(h, w, c)
            self._cache[key] = np.stack([np.abs(dft2(t[:, :, k])) for k in range(c)], axis=2)
        return self._cache[key]


def half_width(beta, n):
    # guard against beta*n landing a hair under an integer
    return int(np.floor(beta * n + 1e-9))


@lru_cache(maxsize=64)
def _mask(h, w, beta):
    bh, bw = half_width(beta, h), half_width(beta, w)
    rows = (np.arange(h) + bh) % h <= 2 * bh
    cols = (np.arange(w) + bw) % w <= 2 * bw
    m = np.outer(rows, cols).astype(float)
    m.setflags(write=False)
    return m


def low_freq_mask(h, w, beta):
    """Binary low-frequency mask on the unshifted spectrum (DC at (0, 0)).

    Rows ``-floor(beta*h) .. +floor(beta*h)`` (inclusive, taken modulo ``h``) and
    likewise for columns are ones, which makes the mask exactly even-symmetric.
    """
    if h < 4 or w < 4:
        raise ValueError("mask dimensions must be >= 4")
    if not 0.0 <= beta <= 0.5:
        raise ValueError(f"beta must lie in [0, 0.5], got {beta}")
    return _mask(int(h), int(w), float(beta))


def _resize_axis(a, n_out, axis):
    n_in = a.shape[axis]
    if n_in == n_out:
        return a
    # half-pixel centres, edge-clamped
    src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    shape = [1] * a.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(a, lo, axis=axis) * (1 - frac) + np.take(a, hi, axis=axis) * frac


def resize(a, h, w):
    """Bilinear resize of the first two axes (half-pixel centres)."""
    return _resize_axis(_resize_axis(np.asarray(a, dtype=float), h, 0), w, 1)


def prepare_trigger(trigger, target_h, target_w, target_channels):
    """Bilinearly resize ``trigger`` and match its channel count.

    RGB to gray uses the (0.299, 0.587, 0.114) luma weights; gray to RGB
    replicates. A trigger already of the target shape is returned as is.
    """
    # key images may be tiny; only the prepared result has to be a full image
    t = as_image(trigger, "trigger", min_size=1)
    if t.shape == (target_h, target_w, target_channels):
        return t
    t = resize(t, target_h, target_w)
    if t.shape[2] != target_channels:
        if target_channels == 1:
            t = (t @ LUMA)[:, :, None]
        elif target_channels == 3:
            t = np.repeat(t, 3, axis=2)
        else:
            raise ValueError(f"unsupported channel count {target_channels}")
    return np.clip(t, 0.0, 1.0)


def fiba_spectrum(benign, cfg):
    """Per-channel complex image after amplitude blending, before taking the real part.

    Returns ``(raw, ap_benign, amp_poisoned)`` where ``raw`` is the inverse
    transform of the blended amplitude with the benign phase.
    """
    x = as_image(benign, "benign")
    h, w, c = x.shape
    amp_t = cfg.trigger_amplitude(h, w, c)
    if amp_t.shape != x.shape:
        raise ValueError("trigger/benign channel mismatch after preparation")
    mask = low_freq_mask(h, w, cfg.beta)
    raw = np.empty(x.shape, dtype=complex)
    amps, phases, amp_p = [], [], np.empty(x.shape)
    for k in range(c):
        ap = decompose(dft2(x[:, :, k]))
        blended = ((1 - cfg.alpha) * ap.amplitude + cfg.alpha * amp_t[:, :, k]) * mask
        amp_p[:, :, k] = blended + ap.amplitude * (1 - mask)
        raw[:, :, k] = idft2(recompose(AmplitudePhase(amp_p[:, :, k], ap.phase)))
        amps.append(ap.amplitude)
        phases.append(ap.phase)
    return raw, AmplitudePhase(np.stack(amps, 2), np.stack(phases, 2)), amp_p


def inject_fiba(benign, cfg):
    raw, _, _ = fiba_spectrum(benign, cfg)
    return np.clip(raw.real, 0.0, 1.0)


def inject_patch(benign, cfg):
    x = as_image(benign, "benign").copy()
    p = cfg.patch_size
    if p < 1 or p > min(x.shape[:2]):
        raise ValueError(f"patch size {p} does not fit a {x.shape[0]}x{x.shape[1]} image")
    x[-p:, -p:, :] = cfg.patch_value
    return x


def inject_blend(benign, cfg):
    x = as_image(benign, "benign")
    t = cfg.prepared_trigger(*x.shape)
    if t.shape != x.shape:
        raise ValueError("trigger/benign shape mismatch")
    m = cfg.alpha
    return np.clip((1 - m) * x + m * t, 0.0, 1.0)


_INJECTORS = {"fiba": inject_fiba, "patch": inject_patch, "blend": inject_blend}


def inject(benign, cfg):
    """Apply the attack described by ``cfg`` to one image."""
    return _INJECTORS[cfg.kind](benign, cfg)


def inject_many(images, cfg):
    return np.stack([inject(x, cfg) for x in images])


def make_trigger(name, size=64, seed=0):
    """Procedural key images shipped in place of photographs.

    ``noise``    smooth colour noise with a 1/f-like spectrum
    ``gradient`` warm diagonal colour ramp
    ``checker``  coarse two-tone checkerboard
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    if name == "gradient":
        r = 0.55 + 0.4 * xx
        g = 0.35 + 0.4 * yy * (1 - xx)
        b = 0.15 + 0.2 * (1 - yy)
        img = np.stack([r, g, b], axis=2)
    elif name == "checker":
        cells = ((np.floor(xx * 3.999) + np.floor(yy * 3.999)) % 2)[:, :, None]
        img = cells * np.array([0.95, 0.8, 0.2]) + (1 - cells) * np.array([0.35, 0.1, 0.05])
    elif name == "noise":
        img = np.stack([_pink(rng, size) for _ in range(3)], axis=2)
        img = 0.25 + 0.6 * img * np.array([1.0, 0.7, 0.4])
    else:
        raise ValueError(f"unknown trigger fixture {name!r}; choose noise, gradient or checker")
    return np.clip(img, 0.0, 1.0)


def _pink(rng, size, exponent=1.0):
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    spec = radius ** -exponent * np.exp(2j * np.pi * rng.random((size, size)))
    spec[0, 0] = 0.0
    field_ = idft2(spec).real
    field_ -= field_.min()
    return field_ / max(field_.max(), 1e-12)
