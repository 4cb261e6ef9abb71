"""Toy differentiable models with hand-derived gradients.

Both models share one core: features -> ReLU hidden layer -> softmax. They
differ only in how features are built:

* :class:`ToyClassifier` flattens the whole image (centred on 0.5).
* :class:`ToyDensePredictor` classifies each pixel from its ``p x p``
  neighbourhood plus two global spectral statistics per channel, so a
  frequency-domain trigger is visible without convolutions.

Checkpoint format (version 1), little-endian::

    8 bytes   magic b"FIBAMDL\\0"
    uint32    format version
    uint32    header length in bytes
    header    UTF-8 JSON: architecture spec and parameter shapes
    float64[] parameters W1, b1, W2, b2 in that order, C order
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from fiba.attack import low_freq_mask
from fiba.spectral import dft2

MAGIC = b"FIBAMDL\0"
CKPT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")


class TrainingDiverged(RuntimeError):
    pass


def _init_params(rng, n_in, n_hidden, n_out, zero_output=False):
    a1, a2 = 1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_hidden)
    p = {
        "W1": rng.uniform(-a1, a1, (n_in, n_hidden)),
        "b1": rng.uniform(-a1, a1, n_hidden),
        "W2": rng.uniform(-a2, a2, (n_hidden, n_out)),
        "b2": rng.uniform(-a2, a2, n_out),
    }
    if zero_output:
        p["W2"][:] = 0.0
        p["b2"][:] = 0.0
    return p


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mlp_forward(params, feats):
    pre = feats @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params["W2"] + params["b2"]
    return pre, hidden, logits


def mlp_loss_and_grad(params, feats, labels, weights=None):
    """Mean (optionally weighted) cross-entropy and its gradient.

    ``weights`` are per-row and are normalised to sum to one.
    """
    n = len(feats)
    pre, hidden, logits = mlp_forward(params, feats)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    w = np.full(n, 1.0 / n) if weights is None else weights / weights.sum()
    loss = -np.sum(w * logp[np.arange(n), labels])
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= w[:, None]
    dhidden = (dlogits @ params["W2"].T) * (pre > 0)
    grads = {
        "W2": hidden.T @ dlogits,
        "b2": dlogits.sum(axis=0),
        "W1": feats.T @ dhidden,
        "b1": dhidden.sum(axis=0),
    }
    return loss, grads


@dataclass
class ToyClassifier:
    """Image -> ReLU hidden layer -> softmax over ``n_classes``."""

    input_shape: tuple
    n_classes: int
    n_hidden: int = 64
    seed: int = 0
    params: dict = None

    kind = "classifier"

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.params is None:
            rng = np.random.default_rng(self.seed)
            self.params = _init_params(rng, int(np.prod(self.input_shape)), self.n_hidden, self.n_classes)

    def features(self, images):
        images = np.asarray(images, dtype=float)
        if images.shape[1:] != self.input_shape:
            raise ValueError(f"expected images of shape {self.input_shape}, got {images.shape[1:]}")
        return images.reshape(len(images), -1) - 0.5

    def forward(self, images):
        return softmax(mlp_forward(self.params, self.features(images))[2])

    def hidden_activations(self, images):
        return mlp_forward(self.params, self.features(images))[1]

    def predict(self, images):
        return self.forward(images).argmax(axis=1)

    def loss_and_grad(self, images, labels):
        return mlp_loss_and_grad(self.params, self.features(images), np.asarray(labels))

    def arch(self):
        return {"kind": self.kind, "input_shape": list(self.input_shape), "n_classes": self.n_classes,
                "n_hidden": self.n_hidden, "seed": self.seed}

    def copy(self):
        return type(self)(**self._ctor_args(), params={k: v.copy() for k, v in self.params.items()})

    def _ctor_args(self):
        return {"input_shape": self.input_shape, "n_classes": self.n_classes,
                "n_hidden": self.n_hidden, "seed": self.seed}


def spectral_stats(image, beta=0.10):
    """Two global statistics per channel from the amplitude spectrum.

    1. DC amplitude divided by H*W (the mean intensity)
    2. log of the mean low-band amplitude (DC excluded) over the DC amplitude

    Low-band blending moves both; the high band is left alone by the attack so
    it carries no signal and is not used.
    """
    h, w, c = image.shape
    low = low_freq_mask(h, w, beta).astype(bool)
    low[0, 0] = False
    out = np.empty(2 * c)
    for k in range(c):
        amp = np.abs(dft2(image[:, :, k])) / (h * w)
        dc = max(amp[0, 0], 1e-12)
        out[2 * k] = dc
        out[2 * k + 1] = np.log(amp[low].mean() / dc + 1e-12)
    return out


# affine normalisation of the statistics: (stat - centre) * scale, per pair
STAT_CENTER = np.array([0.2, -2.75])
STAT_SCALE = np.array([10.0, 2.0])


def normalized_stats(image):
    c = image.shape[2]
    return (spectral_stats(image) - np.tile(STAT_CENTER, c)) * np.tile(STAT_SCALE, c)


@dataclass
class ToyDensePredictor:
    """Per-pixel classifier over a ``patch x patch`` neighbourhood plus global spectral statistics.

    Pixels are evaluated on a regular subgrid with step ``stride`` (offset 0).
    """

    channels: int = 1
    n_classes: int = 3
    patch: int = 5
    n_hidden: int = 32
    stride: int = 2
    seed: int = 0
    params: dict = None

    kind = "dense"

    def __post_init__(self):
        if self.patch % 2 != 1:
            raise ValueError("patch size must be odd")
        if self.params is None:
            rng = np.random.default_rng(self.seed)
            self.params = _init_params(rng, self.n_features, self.n_hidden, self.n_classes)

    @property
    def n_features(self):
        return self.channels * (self.patch * self.patch + 2)

    def _image_features(self, img):
        h, w, c = img.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channel(s), got {c}")
        r = self.patch // 2
        padded = np.pad(img, ((r, r), (r, r), (0, 0)), mode="reflect")
        ys = np.arange(0, h, self.stride)
        xs = np.arange(0, w, self.stride)
        cols = [padded[ys[:, None] + dy, xs[None, :] + dx, :]
                for dy in range(self.patch) for dx in range(self.patch)]
        local = np.stack(cols, axis=-1).reshape(len(ys) * len(xs), -1) - 0.5
        stats = normalized_stats(img)
        glob = np.broadcast_to(stats, (len(local), len(stats)))
        return np.concatenate([local, glob], axis=1)

    def features(self, images):
        return np.concatenate([self._image_features(np.asarray(im, dtype=float)) for im in images])

    def grid_shape(self, h, w):
        return len(range(0, h, self.stride)), len(range(0, w, self.stride))

    def subsample_labels(self, label_maps):
        return np.asarray(label_maps)[:, ::self.stride, ::self.stride]

    def forward(self, images):
        """Per-pixel probabilities, shape ``N x H' x W' x n_classes`` on the subgrid."""
        images = np.asarray(images, dtype=float)
        gh, gw = self.grid_shape(*images.shape[1:3])
        probs = softmax(mlp_forward(self.params, self.features(images))[2])
        return probs.reshape(len(images), gh, gw, self.n_classes)

    def hidden_activations(self, images):
        return mlp_forward(self.params, self.features(images))[1]

    def predict(self, images):
        return self.forward(images).argmax(axis=-1)

    def loss_and_grad(self, images, label_maps, class_weights=None):
        feats = self.features(images)
        y = self.subsample_labels(label_maps).reshape(-1)
        w = None if class_weights is None else np.asarray(class_weights, dtype=float)[y]
        return mlp_loss_and_grad(self.params, feats, y, w)

    def arch(self):
        return {"kind": self.kind, **self._ctor_args()}

    def _ctor_args(self):
        return {"channels": self.channels, "n_classes": self.n_classes, "patch": self.patch,
                "n_hidden": self.n_hidden, "stride": self.stride, "seed": self.seed}

    def copy(self):
        return type(self)(**self._ctor_args(), params={k: v.copy() for k, v in self.params.items()})


@dataclass
class TrainState:
    params: dict
    velocity: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if not self.velocity:
            self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()}


def sgd_step(state, grads, lr, momentum=0.9):
    """Heavy-ball update ``v <- momentum*v + g``, ``theta <- theta - lr*v`` (in place)."""
    for k, g in grads.items():
        if g.shape != state.params[k].shape:
            raise ValueError(f"gradient shape mismatch for {k}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {k}")
    for k, g in grads.items():
        v = state.velocity[k]
        v *= momentum
        v += g
        state.params[k] -= lr * v
    state.step += 1
    return state


def save_model(model, path):
    header = dict(model.arch())
    header["params"] = {k: list(model.params[k].shape) for k in PARAM_NAMES}
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", CKPT_VERSION, len(hbytes)) + hbytes)
        for k in PARAM_NAMES:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    header = json.loads(blob[16:16 + hlen])
    pos, params = 16 + hlen, {}
    for k in PARAM_NAMES:
        shape = tuple(header["params"][k])
        n = int(np.prod(shape))
        params[k] = np.frombuffer(blob, "<f8", n, pos).reshape(shape).astype(float)
        pos += 8 * n
    kind = header.pop("kind")
    header.pop("params")
    if kind == "classifier":
        return ToyClassifier(params=params, **header)
    if kind == "dense":
        return ToyDensePredictor(params=params, **header)
    raise ValueError(f"{path}: unknown model kind {kind!r}")
