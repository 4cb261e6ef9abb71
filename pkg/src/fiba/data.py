"""Synthetic datasets, target-label functions, poisoning and pseudo-trigger pools.

Dataset directory layout (format version 1)::

    manifest.json        task, format version, seed, split sizes, class count,
                         poison plan (if any), generator parameters
    labels.tsv           index <TAB> label <TAB> provenance   (label is "-" for
                         segmentation, whose labels live in masks/)
    images/NNNN.png      8-bit grayscale or RGB
    masks/NNNN.png       segmentation only; palette-indexed 0/1/2 label map
    trigger.png          key image of the poison plan, when poisoned

Samples ``0 .. n_train-1`` form the training split, the rest the test split.
"""
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from fiba import pngio
from fiba.attack import AttackConfig, inject, prepare_trigger, resize
from fiba.spectral import idft2

FORMAT_VERSION = 1
BACKGROUND, ORGAN, TUMOR = 0, 1, 2
SEG_CLASSES = ("background", "organ", "tumor")
MASK_PALETTE = [(0, 0, 0), (200, 40, 40), (40, 200, 40)]
PROVENANCE = ("clean", "poisoned", "pseudo")

# pseudo-trigger domain: natural-statistics images with a warm colour cast.
# The cast is a chroma vector of length POOL_SATURATION at a hue HUE_OFFSET
# degrees either side of the warm axis (red up, blue down).
CHROMA_WARM = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)
CHROMA_GREEN = np.array([-1.0, 2.0, -1.0]) / np.sqrt(6)
POOL_BRIGHTNESS = (0.40, 0.60)
POOL_SATURATION = (0.30, 0.45)
POOL_HUE_OFFSET = (35.0, 80.0)

# classification texture constants: every class shares the same colour
# statistics and differs only in grating orientation / frequency
TEX_BASE_FREQ = 5.0          # cycles per image for even classes
TEX_FREQ_STEP = 1.5          # added for odd classes
TEX_CONTRAST = 0.16
TEX_PHASE_JITTER = 0.6       # radians
TEX_ORIENT_JITTER = 0.08     # radians
TEX_NOISE = 0.04
TEX_MEAN = 0.30
TEX_MEAN_JITTER = 0.008
TEX_TINT = np.array([1.0, 0.92, 0.85])


@dataclass
class Dataset:
    task: str
    images: np.ndarray
    labels: np.ndarray
    n_train: int
    n_classes: int
    provenance: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance is None:
            self.provenance = np.full(len(self.images), "clean", dtype="<U8")

    def __len__(self):
        return len(self.images)

    @property
    def n_test(self):
        return len(self) - self.n_train

    def split(self, name):
        sl = slice(0, self.n_train) if name == "train" else slice(self.n_train, None)
        return self.images[sl], self.labels[sl], self.provenance[sl]


@dataclass(frozen=True)
class TargetLabelFn:
    """All-to-one (``target``) or one-to-one (``mapping`` source -> target) label rewrite."""

    mode: str
    target: int = None
    mapping: tuple = ()

    def __post_init__(self):
        if self.mode == "all_to_one":
            if self.target is None:
                raise ValueError("all_to_one needs a target class")
        elif self.mode == "one_to_one":
            if not self.mapping:
                raise ValueError("one_to_one needs a non-empty mapping")
            object.__setattr__(self, "mapping", tuple(sorted(dict(self.mapping).items())))
        else:
            raise ValueError(f"unknown label function mode {self.mode!r}")

    @classmethod
    def all_to_one(cls, target):
        return cls("all_to_one", target=int(target))

    @classmethod
    def one_to_one(cls, mapping):
        return cls("one_to_one", mapping=tuple(dict(mapping).items()))

    @property
    def sources(self):
        return [s for s, _ in self.mapping]

    def validate(self, n_classes):
        targets = [self.target] if self.mode == "all_to_one" else [t for _, t in self.mapping] + self.sources
        for c in targets:
            if not 0 <= c < n_classes:
                raise ValueError(f"class {c} outside 0..{n_classes - 1}")

    def __call__(self, y):
        """Rewrite a class id, or every pixel of a label grid."""
        y = np.asarray(y)
        if self.mode == "all_to_one":
            return np.full_like(y, self.target)
        out = y.copy()
        for s, t in self.mapping:
            out[y == s] = t
        return out

    def eligible(self, y):
        """True where the rewrite changes the class (the ASR population)."""
        y = np.asarray(y)
        return self(y) != y

    def to_dict(self):
        if self.mode == "all_to_one":
            return {"mode": self.mode, "target": self.target}
        return {"mode": self.mode, "mapping": [[s, t] for s, t in self.mapping]}

    @classmethod
    def from_dict(cls, d):
        if d["mode"] == "all_to_one":
            return cls.all_to_one(d["target"])
        return cls.one_to_one({int(s): int(t) for s, t in d["mapping"]})


@dataclass(frozen=True)
class PoisonPlan:
    rho_p: float
    attack: AttackConfig
    label_fn: TargetLabelFn
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rho_p < 1.0:
            raise ValueError(f"rho_p must lie in (0, 1), got {self.rho_p}")

    def to_dict(self):
        a = self.attack
        return {
            "rho_p": self.rho_p,
            "seed": self.seed,
            "label_fn": self.label_fn.to_dict(),
            "attack": {"kind": a.kind, "alpha": a.alpha, "beta": a.beta,
                       "patch_size": a.patch_size, "patch_value": a.patch_value},
        }


def plan_from_meta(meta, trigger):
    """Rebuild the :class:`PoisonPlan` recorded by :func:`poison_dataset` (None if clean)."""
    d = meta.get("poison")
    if not d:
        return None
    a = d["attack"]
    if a["kind"] != "patch" and trigger is None:
        raise ValueError("poisoned dataset is missing its trigger image")
    attack = AttackConfig(a["kind"], None if a["kind"] == "patch" else trigger, a["alpha"], a["beta"],
                          a["patch_size"], a["patch_value"])
    return PoisonPlan(d["rho_p"], attack, TargetLabelFn.from_dict(d["label_fn"]), d["seed"])


def _split_and_shuffle(rng, per_class_images, per_class_labels, train_frac=0.8):
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for xs, ys in zip(per_class_images, per_class_labels):
        k = int(round(train_frac * len(xs)))
        tr_x.append(xs[:k])
        tr_y.append(ys[:k])
        te_x.append(xs[k:])
        te_y.append(ys[k:])
    tr_x, tr_y = np.concatenate(tr_x), np.concatenate(tr_y)
    te_x, te_y = np.concatenate(te_x), np.concatenate(te_y)
    p, q = rng.permutation(len(tr_x)), rng.permutation(len(te_x))
    return np.concatenate([tr_x[p], te_x[q]]), np.concatenate([tr_y[p], te_y[q]]), len(tr_x)


def synth_classification_dataset(seed=0, n_classes=4, per_class=400, h=32, w=32):
    """Oriented band-limited gratings, one orientation/frequency per class.

    Class ``k`` uses orientation ``k*pi/n_classes`` and frequency
    ``TEX_BASE_FREQ + (k % 2) * TEX_FREQ_STEP`` cycles per image, both well
    above the low-frequency band the frequency attack edits. Grating phase is
    jittered around a class-specific base phase, and seeded pixel noise and a
    small brightness jitter are added. Split is 80/20 per class.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if per_class < 20:
        raise ValueError("per_class must be >= 20")
    if h < 4 or w < 4:
        raise ValueError("image size must be >= 4x4")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    yy, xx = yy / h, xx / w
    base_phase = rng.uniform(0, 2 * np.pi, n_classes)
    imgs, labels = [], []
    for k in range(n_classes):
        freq = TEX_BASE_FREQ + (k % 2) * TEX_FREQ_STEP
        theta = k * np.pi / n_classes
        batch = np.empty((per_class, h, w, 3))
        for i in range(per_class):
            t = theta + rng.normal(0, TEX_ORIENT_JITTER)
            phase = base_phase[k] + rng.normal(0, TEX_PHASE_JITTER)
            grating = np.cos(2 * np.pi * freq * (xx * np.cos(t) + yy * np.sin(t)) + phase)
            mean = TEX_MEAN + rng.normal(0, TEX_MEAN_JITTER)
            img = (mean + TEX_CONTRAST * grating)[:, :, None] * (TEX_TINT / TEX_TINT.mean())
            img = img + rng.normal(0, TEX_NOISE, (h, w, 3))
            batch[i] = np.clip(img, 0, 1)
        imgs.append(batch)
        labels.append(np.full(per_class, k))
    images, y, n_train = _split_and_shuffle(rng, imgs, labels)
    meta = {"generator": "classification", "seed": seed, "per_class": per_class, "h": h, "w": w}
    return Dataset("classification", images, y, n_train, n_classes, meta=meta)


def _smooth_noise(rng, h, w, scale):
    coarse = rng.normal(0, 1, (h // 4 + 2, w // 4 + 2))
    return scale * resize(coarse, h, w)


def synth_segmentation_dataset(seed=0, n_images=400, h=32, w=32):
    """Grayscale CT-like slices: one smooth organ ellipse with small bright tumours inside.

    Labels per pixel: 0 background, 1 organ, 2 tumour. Every tumour pixel lies
    inside the organ by construction. Split is 80/20.
    """
    if n_images < 50:
        raise ValueError("n_images must be >= 50")
    if h < 16 or w < 16:
        raise ValueError("segmentation images must be at least 16x16")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    images = np.empty((n_images, h, w, 1))
    labels = np.empty((n_images, h, w), dtype=np.int64)
    for i in range(n_images):
        cy = h / 2 + rng.uniform(-0.1, 0.1) * h
        cx = w / 2 + rng.uniform(-0.1, 0.1) * w
        ay, ax = rng.uniform(0.25, 0.34) * h, rng.uniform(0.25, 0.34) * w
        rot = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(rot) + dy * np.sin(rot)
        v = -dx * np.sin(rot) + dy * np.cos(rot)
        organ = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
        lab = np.where(organ, ORGAN, BACKGROUND)
        img = 0.12 + _smooth_noise(rng, h, w, 0.02)
        img = np.where(organ, 0.42 + _smooth_noise(rng, h, w, 0.03), img)
        n_tumors = rng.choice(4, p=[0.1, 0.4, 0.3, 0.2])
        for _ in range(n_tumors):
            r = rng.uniform(1.6, 3.2)
            # centre within the inner part of the ellipse, blob clipped to the organ
            rr, ang = rng.uniform(0, 0.55), rng.uniform(0, 2 * np.pi)
            tu, tv = rr * ax * np.cos(ang), rr * ay * np.sin(ang)
            ty = cy + tu * np.sin(rot) + tv * np.cos(rot)
            tx = cx + tu * np.cos(rot) - tv * np.sin(rot)
            blob = ((yy - ty) ** 2 + (xx - tx) ** 2 <= r * r) & organ
            lab = np.where(blob, TUMOR, lab)
            img = np.where(blob, 0.78 + rng.normal(0, 0.03), img)
        img = img + rng.normal(0, 0.02, (h, w))
        images[i, :, :, 0] = np.clip(img, 0, 1)
        labels[i] = lab
    n_train = int(round(0.8 * n_images))
    meta = {"generator": "segmentation", "seed": seed, "h": h, "w": w}
    return Dataset("segmentation", images, labels, n_train, len(SEG_CLASSES), meta=meta)


def pseudo_trigger_pool(seed, n, h, w, channels, exclude=None):
    """``n`` natural-statistics images: 1/f amplitude with uniformly random phase.

    Each image gets its own seeded spectral slope, contrast and colour tint.
    Candidates within mean absolute distance 0.01 of ``exclude`` are redrawn.
    """
    if n < 1:
        raise ValueError("pool size must be >= 1")
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    ref = None if exclude is None else prepare_trigger(exclude, h, w, channels)
    pool = []
    while len(pool) < n:
        slope = rng.uniform(0.8, 1.6)
        mean = rng.uniform(*POOL_BRIGHTNESS) + np.zeros(channels)
        if channels == 3:
            hue = np.deg2rad(rng.uniform(*POOL_HUE_OFFSET) * rng.choice([-1, 1]))
            mean += rng.uniform(*POOL_SATURATION) * (np.cos(hue) * CHROMA_WARM + np.sin(hue) * CHROMA_GREEN)
        contrast = rng.uniform(0.15, 0.3)
        img = np.empty((h, w, channels))
        for c in range(channels):
            spec = radius ** -slope * np.exp(2j * np.pi * rng.random((h, w)))
            spec[0, 0] = 0.0
            f = idft2(spec).real
            f = f / max(np.abs(f).max(), 1e-12)
            img[:, :, c] = mean[c] + contrast * f
        img = np.clip(img, 0, 1)
        if ref is not None and np.abs(img - ref).mean() <= 0.01:
            continue
        pool.append(img)
    return pool


def _candidates(dataset, label_fn):
    _, y, _ = dataset.split("train")
    if dataset.task == "segmentation":
        present = set(np.unique(y).tolist())
        for s in label_fn.sources if label_fn.mode == "one_to_one" else []:
            if s not in present:
                raise ValueError(f"one_to_one source class {s} absent from the training labels")
        return np.arange(dataset.n_train)
    if label_fn.mode == "all_to_one":
        return np.arange(dataset.n_train)
    for s in label_fn.sources:
        if not np.any(y == s):
            raise ValueError(f"one_to_one source class {s} absent from the training split")
    return np.flatnonzero(np.isin(y, label_fn.sources))


def select_poison_indices(dataset, plan):
    cand = _candidates(dataset, plan.label_fn)
    k = int(np.floor(plan.rho_p * dataset.n_train + 1e-9))
    if k > len(cand):
        raise ValueError(f"cannot poison {k} samples: only {len(cand)} candidates")
    rng = np.random.default_rng(plan.seed)
    return np.sort(rng.permutation(cand)[:k])


def poison_dataset(dataset, plan):
    """Replace ``floor(rho_p * n_train)`` seeded training samples by ``(B(x), C_b(y))``.

    The test split is untouched. Returns a new dataset.
    """
    plan.label_fn.validate(dataset.n_classes)
    idx = select_poison_indices(dataset, plan)
    images = dataset.images.copy()
    labels = dataset.labels.copy()
    prov = np.full(len(dataset), "clean", dtype="<U8")
    for i in idx:
        images[i] = inject(images[i], plan.attack)
        labels[i] = plan.label_fn(labels[i])
        prov[i] = "poisoned"
    meta = dict(dataset.meta, poison=plan.to_dict())
    return replace(dataset, images=images, labels=labels, provenance=prov, meta=meta)


# --- directory I/O ---------------------------------------------------------

def save_dataset(dataset, path, trigger=None):
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    seg = dataset.task == "segmentation"
    if seg:
        os.makedirs(os.path.join(path, "masks"), exist_ok=True)
    rows = ["index\tlabel\tprovenance"]
    for i in range(len(dataset)):
        pngio.write_image(os.path.join(path, "images", f"{i:04d}.png"), dataset.images[i])
        if seg:
            pngio.write_png(os.path.join(path, "masks", f"{i:04d}.png"),
                            dataset.labels[i].astype(np.uint8), palette=MASK_PALETTE)
            rows.append(f"{i}\t-\t{dataset.provenance[i]}")
        else:
            rows.append(f"{i}\t{int(dataset.labels[i])}\t{dataset.provenance[i]}")
    with open(os.path.join(path, "labels.tsv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    if trigger is not None:
        pngio.write_image(os.path.join(path, "trigger.png"), trigger)
    h, w, c = dataset.images.shape[1:]
    manifest = {
        "format_version": FORMAT_VERSION,
        "task": dataset.task,
        "n_samples": len(dataset),
        "n_train": dataset.n_train,
        "n_test": dataset.n_test,
        "n_classes": dataset.n_classes,
        "height": h, "width": w, "channels": c,
        "meta": dataset.meta,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path):
    """Inverse of :func:`save_dataset`; returns ``(dataset, trigger_or_None)``."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"no dataset at {path!r} (manifest.json missing)")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {manifest.get('format_version')}")
    n = manifest["n_samples"]
    seg = manifest["task"] == "segmentation"
    images = np.stack([pngio.read_image(os.path.join(path, "images", f"{i:04d}.png")) for i in range(n)])
    with open(os.path.join(path, "labels.tsv")) as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh.readlines()[1:]]
    prov = np.array([r[2] for r in rows], dtype="<U8")
    if seg:
        labels = np.stack([pngio.read_png(os.path.join(path, "masks", f"{i:04d}.png"))[0]
                           for i in range(n)]).astype(np.int64)
    else:
        labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
    trig_path = os.path.join(path, "trigger.png")
    trigger = pngio.read_image(trig_path) if os.path.exists(trig_path) else None
    ds = Dataset(manifest["task"], images, labels, manifest["n_train"], manifest["n_classes"],
                 provenance=prov, meta=manifest["meta"])
    return ds, trigger


def quantized(dataset):
    """Dataset as it will read back from disk (8-bit pixels)."""
    return replace(dataset, images=pngio.quantize(dataset.images).astype(float) / 255.0)
