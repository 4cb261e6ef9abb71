"""Backdoor training protocols and evaluation metrics.

Training mixes three kinds of samples in every mini-batch:

* clean samples with their true label,
* specific-trigger samples with the rewritten label. In ``fresh`` mode (the
  default) the key trigger is injected into a newly drawn clean training
  image for every batch; in ``stored`` mode the rows the dataset already
  holds as poisoned are reused,
* pseudo-trigger samples: a clean image injected with a random image from
  the pseudo pool, keeping its true label. Only used when PTR is enabled.

With no pseudo fraction this is the ordinary clean/attack two-mode protocol.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from fiba.attack import AttackConfig, inject
from fiba.data import ORGAN, TUMOR, TargetLabelFn, pseudo_trigger_pool
from fiba.model import ToyClassifier, ToyDensePredictor, TrainState, sgd_step

log = logging.getLogger(__name__)

TSV_COLUMNS = ("epoch", "loss", "ba", "asr", "p_asr")
POISON_MODES = ("fresh", "stored")
LR_SCHEDULES = ("cosine", "constant")

# operating points per task; the segmentation learning rate is higher because
# each batch holds many correlated pixel rows but few optimizer steps
TASK_DEFAULTS = {
    "classification": {"alpha": 0.15, "beta": 0.10, "rho_p": 0.1, "lr": 0.05, "n_hidden": 64},
    "segmentation": {"alpha": 0.20, "beta": 0.10, "rho_p": 0.3, "lr": 0.1, "n_hidden": 32},
}
TRAIN_POOL_SEED, EVAL_POOL_SEED = 1000, 2000


def default_label_fn(task):
    return TargetLabelFn.all_to_one(0) if task == "classification" else TargetLabelFn.one_to_one({TUMOR: ORGAN})


def pseudo_pools(seed, n, shape, trigger=None):
    """Disjoint training and evaluation pseudo-trigger pools for a run seed."""
    h, w, c = shape
    return (pseudo_trigger_pool(TRAIN_POOL_SEED + seed, n, h, w, c, exclude=trigger),
            pseudo_trigger_pool(EVAL_POOL_SEED + seed, n, h, w, c, exclude=trigger))


@dataclass(frozen=True)
class TrainConfig:
    rho_p: float = 0.1
    rho_n: float = 0.0
    ptr: bool = False
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    n_hidden: int = 64
    attack: AttackConfig = None
    label_fn: TargetLabelFn = None
    class_weights: tuple = None
    poison_mode: str = "fresh"
    lr_schedule: str = "cosine"

    def __post_init__(self):
        if self.poison_mode not in POISON_MODES:
            raise ValueError(f"poison_mode must be one of {POISON_MODES}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.rho_p < 0 or self.rho_n < 0 or self.rho_p + self.rho_n > 1:
            raise ValueError("rho_p and rho_n must be >= 0 with rho_p + rho_n <= 1")
        if not self.ptr and self.rho_n != 0:
            raise ValueError("rho_n must be 0 when PTR is disabled")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @property
    def rho_c(self):
        return 1.0 - self.rho_p - self.rho_n

    def counts(self):
        """(clean, poisoned, pseudo) samples per batch; the rounding remainder goes to clean."""
        n_p = int(math.floor(self.rho_p * self.batch_size + 1e-9))
        n_n = int(math.floor(self.rho_n * self.batch_size + 1e-9))
        return self.batch_size - n_p - n_n, n_p, n_n

    def to_dict(self):
        return {
            "rho_c": self.rho_c, "rho_p": self.rho_p, "rho_n": self.rho_n, "ptr": self.ptr,
            "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
            "momentum": self.momentum, "seed": self.seed, "n_hidden": self.n_hidden,
            "class_weights": list(self.class_weights) if self.class_weights else None,
            "poison_mode": self.poison_mode, "lr_schedule": self.lr_schedule,
        }

    def lr_at(self, step, total):
        """Learning rate for optimizer step ``step`` of ``total``."""
        if self.lr_schedule == "constant" or total <= 0:
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


@dataclass
class Pools:
    """Index pools of the training split plus the pseudo-trigger configs."""

    images: np.ndarray
    labels: np.ndarray
    clean: np.ndarray
    poisoned: np.ndarray
    pseudo: list = field(default_factory=list)

    @classmethod
    def from_dataset(cls, dataset, attack=None, pseudo_images=()):
        x, y, prov = dataset.split("train")
        pseudo = [attack.with_trigger(p) for p in pseudo_images] if attack is not None else []
        return cls(x, y, np.flatnonzero(prov == "clean"), np.flatnonzero(prov == "poisoned"), pseudo)


def batches_per_epoch(pools, cfg):
    return max(1, math.ceil(len(pools.images) / cfg.batch_size))


def compose_batch(pools, cfg, batch_index):
    """Deterministic mini-batch for ``(cfg.seed, batch_index)``.

    Returns ``(images, labels, kinds)`` where ``kinds`` holds the provenance of
    each row. Each stream (clean, poisoned, pseudo) draws from its own seeded
    generator, so switching the pseudo fraction off leaves the other two
    streams bit-identical.
    """
    n_c, n_p, n_n = cfg.counts()
    if n_c and not len(pools.clean):
        raise ValueError("batch needs clean samples but the clean pool is empty")
    fresh = cfg.poison_mode == "fresh"
    if fresh and n_p and (cfg.attack is None or cfg.label_fn is None):
        raise ValueError("fresh poisoning needs an attack and a label function")
    source = pools.clean if fresh else pools.poisoned
    if n_p > len(source):
        raise ValueError(f"batch needs {n_p} poisoned samples, pool has {len(source)}")
    if n_n and (not pools.pseudo or not len(pools.clean)):
        raise ValueError("batch needs pseudo-trigger samples but the pseudo pool is empty")
    nb = batches_per_epoch(pools, cfg)
    epoch, j = divmod(batch_index, nb)
    order = np.random.default_rng([cfg.seed, 0, epoch]).permutation(pools.clean)
    clean_idx = order[(j * n_c + np.arange(n_c)) % len(order)] if n_c else np.array([], int)
    idx = [clean_idx]
    kinds = ["clean"] * n_c
    if n_p and not fresh:
        idx.append(np.random.default_rng([cfg.seed, 1, batch_index]).choice(source, n_p, replace=False))
    images = [pools.images[i] for i in np.concatenate(idx).astype(int)]
    labels = [pools.labels[i] for i in np.concatenate(idx).astype(int)]
    if n_p and fresh:
        for i in np.random.default_rng([cfg.seed, 1, batch_index]).choice(source, n_p, replace=False):
            images.append(inject(pools.images[i], cfg.attack))
            labels.append(cfg.label_fn(pools.labels[i]))
    kinds += ["poisoned"] * n_p
    if n_n:
        rng = np.random.default_rng([cfg.seed, 2, batch_index])
        base = rng.choice(pools.clean, n_n, replace=False)
        which = rng.integers(0, len(pools.pseudo), n_n)
        for i, k in zip(base, which):
            images.append(inject(pools.images[i], pools.pseudo[k]))
            labels.append(pools.labels[i])
        kinds += ["pseudo"] * n_n
    return np.stack(images), np.stack(labels), kinds


@dataclass
class EvalSet:
    """Test split with pre-injected triggered variants (computed once, reused per epoch)."""

    images: np.ndarray
    labels: np.ndarray
    triggered: np.ndarray = None
    pseudo_triggered: np.ndarray = None
    eligible: np.ndarray = None

    @classmethod
    def build(cls, dataset, attack=None, label_fn=None, pseudo_images=(), seed=0):
        x, y, _ = dataset.split("test")
        if len(x) == 0:
            raise ValueError("empty test split")
        es = cls(x, y)
        if attack is None:
            return es
        if dataset.task == "classification":
            es.eligible = np.flatnonzero(label_fn.eligible(y))
            if not len(es.eligible):
                raise ValueError("no test samples eligible for ASR")
            src = x[es.eligible]
        else:
            es.eligible = np.arange(len(x))
            src = x
        es.triggered = np.stack([inject(im, attack) for im in src])
        if len(pseudo_images):
            es.pseudo_triggered = pseudo_inject(src, attack, pseudo_images, seed)
        return es


def pseudo_inject(images, attack, pseudo_images, seed):
    """Inject one seeded pool image per sample."""
    rng = np.random.default_rng([seed, 3])
    which = rng.integers(0, len(pseudo_images), len(images))
    cfgs = {}
    out = []
    for im, k in zip(images, which):
        if k not in cfgs:
            cfgs[k] = attack.with_trigger(pseudo_images[k])
        out.append(inject(im, cfgs[k]))
    return np.stack(out)


def build_model(dataset, cfg):
    h, w, c = dataset.images.shape[1:]
    if dataset.task == "classification":
        return ToyClassifier((h, w, c), dataset.n_classes, n_hidden=cfg.n_hidden, seed=cfg.seed)
    return ToyDensePredictor(channels=c, n_classes=dataset.n_classes, n_hidden=cfg.n_hidden, seed=cfg.seed)


def _loss_and_grad(model, x, y, cfg):
    if isinstance(model, ToyDensePredictor):
        return model.loss_and_grad(x, y, cfg.class_weights)
    return model.loss_and_grad(x, y)


def train_backdoored(dataset, cfg, pseudo_images=(), eval_set=None, model=None):
    """Train a toy model on a (possibly poisoned) dataset.

    ``pseudo_images`` feeds the pseudo-trigger branch when ``cfg.ptr`` is set.
    ``eval_set`` (an :class:`EvalSet`) is evaluated after every epoch.
    Returns ``(model, history)`` where ``history`` is a list of dicts with the
    :data:`TSV_COLUMNS` keys.
    """
    if cfg.ptr and cfg.rho_n > 0 and not len(pseudo_images):
        raise ValueError("PTR training needs a non-empty pseudo-trigger pool")
    pools = Pools.from_dataset(dataset, cfg.attack, pseudo_images if cfg.ptr else ())
    model = model if model is not None else build_model(dataset, cfg)
    state = TrainState(model.params)
    nb = batches_per_epoch(pools, cfg)
    total = nb * cfg.epochs
    history = []
    g = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(nb):
            x, y, _ = compose_batch(pools, cfg, g)
            loss, grads = _loss_and_grad(model, x, y, cfg)
            sgd_step(state, grads, cfg.lr_at(g, total), cfg.momentum)
            losses.append(loss)
            g += 1
        row = {"epoch": epoch, "loss": float(np.mean(losses))}
        if eval_set is not None:
            row.update(evaluate(model, eval_set, cfg.label_fn).summary())
        log.debug("epoch %d %s", epoch, row)
        history.append(row)
    return model, history


# --- metrics ---------------------------------------------------------------

@dataclass
class Metrics:
    ba: float
    asr: float = float("nan")
    p_asr: float = float("nan")
    per_class: dict = field(default_factory=dict)
    seg: dict = field(default_factory=dict)

    def summary(self):
        return {"ba": self.ba, "asr": self.asr, "p_asr": self.p_asr}

    def to_dict(self):
        return {**self.summary(), "per_class": self.per_class, **self.seg}


def _rate(hits):
    hits = np.asarray(hits)
    if hits.size == 0:
        raise ValueError("no samples to evaluate")
    return float(hits.mean())


def eval_ba(model, images, labels):
    """Fraction of clean samples whose argmax prediction equals the label (pixel accuracy for dense)."""
    if len(images) == 0:
        raise ValueError("empty test set")
    pred = model.predict(images)
    if isinstance(model, ToyDensePredictor):
        labels = model.subsample_labels(labels)
    return _rate(pred == np.asarray(labels))


def per_class_accuracy(model, images, labels):
    pred = model.predict(images)
    return {int(c): _rate(pred[labels == c] == c) for c in np.unique(labels)}


def eval_asr_classification(model, images, labels, attack, label_fn, triggered=None):
    """Fraction of eligible triggered samples predicted as ``C_b(y)``.

    Samples the label function leaves unchanged (e.g. the target class under
    all-to-one) are not eligible. ``triggered`` may carry pre-injected images
    for the eligible samples.
    """
    labels = np.asarray(labels)
    elig = np.flatnonzero(label_fn.eligible(labels))
    if not len(elig):
        raise ValueError("no eligible samples for ASR")
    if triggered is None:
        triggered = np.stack([inject(images[i], attack) for i in elig])
    return _rate(model.predict(triggered) == label_fn(labels[elig]))


def eval_p_asr(model, images, labels, pseudo_images, attack, label_fn, seed=0, triggered=None):
    """ASR with a seeded pseudo trigger per sample instead of the specific trigger."""
    if not len(pseudo_images) and triggered is None:
        raise ValueError("pseudo-trigger pool is empty")
    labels = np.asarray(labels)
    elig = np.flatnonzero(label_fn.eligible(labels))
    if not len(elig):
        raise ValueError("no eligible samples for P-ASR")
    if triggered is None:
        triggered = pseudo_inject(images[elig], attack, pseudo_images, seed)
    return _rate(model.predict(triggered) == label_fn(labels[elig]))


def iou(pred, truth, cls):
    p, t = pred == cls, truth == cls
    union = np.logical_or(p, t).sum()
    return float(np.logical_and(p, t).sum() / union) if union else float("nan")


def eval_asr_segmentation(model, images, label_maps, attack=None, triggered=None,
                          source=TUMOR, target=ORGAN):
    """Pixel ASR (ground-truth ``source`` pixels predicted ``target`` on triggered inputs)
    plus organ/tumour IoU on clean and triggered inputs.

    IoU on triggered inputs is measured against the original ground truth.
    """
    if triggered is None:
        triggered = np.stack([inject(im, attack) for im in images])
    truth = model.subsample_labels(label_maps)
    src = truth == source
    if not src.any():
        raise ValueError("no source-class pixels in the evaluation set")
    clean_pred = model.predict(images)
    trig_pred = model.predict(triggered)
    return {
        "asr": float((trig_pred[src] == target).mean()),
        "organ_iou_clean": iou(clean_pred, truth, ORGAN),
        "tumor_iou_clean": iou(clean_pred, truth, TUMOR),
        "organ_iou_poisoned": iou(trig_pred, truth, ORGAN),
        "tumor_iou_poisoned": iou(trig_pred, truth, TUMOR),
    }


def evaluate(model, eval_set, label_fn, attack=None, pseudo_seed=0):
    es = eval_set
    m = Metrics(ba=eval_ba(model, es.images, es.labels))
    if isinstance(model, ToyDensePredictor):
        if es.triggered is not None:
            m.seg = eval_asr_segmentation(model, es.images, es.labels, triggered=es.triggered)
            m.asr = m.seg["asr"]
        return m
    m.per_class = per_class_accuracy(model, es.images, es.labels)
    if es.triggered is not None:
        y = es.labels
        m.asr = eval_asr_classification(model, es.images, y, attack, label_fn, triggered=es.triggered)
        if es.pseudo_triggered is not None:
            m.p_asr = eval_p_asr(model, es.images, y, (), attack, label_fn, triggered=es.pseudo_triggered)
    return m


def format_tsv(rows, columns=TSV_COLUMNS):
    def cell(v):
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, str):
            return v
        return "nan" if v is None or np.isnan(v) else f"{v:.6f}"

    lines = ["\t".join(columns)]
    lines += ["\t".join(cell(r.get(c)) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def write_tsv(path, rows, columns=TSV_COLUMNS):
    with open(path, "w") as fh:
        fh.write(format_tsv(rows, columns))


def read_tsv(path):
    with open(path) as fh:
        header, *body = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    out = []
    for r in body:
        row = {}
        for k, v in zip(header, r):
            try:
                row[k] = int(v) if k == "epoch" else float(v)
            except ValueError:
                row[k] = v
        out.append(row)
    return out
