"""STRIP entropy analysis and fine-pruning against trained toy classifiers."""
import math
from dataclasses import dataclass

import numpy as np

from fiba.attack import inject
from fiba.pipeline import eval_asr_classification, eval_ba

STRIP_MIN_INPUTS = 20
STRIP_PERCENTILE = 10.0


def entropy(probs):
    """Shannon entropy (natural log) along the last axis; 0 log 0 counts as 0."""
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def strip_entropy(model, image, overlay_pool, n_overlays=64, seed=0):
    """Mean prediction entropy of ``image`` superimposed 50/50 on seeded pool images."""
    if len(overlay_pool) == 0:
        raise ValueError("overlay pool is empty")
    if n_overlays < 1 or n_overlays > len(overlay_pool):
        raise ValueError(f"need 1 <= n_overlays <= pool size ({len(overlay_pool)}), got {n_overlays}")
    pick = np.random.default_rng(seed).choice(len(overlay_pool), n_overlays, replace=False)
    overlays = np.asarray(overlay_pool, dtype=float)[pick]
    blended = 0.5 * np.asarray(image, dtype=float)[None] + 0.5 * overlays
    return float(entropy(model.forward(blended)).mean())


@dataclass
class StripReport:
    clean_entropies: np.ndarray
    poisoned_entropies: np.ndarray

    @property
    def threshold(self):
        return float(np.percentile(self.clean_entropies, STRIP_PERCENTILE))

    @property
    def overlap(self):
        """Fraction of triggered-input entropies above the clean 10th percentile (higher = stealthier)."""
        return float(np.mean(self.poisoned_entropies > self.threshold))

    def to_tsv(self):
        lines = ["kind\tindex\tentropy"]
        for kind, vals in (("clean", self.clean_entropies), ("poisoned", self.poisoned_entropies)):
            lines += [f"{kind}\t{i}\t{v:.6f}" for i, v in enumerate(vals)]
        return "\n".join(lines) + "\n"


def strip_compare(model, images, attack, overlay_pool, n_overlays=64, seed=0):
    """STRIP entropies for ``images`` and their triggered versions.

    Every input uses the same overlay draw so both sides see identical
    perturbations.
    """
    if len(images) < STRIP_MIN_INPUTS:
        raise ValueError(f"STRIP needs at least {STRIP_MIN_INPUTS} inputs, got {len(images)}")
    clean = np.array([strip_entropy(model, x, overlay_pool, n_overlays, seed) for x in images])
    poisoned = np.array([strip_entropy(model, inject(x, attack), overlay_pool, n_overlays, seed)
                         for x in images])
    return StripReport(clean, poisoned)


def _check_fraction(fraction):
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"pruning fraction must lie in [0, 1), got {fraction}")


def prune_order(model, calibration):
    """Hidden units sorted by mean clean activation, ascending (ties by index)."""
    acts = model.hidden_activations(calibration).mean(axis=0)
    return np.argsort(acts, kind="stable")


def fine_prune(model, calibration, fraction, order=None):
    """Copy of ``model`` with the ``floor(fraction * n_h)`` least active hidden units removed.

    A removed unit has its incoming weights, bias and outgoing weights
    zeroed, so it contributes nothing to the output.
    """
    _check_fraction(fraction)
    order = prune_order(model, calibration) if order is None else order
    k = int(math.floor(fraction * len(order) + 1e-9))
    pruned = model.copy()
    drop = order[:k]
    pruned.params["W1"][:, drop] = 0.0
    pruned.params["b1"][drop] = 0.0
    pruned.params["W2"][drop, :] = 0.0
    pruned.pruned_units = np.sort(drop)
    return pruned


@dataclass
class PruneCurve:
    fractions: np.ndarray
    ba: np.ndarray
    asr: np.ndarray

    @property
    def points(self):
        return list(zip(self.fractions.tolist(), self.ba.tolist(), self.asr.tolist()))

    def first_below(self, threshold=0.5):
        """Smallest fraction whose ASR falls below ``threshold`` (None if never)."""
        hit = np.flatnonzero(self.asr < threshold)
        return float(self.fractions[hit[0]]) if len(hit) else None

    def asr_at(self, fraction):
        return float(self.asr[np.flatnonzero(np.isclose(self.fractions, fraction))[0]])

    def to_tsv(self):
        lines = ["fraction\tba\tasr"]
        lines += [f"{f:.6f}\t{b:.6f}\t{a:.6f}" for f, b, a in self.points]
        return "\n".join(lines) + "\n"


def prune_sweep(model, calibration, images, labels, attack, label_fn, fractions, triggered=None):
    """BA and ASR at each pruning fraction; the unit ranking is computed once."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.ndim != 1 or not len(fractions):
        raise ValueError("fractions must be a non-empty list")
    if np.any(np.diff(fractions) <= 0):
        raise ValueError("fractions must be strictly increasing")
    for f in fractions:
        _check_fraction(f)
    if triggered is None:
        elig = np.flatnonzero(label_fn.eligible(np.asarray(labels)))
        triggered = np.stack([inject(images[i], attack) for i in elig])
    order = prune_order(model, calibration)
    ba, asr = [], []
    for f in fractions:
        m = fine_prune(model, calibration, f, order)
        ba.append(eval_ba(m, images, labels))
        asr.append(eval_asr_classification(m, images, labels, attack, label_fn, triggered=triggered))
    return PruneCurve(fractions, np.array(ba), np.array(asr))
