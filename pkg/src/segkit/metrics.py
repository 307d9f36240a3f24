"""Class-weighted cross-entropy and the confusion-matrix metrics
(per-class recall, class average, global average)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

VOID = 255


def class_frequencies(label_maps, num_classes, void=VOID):
    """Pixel frequency of each class over non-void pixels."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for lab in label_maps:
        lab = np.asarray(lab)
        valid = lab[lab != void]
        if valid.size and (valid.max() >= num_classes or valid.min() < 0):
            raise DataError(f"label value outside 0..{num_classes - 1} (void={void})")
        counts += np.bincount(valid.ravel().astype(np.int64), minlength=num_classes)
    total = counts.sum()
    if total == 0:
        raise DataError("dataset contains no non-void pixels")
    return counts / total


def inverse_frequency_weights(freqs):
    """``w[c] = 1 / (K f[c])``; absent classes get weight 0."""
    freqs = np.asarray(freqs, dtype=np.float64)
    K = freqs.size
    w = np.zeros(K)
    present = freqs > 0
    w[present] = 1.0 / (K * freqs[present])
    return w


def weighted_cross_entropy(probs, labels, weights, void=VOID):
    """Mean weighted negative log-likelihood over non-void pixels.

    ``probs`` is ``(n, K, h, w)``, ``labels`` ``(n, h, w)``. Returns the loss
    and its gradient with respect to the soft-max logits.
    """
    n, K, h, w = probs.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise DataError(f"label shape {labels.shape} does not match probabilities {probs.shape}")
    valid = labels != void
    bad = valid & ((labels >= K) | (labels < 0))
    if bad.any():
        b, y, x = (int(v) for v in np.argwhere(bad)[0])
        raise DataError(f"label {labels[b, y, x]} at (batch {b}, y {y}, x {x}) is not a class in 0..{K - 1}")
    P = int(valid.sum())
    grad = np.zeros_like(probs)
    if P == 0:
        return 0.0, grad
    safe = np.where(valid, labels, 0).astype(np.intp)
    w_pix = np.where(valid, np.asarray(weights, dtype=np.float64)[safe], 0.0)
    p_true = np.take_along_axis(probs, safe[:, None], axis=1)[:, 0]
    # clamp only guards log(0); well-formed soft-max output never hits it
    loss = -float((w_pix * np.log(np.maximum(p_true, 1e-300))).sum()) / P
    grad[...] = probs
    np.put_along_axis(grad, safe[:, None], p_true[:, None] - 1.0, axis=1)
    grad *= (w_pix / P)[:, None]
    return loss, grad


@dataclass
class Metrics:
    confusion: np.ndarray
    per_class: np.ndarray  # percent; nan where a class has no pixels
    class_avg: float
    global_avg: float

    def summary(self, class_names=None):
        names = class_names or [str(i) for i in range(len(self.per_class))]
        return {
            "class_avg": round(self.class_avg, 2),
            "global_avg": round(self.global_avg, 2),
            "per_class": {
                n: (None if np.isnan(a) else round(float(a), 2)) for n, a in zip(names, self.per_class)
            },
        }

    def write(self, out_dir, class_names=None):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = self.summary(class_names)
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["class", "accuracy"])
            for name, acc in summary["per_class"].items():
                wr.writerow([name, "" if acc is None else f"{acc:.2f}"])
        (out_dir / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def confusion_matrix(true_labels, pred_labels, num_classes, void=VOID):
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true_labels, pred_labels):
        t = np.asarray(t).ravel()
        p = np.asarray(p).ravel()
        keep = t != void
        cm += np.bincount(
            t[keep].astype(np.int64) * num_classes + p[keep].astype(np.int64),
            minlength=num_classes * num_classes,
        ).reshape(num_classes, num_classes)
    return cm


def metrics_from_confusion(cm) -> Metrics:
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    per_class = np.full(len(rows), np.nan)
    present = rows > 0
    per_class[present] = 100.0 * np.diag(cm)[present] / rows[present]
    total = cm.sum()
    class_avg = float(per_class[present].mean()) if present.any() else 0.0
    global_avg = 100.0 * float(np.trace(cm)) / total if total else 0.0
    return Metrics(cm, per_class, class_avg, global_avg)
