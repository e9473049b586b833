"""Confusion matrices, IoU/precision/recall metrics, patch evaluation and scene prediction."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .dataset import hann_window, merge_patches, patchify
from .labels import CLASS_NAMES, IGNORE, NUM_CLASSES, LabelMask
from .nn.checkpoint import Checkpoint
from .nn.model import cryonet_forward
from .nn.tensor import no_grad, softmax
from .raster import BandStack, GeometryError


class RegistryError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """counts[t, p]: pixels of true class t predicted as p."""

    counts: np.ndarray

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred, truth, num_classes=NUM_CLASSES) -> ConfusionMatrix:
    pred = pred.classes if isinstance(pred, LabelMask) else np.asarray(pred)
    truth = truth.classes if isinstance(truth, LabelMask) else np.asarray(truth)
    if pred.shape != truth.shape:
        raise GeometryError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    keep = (truth != IGNORE) & (pred != IGNORE)
    t = truth[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts[:num_classes * num_classes].reshape(num_classes, num_classes))


@dataclass
class Metrics:
    iou: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    total_accuracy: float
    present: np.ndarray  # classes with any truth or prediction

    @property
    def mean_iou(self):
        return _nanmean(self.iou[self.present])

    @property
    def mean_precision(self):
        return _nanmean(self.precision[self.present])

    @property
    def mean_recall(self):
        return _nanmean(self.recall[self.present])

    def to_dict(self, names=CLASS_NAMES):
        def clean(v):
            return None if np.isnan(v) else float(v)

        return {
            "total_accuracy": float(self.total_accuracy),
            "mean_iou": clean(self.mean_iou),
            "mean_precision": clean(self.mean_precision),
            "mean_recall": clean(self.mean_recall),
            "per_class": {
                names[c]: {"iou": clean(self.iou[c]), "precision": clean(self.precision[c]),
                           "recall": clean(self.recall[c]), "present": bool(self.present[c])}
                for c in range(len(self.iou))
            },
        }


def _nanmean(v):
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else float("nan")


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Per-class IoU = TP/(TP+FP+FN), precision, recall and total accuracy.

    A class with neither truth nor prediction pixels has undefined (NaN)
    scores and is left out of the means; so is any undefined ratio.
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    return Metrics(
        iou=_ratio(tp, tp + fp + fn),
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        total_accuracy=float(tp.sum() / total),
        present=present,
    )


def metrics_csv(m: Metrics, names=CLASS_NAMES) -> str:
    """Per-class table plus a mean row; fixed 6-decimal formatting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "iou", "precision", "recall"])

    def fmt(v):
        return "" if np.isnan(v) else f"{v:.6f}"

    for i, name in enumerate(names[:len(m.iou)]):
        w.writerow([name, fmt(m.iou[i]), fmt(m.precision[i]), fmt(m.recall[i])])
    w.writerow(["mean", fmt(m.mean_iou), fmt(m.mean_precision), fmt(m.mean_recall)])
    w.writerow(["total_accuracy", fmt(m.total_accuracy), "", ""])
    return buf.getvalue()


def write_report(m: Metrics, cm: ConfusionMatrix, json_path, csv_path=None):
    doc = m.to_dict()
    doc["confusion"] = cm.counts.tolist()
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write(metrics_csv(m))


# ---------------------------------------------------------------- inference

def predict_logits(ckpt: Checkpoint, images, batch_size=16):
    """Eval-mode logits for an N x C x H x W array, computed in batches."""
    out = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            logits, _ = cryonet_forward(images[i:i + batch_size], ckpt.config, ckpt.params, training=False)
            out.append(logits.data)
    if not out:
        return np.zeros((0, ckpt.config.classes) + tuple(images.shape[2:]), np.float32)
    return np.concatenate(out)


def evaluate_patches(ckpt: Checkpoint, images, labels, batch_size=16) -> ConfusionMatrix:
    cm = ConfusionMatrix(np.zeros((ckpt.config.classes,) * 2, dtype=np.int64))
    for i in range(0, len(images), batch_size):
        logits = predict_logits(ckpt, images[i:i + batch_size], batch_size)
        cm = cm + confusion(logits.argmax(axis=1), labels[i:i + batch_size], ckpt.config.classes)
    return cm


def align_bands(stack: BandStack, band_names):
    """Reorder ``stack`` to the checkpoint's band registry or fail naming the gaps."""
    missing = [b for b in band_names if b not in stack.names]
    if missing:
        raise RegistryError(f"stack is missing bands required by the model: {missing}")
    return stack if list(stack.names) == list(band_names) else stack.select(band_names)


def predict_scene(ckpt: Checkpoint, stack: BandStack, patch_size=None, stride=None, batch_size=16):
    """Patch-wise softmax, Hann-weighted merge, per-pixel argmax (lowest id wins ties).

    Returns ``(LabelMask, probabilities BandStack)``.
    """
    if ckpt.band_names:
        stack = align_bands(stack, ckpt.band_names)
    elif len(stack) != ckpt.config.in_channels:
        raise RegistryError(f"stack has {len(stack)} bands, model expects {ckpt.config.in_channels}")
    patch_size = patch_size or ckpt.meta.get("patch_size", 256)
    stride = stride or max(patch_size // 2, 1)
    ps = patchify(stack, None, patch_size, stride)
    images, _ = ps.arrays()
    probs = softmax(predict_logits(ckpt, images, batch_size).astype(np.float64), axis=1)
    merged = merge_patches([(pr, p.offset) for pr, p in zip(probs, ps.patches)],
                           ps.padded_shape, hann_window(patch_size))
    h, w = ps.scene_shape
    merged = merged[:, :h, :w]
    classes = merged.argmax(axis=0).astype(np.uint8)
    prob_stack = BandStack(stack.geometry, list(CLASS_NAMES[:merged.shape[0]]), [],
                           merged.astype(np.float32), stack.nodata)
    return LabelMask(classes, stack.geometry), prob_stack
