"""Weighted cross-entropy, Adam, training and fine-tuning loops."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import PatchSet, class_weights
from .evaluate import RegistryError, evaluate_patches, metrics
from .labels import IGNORE
from .nn.checkpoint import Checkpoint
from .nn.model import ModelConfig, ModelParams, cryonet_forward

log = logging.getLogger(__name__)


class EmptyLossError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    decoupled_weight_decay: bool = True
    class_weights: str | list = "patchset"  # "patchset", "uniform", or explicit list
    max_steps: int | None = None
    eval_batch_size: int = 16

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self):
        return asdict(self)


def weighted_ce_loss(logits, targets, weights, ignore_index=IGNORE):
    """Mean of w[y] * -log softmax(logits)[y] over non-ignored pixels.

    ``logits`` is N x K x H x W, ``targets`` N x H x W. Returns ``(loss,
    dloss/dlogits)``. The normalizer is the number of non-ignored pixels.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=logits.dtype)
    valid = targets != ignore_index
    n = int(valid.sum())
    if n == 0:
        raise EmptyLossError("every target pixel is ignored")
    y = np.where(valid, targets, 0).astype(np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    logp = z - np.log(s)
    picked = np.take_along_axis(logp, y[:, None], axis=1)[:, 0]
    wpix = weights[y] * valid
    loss = float(-(wpix * picked).sum(dtype=np.float64) / n)
    grad = e / s
    onehot = np.zeros_like(grad)
    np.put_along_axis(onehot, y[:, None], 1.0, axis=1)
    grad = (grad - onehot) * (wpix / n)[:, None].astype(logits.dtype)
    return loss, grad.astype(logits.dtype, copy=False)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ModelParams, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update in place, using each parameter's ``.grad``.

    With ``decoupled_weight_decay`` the decay is applied to the parameters
    directly (p -= lr * wd * p); otherwise it is added to the gradient.
    """
    b1, b2 = cfg.betas
    lr, wd = cfg.learning_rate, cfg.weight_decay
    for name, p in params.params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, p in params.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if wd and not cfg.decoupled_weight_decay:
            g = g + wd * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if wd and cfg.decoupled_weight_decay:
            update = update + wd * p.data
        p.data -= (lr * update).astype(p.data.dtype)


def resolve_class_weights(patchset: PatchSet, cfg: TrainConfig, num_classes):
    src = cfg.class_weights
    if isinstance(src, str):
        if src == "uniform":
            return np.ones(num_classes)
        if src != "patchset":
            raise ValueError(f"unknown class weight source {src!r}")
        if patchset.class_weights is not None:
            return np.asarray(patchset.class_weights, dtype=np.float64)
        _, y = patchset.arrays("train")
        return class_weights(y, num_classes)
    w = np.asarray(src, dtype=np.float64)
    if w.shape != (num_classes,) or not np.all(w > 0):
        raise ValueError(f"explicit class weights must be {num_classes} positive numbers")
    return w


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    history: list


def _batches(idx, batch_size):
    for i in range(0, len(idx), batch_size):
        yield idx[i:i + batch_size]


def _step(ckpt, x, y, weights, state, cfg):
    ckpt.params.zero_grad()
    logits, _ = cryonet_forward(x, ckpt.config, ckpt.params, training=True)
    loss, grad = weighted_ce_loss(logits.data, y, weights.astype(logits.data.dtype))
    if not math.isfinite(loss):
        raise DivergenceError("loss is not finite")
    logits.backward(grad)
    adam_step(ckpt.params, state, cfg)
    return loss


def _test_metrics(ckpt, patchset, cfg):
    x, y = patchset.arrays("test")
    if len(x) == 0:
        return float("nan"), float("nan")
    m = metrics(evaluate_patches(ckpt, x, y, cfg.eval_batch_size))
    return m.mean_iou, m.total_accuracy


def train(model_cfg: ModelConfig, patchset: PatchSet, cfg: TrainConfig = TrainConfig(),
          init: Checkpoint | None = None, on_epoch=None) -> TrainResult:
    """Train from scratch (or from ``init``) on the train split.

    Each epoch shuffles the train patches with a generator seeded by
    ``(seed, epoch)`` and runs batches in order, keeping the last partial
    batch. Test metrics are computed after every epoch and the checkpoint
    with the best test mIoU is kept alongside the final one.
    """
    train_idx = np.asarray(patchset.indices("train"))
    if train_idx.size == 0:
        raise ValueError("patch set has no train patches")
    if init is None:
        ckpt = Checkpoint.fresh(model_cfg, patchset.band_names, cfg.seed)
    else:
        ckpt = init.copy()
    if len(patchset.band_names) != ckpt.config.in_channels:
        raise RegistryError(
            f"patch set has {len(patchset.band_names)} bands, model expects {ckpt.config.in_channels}"
        )
    ckpt.meta.update({"patch_size": patchset.patch_size, "train": cfg.to_dict()})
    weights = resolve_class_weights(patchset, cfg, model_cfg.classes)
    x_all, y_all = patchset.arrays()
    state = AdamState()
    history = []
    best, best_miou = ckpt.copy(), -math.inf
    step = 0
    for epoch in range(cfg.epochs):
        order = train_idx[np.random.default_rng([cfg.seed, epoch]).permutation(train_idx.size)]
        losses = []
        for b in _batches(order, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            losses.append(_step(ckpt, x_all[b], y_all[b], weights, state, cfg))
            step += 1
        if not losses:
            break
        miou, acc = _test_metrics(ckpt, patchset, cfg)
        row = {"epoch": epoch + 1, "step": step, "loss": float(np.mean(losses)),
               "test_mIoU": miou, "test_acc": acc}
        history.append(row)
        log.info("epoch %d step %d loss %.4f test mIoU %.4f acc %.4f",
                 row["epoch"], step, row["loss"], miou, acc)
        if on_epoch is not None:
            on_epoch(row)
        if not math.isnan(miou) and miou > best_miou:
            best_miou = miou
            best = ckpt.copy()
            best.meta["best_epoch"] = epoch + 1
    ckpt.meta["steps"] = step
    return TrainResult(ckpt, best, history)


def fine_tune(ckpt: Checkpoint, patchset: PatchSet, iterations, cfg: TrainConfig = TrainConfig(),
              on_step=None) -> Checkpoint:
    """Continue training ``ckpt`` for a fixed number of optimizer steps with fresh Adam state."""
    if len(patchset.band_names) != ckpt.config.in_channels:
        raise RegistryError(
            f"patch set has {len(patchset.band_names)} bands, checkpoint expects {ckpt.config.in_channels}"
        )
    if ckpt.band_names and list(patchset.band_names) != list(ckpt.band_names):
        raise RegistryError("patch set band registry differs from the checkpoint's")
    out = ckpt.copy()
    if iterations <= 0:
        return out
    train_idx = np.asarray(patchset.indices("train"))
    if train_idx.size == 0:
        raise ValueError("patch set has no train patches")
    weights = resolve_class_weights(patchset, cfg, ckpt.config.classes)
    x_all, y_all = patchset.arrays()
    state = AdamState()
    step, epoch = 0, 0
    while step < iterations:
        order = train_idx[np.random.default_rng([cfg.seed, epoch]).permutation(train_idx.size)]
        for b in _batches(order, cfg.batch_size):
            if step >= iterations:
                break
            loss = _step(out, x_all[b], y_all[b], weights, state, cfg)
            step += 1
            if on_step is not None:
                on_step(step, loss, out)
        epoch += 1
    out.meta["fine_tune_iterations"] = out.meta.get("fine_tune_iterations", 0) + iterations
    return out


HISTORY_FIELDS = ("epoch", "step", "loss", "test_mIoU", "test_acc")


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"], row["step"]] + [f"{row[k]:.6f}" for k in HISTORY_FIELDS[2:]])
