"""Permutation channel importance on the test split."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Patch, PatchSet
from .evaluate import evaluate_patches, metrics
from .labels import CLEAN_ICE, DEBRIS
from .nn.checkpoint import Checkpoint


class PermutationError(ValueError):
    pass


def permute_band(patchset: PatchSet, band, seed=0, permutation=None) -> PatchSet:
    """Move band plane ``band`` of test patch i to test patch ``perm[i]``.

    Other bands, the train split, and the multiset of band planes over the
    test set are unchanged. ``permutation`` overrides the seeded draw.
    """
    test = patchset.indices("test")
    if len(test) < 2:
        raise PermutationError(f"need at least 2 test patches to permute, have {len(test)}")
    nb = len(patchset.band_names)
    if not 0 <= band < nb:
        raise IndexError(f"band index {band} out of range for {nb} bands")
    perm = (np.random.default_rng(seed).permutation(len(test)) if permutation is None
            else np.asarray(permutation))
    if sorted(perm.tolist()) != list(range(len(test))):
        raise PermutationError("permutation must be a rearrangement of the test patches")
    patches = list(patchset.patches)
    planes = [patchset.patches[i].image[band] for i in test]
    for src, dst in enumerate(perm):
        i = test[dst]
        p = patches[i]
        img = p.image.copy()
        img[band] = planes[src]
        patches[i] = Patch(img, p.labels, p.offset)
    return replace(patchset, patches=patches)


@dataclass
class BandImportance:
    band: str
    index: int
    d_accuracy: float
    d_miou: float
    d_iou_clean: float
    d_iou_debris: float
    permuted: list = field(default_factory=list)  # per-repeat (acc, mIoU, IoU clean, IoU debris)


@dataclass
class ImportanceReport:
    baseline: tuple  # (acc, mIoU, IoU clean, IoU debris)
    bands: list
    seed: int
    repeats: int

    def ranking(self):
        return [b.band for b in self.bands]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["band", "dAcc", "dmIoU", "dIoU_clean", "dIoU_debris"])
            for b in self.bands:
                w.writerow([b.band] + [f"{v:.6f}" for v in
                                       (b.d_accuracy, b.d_miou, b.d_iou_clean, b.d_iou_debris)])


def _scores(ckpt, patchset, batch_size):
    x, y = patchset.arrays("test")
    m = metrics(evaluate_patches(ckpt, x, y, batch_size))
    iou = np.nan_to_num(m.iou, nan=0.0)
    return (m.total_accuracy, m.mean_iou, float(iou[CLEAN_ICE]), float(iou[DEBRIS]))


def channel_importance(ckpt: Checkpoint, patchset: PatchSet, seed=0, repeats=3, bands=None,
                       batch_size=16) -> ImportanceReport:
    """Mean drop (baseline - permuted) in accuracy, mIoU and clean/debris IoU per band.

    The baseline is evaluated once on the unmodified test split. Each band is
    permuted ``repeats`` times with seeds derived from ``(seed, band, r)``.
    Bands are returned sorted by descending mIoU drop.
    """
    base = _scores(ckpt, patchset, batch_size)
    bands = range(len(patchset.band_names)) if bands is None else bands
    out = []
    for b in bands:
        runs = [_scores(ckpt, permute_band(patchset, b, seed=[seed, b, r]), batch_size)
                for r in range(repeats)]
        # average the per-repeat drops so identical runs give exactly zero
        d = np.mean(np.asarray(base) - np.asarray(runs), axis=0).tolist()
        out.append(BandImportance(patchset.band_names[b], b, *d, permuted=[list(r) for r in runs]))
    out.sort(key=lambda r: (-r.d_miou, r.index))
    return ImportanceReport(base, out, seed, repeats)
