"""Patch extraction, train/test split, class weights and Hann-weighted merging."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .labels import IGNORE, NUM_CLASSES, LabelMask
from .raster import BandStack, Geometry, GeometryError, read_stack, write_stack

HANN_FLOOR = 1e-3


class CoverageError(ValueError):
    pass


class AbsentClassWarning(UserWarning):
    pass


@dataclass
class Patch:
    image: np.ndarray  # C x P x P float32
    labels: np.ndarray | None  # P x P uint8
    offset: tuple


@dataclass
class PatchSet:
    patch_size: int
    stride: int
    patches: list
    split: list
    seed: int
    band_names: list
    scene_shape: tuple  # unpadded (H, W)
    padding: tuple = (0, 0)  # rows, cols added at bottom/right
    class_weights: np.ndarray | None = None

    def __len__(self):
        return len(self.patches)

    def indices(self, which):
        return [i for i, s in enumerate(self.split) if s == which]

    def subset(self, which):
        idx = self.indices(which)
        return [self.patches[i] for i in idx]

    def arrays(self, which=None):
        """Stacked (images N x C x P x P, labels N x P x P) for a split, or all patches."""
        patches = self.patches if which is None else self.subset(which)
        if not patches:
            c = len(self.band_names)
            return (np.zeros((0, c, self.patch_size, self.patch_size), np.float32),
                    np.zeros((0, self.patch_size, self.patch_size), np.uint8))
        x = np.stack([p.image for p in patches])
        y = np.stack([p.labels for p in patches]) if patches[0].labels is not None else None
        return x, y

    @property
    def padded_shape(self):
        return (self.scene_shape[0] + self.padding[0], self.scene_shape[1] + self.padding[1])

    def save(self, directory):
        """Write a manifest plus one stack file per patch (labels as the last band)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        geom = Geometry(self.patch_size, self.patch_size)
        files = []
        for i, p in enumerate(self.patches):
            name = f"patch_{i:05d}.cryo"
            data = p.image
            names = list(self.band_names)
            if p.labels is not None:
                data = np.concatenate([data, p.labels[None].astype(np.float32)])
                names.append("__labels__")
            write_stack(BandStack(geom, names, [], data), d / name)
            files.append(name)
        manifest = {
            "patch_size": self.patch_size,
            "stride": self.stride,
            "seed": self.seed,
            "band_names": list(self.band_names),
            "scene_shape": list(self.scene_shape),
            "padding": list(self.padding),
            "offsets": [list(p.offset) for p in self.patches],
            "split": list(self.split),
            "files": files,
            "class_weights": None if self.class_weights is None else [float(w) for w in self.class_weights],
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        m = json.loads((d / "manifest.json").read_text())
        patches = []
        for name, off in zip(m["files"], m["offsets"]):
            s = read_stack(d / name)
            if s.names and s.names[-1] == "__labels__":
                patches.append(Patch(s.data[:-1].copy(), s.data[-1].astype(np.uint8), tuple(off)))
            else:
                patches.append(Patch(s.data.copy(), None, tuple(off)))
        cw = m.get("class_weights")
        return cls(m["patch_size"], m["stride"], patches, m["split"], m["seed"], m["band_names"],
                   tuple(m["scene_shape"]), tuple(m["padding"]), None if cw is None else np.asarray(cw))


def patch_offsets(length, patch_size, stride):
    """Regular offsets with the last one clamped so the final patch ends at the edge."""
    offs = list(range(0, length - patch_size + 1, stride))
    if offs[-1] != length - patch_size:
        offs.append(length - patch_size)
    return offs


def _pad_amount(length, patch_size):
    pad = max(0, patch_size - length)
    if pad >= length and pad > 0:
        raise GeometryError(
            f"scene dimension {length} too small for patch size {patch_size}: "
            f"reflection padding of {pad} pixels is not possible"
        )
    return pad


def patchify(stack: BandStack, labels: LabelMask | None = None, patch_size=256, stride=None, seed=0):
    """Cut the scene into ``patch_size`` squares on a stride grid.

    Scenes smaller than a patch are reflection-padded at the bottom/right.
    All patches start out in the "train" split; see :func:`split`.
    """
    stride = patch_size if stride is None else stride
    if not 1 <= stride <= patch_size:
        raise ValueError(f"stride must be in [1, {patch_size}], got {stride}")
    h, w = stack.geometry.shape
    if labels is not None and labels.geometry.shape != (h, w):
        raise GeometryError("labels and stack geometry differ")
    ph, pw = _pad_amount(h, patch_size), _pad_amount(w, patch_size)
    data = stack.data
    lab = None if labels is None else labels.classes
    if ph or pw:
        data = np.pad(data, ((0, 0), (0, ph), (0, pw)), mode="reflect")
        if lab is not None:
            lab = np.pad(lab, ((0, ph), (0, pw)), mode="reflect")
    patches = []
    for r in patch_offsets(h + ph, patch_size, stride):
        for c in patch_offsets(w + pw, patch_size, stride):
            img = np.ascontiguousarray(data[:, r:r + patch_size, c:c + patch_size], dtype=np.float32)
            lp = None if lab is None else lab[r:r + patch_size, c:c + patch_size].copy()
            patches.append(Patch(img, lp, (r, c)))
    return PatchSet(patch_size, stride, patches, ["train"] * len(patches), seed,
                    list(stack.names), (h, w), (ph, pw))


def split(patchset: PatchSet, train_fraction=0.8, seed=None) -> PatchSet:
    """Seeded shuffle, then the first ``round(n * train_fraction)`` patches are train."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(patchset)
    if n < 2:
        raise ValueError(f"cannot split {n} patch(es)")
    seed = patchset.seed if seed is None else seed
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(n * train_fraction)), 1), n - 1)
    assignment = ["test"] * n
    for i in order[:n_train]:
        assignment[i] = "train"
    return replace(patchset, split=assignment, seed=seed)


def class_weights(labels, num_classes=NUM_CLASSES):
    """Inverse-frequency weights N_total / (K * N_c), with N_c clamped to at least 1."""
    labels = np.asarray(labels).ravel()
    labels = labels[labels != IGNORE]
    counts = np.bincount(labels.astype(np.int64), minlength=num_classes)[:num_classes]
    total = counts.sum()
    if total == 0:
        raise ValueError("no labelled pixels")
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        warnings.warn(f"classes {absent.tolist()} absent from training labels; "
                      f"using clamped weight {total / num_classes:g}", AbsentClassWarning, stacklevel=2)
    return total / (num_classes * np.maximum(counts, 1).astype(np.float64))


def hann_window(size, floor=HANN_FLOOR):
    """2-D separable Hann weights, floored so border rows keep a non-zero weight."""
    if size < 2:
        raise ValueError("window size must be >= 2")
    n = np.arange(size)
    h = np.maximum(0.5 * (1.0 - np.cos(2.0 * np.pi * n / (size - 1))), floor)
    return np.outer(h, h)


def merge_patches(outputs, scene_shape, window=None):
    """Hann-weighted average of overlapping patch outputs.

    ``outputs`` is an iterable of ``(array C x P x P, (row, col))``.
    Accumulation runs in float64 and in offset order, so the result does
    not depend on the order the patches are supplied in.
    """
    outputs = sorted(outputs, key=lambda t: tuple(t[1]))
    if not outputs:
        raise CoverageError("no patches to merge")
    c, p = outputs[0][0].shape[0], outputs[0][0].shape[-1]
    if window is None:
        window = hann_window(p)
    if window.shape != (p, p):
        raise ValueError(f"window shape {window.shape} != patch size {p}")
    h, w = scene_shape
    acc = np.zeros((c, h, w))
    wsum = np.zeros((h, w))
    # accumulate deviations from the first covering value so equal inputs merge exactly
    ref = np.zeros((c, h, w))
    for arr, (r, col) in outputs:
        sl = (slice(None), slice(r, r + p), slice(col, col + p))
        fresh = wsum[sl[1:]] == 0
        ref[sl] = np.where(fresh, arr, ref[sl])
        acc[sl] += window * (arr - ref[sl])
        wsum[sl[1:]] += window
    uncovered = np.argwhere(wsum == 0)
    if uncovered.size:
        pts = ", ".join(f"({a}, {b})" for a, b in uncovered[:5])
        raise CoverageError(f"{len(uncovered)} scene pixels not covered by any patch, e.g. {pts}")
    return ref + acc / wsum


def unpatchify(outputs, patchset: PatchSet, window=None):
    """Merge over the padded scene and crop back to the original extent."""
    merged = merge_patches(outputs, patchset.padded_shape, window)
    h, w = patchset.scene_shape
    return merged[:, :h, :w]
