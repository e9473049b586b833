"""Synthetic five-class scenes with controllable per-band informativeness."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .labels import DEBRIS, NUM_CLASSES, LabelMask
from .raster import ROLES, BandStack, Geometry


def class_map(size, seed=0, smoothness=6.0, num_classes=NUM_CLASSES):
    """Blobby label map: argmax over smoothed random fields, one per class."""
    rng = np.random.default_rng(seed)
    fields = rng.standard_normal((num_classes, size, size))
    fields = np.stack([ndimage.gaussian_filter(f, smoothness, mode="reflect") for f in fields])
    return fields.argmax(axis=0).astype(np.uint8)


def synth_scene(size=128, bands=30, informative=(0, 1, 2), seed=0, noise=0.35, separation=1.5,
                texture=0.6, shift=0.0, labels=None):
    """Return ``(BandStack, LabelMask)`` for a synthetic scene.

    Each band in ``informative`` carries a class-dependent mean (a random
    "colour code" scaled by ``separation``) plus Gaussian noise; the debris
    class also gets a high-frequency checker texture of amplitude
    ``texture`` on those bands. All other bands are i.i.d. unit noise.
    ``shift`` perturbs the colour codes by a seeded random offset to make a
    domain-shifted variant of the same scene family. Band names and roles
    follow the 30-band registry order.
    """
    if bands > len(ROLES):
        raise ValueError(f"at most {len(ROLES)} bands supported")
    informative = tuple(informative)
    rng = np.random.default_rng([seed, 1])
    code_rng = np.random.default_rng(12345)  # codes are shared by every scene in the family
    codes = _spread_codes(code_rng, NUM_CLASSES, len(informative)) * separation
    if shift:
        codes = codes + shift * np.random.default_rng(54321).standard_normal(codes.shape)
    lab = class_map(size, seed) if labels is None else np.asarray(labels, dtype=np.uint8)
    data = rng.standard_normal((bands, size, size))
    yy, xx = np.mgrid[:size, :size]
    checker = np.where((yy + xx) % 2 == 0, 1.0, -1.0)
    for k, b in enumerate(informative):
        data[b] = codes[lab, k] + noise * data[b] + texture * checker * (lab == DEBRIS)
    geom = Geometry(size, size, 0.0, size * 10.0, 10.0)
    names = list(ROLES[:bands])
    stack = BandStack(geom, names, names, data.astype(np.float32))
    return stack, LabelMask(lab, geom)


def _spread_codes(rng, n, dims):
    """Class codes with roughly unit spacing; 1-D codes are evenly spaced levels."""
    if dims == 1:
        levels = np.linspace(-1.0, 1.0, n) * (n - 1) / 2
        return levels[rng.permutation(n)][:, None]
    best, best_gap = None, -1.0
    for _ in range(64):
        c = rng.standard_normal((n, dims))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        gap = min(np.linalg.norm(c[i] - c[j]) for i in range(n) for j in range(i + 1, n))
        if gap > best_gap:
            best, best_gap = c, gap
    return best * 1.5
