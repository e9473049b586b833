"""Reference-label synthesis from threshold rules and glacier/debris masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BandStack, Geometry, GeometryError, RasterGrid

BACKGROUND, CLEAN_ICE, DEBRIS, WATER, VEGETATION = range(5)
IGNORE = 255
CLASS_NAMES = ("background", "clean-ice", "debris-covered", "water", "vegetation")
NUM_CLASSES = len(CLASS_NAMES)
DEFAULT_PRIORITY = (DEBRIS, CLEAN_ICE, WATER, VEGETATION)

WATER_NDWI_THRESHOLD = 0.17
VEGETATION_NDVI_THRESHOLD = 0.3


@dataclass
class LabelMask:
    classes: np.ndarray
    geometry: Geometry

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.uint8)
        if self.classes.shape != self.geometry.shape:
            raise GeometryError(f"label shape {self.classes.shape} != geometry {self.geometry.shape}")
        bad = ~np.isin(self.classes, (0, 1, 2, 3, 4, IGNORE))
        if bad.any():
            raise ValueError(f"invalid class ids: {np.unique(self.classes[bad]).tolist()}")

    def counts(self):
        """Per-class pixel counts followed by the ignore count."""
        c = np.bincount(self.classes.ravel(), minlength=256)
        return np.append(c[:NUM_CLASSES], c[IGNORE])

    def to_stack(self, name="labels"):
        return BandStack(self.geometry, [name], [None], self.classes[None], float(IGNORE))

    @classmethod
    def from_stack(cls, stack: BandStack):
        if len(stack) != 1:
            raise ValueError(f"label stack must have one band, has {len(stack)}")
        return cls(stack.data[0].astype(np.uint8), stack.geometry)


def _check_same(*grids):
    shape = np.shape(grids[0])
    for g in grids[1:]:
        if np.shape(g) != shape:
            raise GeometryError(f"mask shapes differ: {shape} vs {np.shape(g)}")


def threshold_mask(band: RasterGrid, threshold: float, direction="greater") -> np.ndarray:
    """Strict comparison; exact ties and nodata are False."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    v = band.values
    if direction == "greater":
        hit = v > np.float32(threshold)
    elif direction == "less":
        hit = v < np.float32(threshold)
    else:
        raise ValueError(f"direction must be 'greater' or 'less', got {direction!r}")
    return hit & band.valid


def subtract_mask(full_glacier, debris) -> np.ndarray:
    full_glacier = np.asarray(full_glacier, dtype=bool)
    debris = np.asarray(debris, dtype=bool)
    _check_same(full_glacier, debris)
    return full_glacier & ~debris


def compose_labels(clean, debris, water, vegetation, priority=DEFAULT_PRIORITY,
                   geometry: Geometry | None = None, ignore=None):
    """Assign each pixel the first class in ``priority`` whose mask is set.

    Returns ``(LabelMask, counts)`` with counts as in :meth:`LabelMask.counts`.
    ``ignore`` optionally marks pixels to be written as 255.
    """
    masks = {CLEAN_ICE: clean, DEBRIS: debris, WATER: water, VEGETATION: vegetation}
    masks = {k: np.asarray(v, dtype=bool) for k, v in masks.items()}
    _check_same(*masks.values())
    if sorted(priority) != [1, 2, 3, 4]:
        raise ValueError(f"priority must be a permutation of 1..4, got {priority}")
    shape = masks[CLEAN_ICE].shape
    if geometry is None:
        geometry = Geometry(shape[1], shape[0])
    out = np.zeros(shape, dtype=np.uint8)
    # lowest priority first so higher priorities overwrite
    for cls in reversed(tuple(priority)):
        out[masks[cls]] = cls
    if ignore is not None:
        ignore = np.asarray(ignore, dtype=bool)
        _check_same(ignore, out)
        out[ignore] = IGNORE
    mask = LabelMask(out, geometry)
    return mask, mask.counts()


def labels_from_stack(stack: BandStack, full_glacier, debris, priority=DEFAULT_PRIORITY,
                      water_threshold=WATER_NDWI_THRESHOLD,
                      vegetation_threshold=VEGETATION_NDVI_THRESHOLD):
    """Build the five-class mask from NDWI/NDVI bands plus outline masks.

    Clean ice is the glacier outline minus debris; water is NDWI above
    ``water_threshold``; vegetation is NDVI above ``vegetation_threshold``.
    Pixels that are nodata in any band are set to ignore.
    """
    water = threshold_mask(stack.by_role("NDWI"), water_threshold, "greater")
    veg = threshold_mask(stack.by_role("NDVI"), vegetation_threshold, "greater")
    clean = subtract_mask(full_glacier, debris)
    return compose_labels(clean, debris, water, veg, priority, stack.geometry, ignore=~stack.valid)
