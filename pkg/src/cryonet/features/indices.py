"""Normalized-difference spectral indices."""

from __future__ import annotations

import enum

import numpy as np

from ..raster import BandStack, RasterGrid


class IndexKind(enum.Enum):
    """Each index is (a - b) / (a + b) over a pair of band roles."""

    NDVI = ("NIR", "Red")
    NDSI = ("Green", "SWIR1")
    NDWI = ("Green", "NIR")
    NDGI = ("Green", "Red")

    @property
    def roles(self):
        return self.value


def normalized_difference(a, b, nodata, zero_tol=1e-12):
    """(a - b) / (a + b) with 0 where the denominator vanishes; nodata propagates."""
    nd = np.float32(nodata)
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    den = a64 + b64
    small = np.abs(den) < zero_tol
    out = np.where(small, 0.0, (a64 - b64) / np.where(small, 1.0, den))
    out[(a == nd) | (b == nd)] = nd
    return out.astype(np.float32)


def spectral_index(stack: BandStack, kind) -> RasterGrid:
    kind = IndexKind[kind] if isinstance(kind, str) else kind
    pos_role, neg_role = kind.roles
    a = stack.by_role(pos_role)
    b = stack.by_role(neg_role)
    return RasterGrid(normalized_difference(a.values, b.values, stack.nodata), stack.geometry, stack.nodata)
