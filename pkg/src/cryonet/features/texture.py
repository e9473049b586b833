"""Moving-window GLCM dissimilarity."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..raster import RasterGrid


class DegenerateRangeWarning(UserWarning):
    """Band has a single value; texture is identically zero."""


@dataclass(frozen=True)
class GlcmConfig:
    window: int = 7
    levels: int = 32
    offsets: tuple = ((0, 1), (1, 0))
    statistic: str = "dissimilarity"

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if not self.offsets:
            raise ValueError("at least one offset required")
        if self.statistic != "dissimilarity":
            raise ValueError(f"unsupported GLCM statistic {self.statistic!r}")
        object.__setattr__(self, "offsets", tuple(tuple(int(v) for v in o) for o in self.offsets))


def quantize(values, valid, levels):
    """Equal-width bins over the valid range; returns (int codes, degenerate flag)."""
    v = values[valid].astype(np.float64)
    lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 0.0)
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64), True
    q = np.floor((values.astype(np.float64) - lo) / (hi - lo) * levels)
    q = np.clip(q, 0, levels - 1).astype(np.int64)
    q[~valid] = 0
    return q, False


def _box_sum(img, r0, r1, c0, c1):
    """Sum of img[r0:r1+1, c0:c1+1] for per-pixel bound arrays (empty ranges give 0)."""
    s = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    s[1:, 1:] = img.cumsum(0).cumsum(1)
    empty = (r1 < r0)[:, None] | (c1 < c0)[None, :]
    r1 = np.maximum(r1, r0 - 1)
    c1 = np.maximum(c1, c0 - 1)
    R0, R1 = r0[:, None], (r1 + 1)[:, None]
    C0, C1 = c0[None, :], (c1 + 1)[None, :]
    out = s[R1, C1] - s[R0, C1] - s[R1, C0] + s[R0, C0]
    out[empty] = 0.0
    return out


def glcm_dissimilarity(band: RasterGrid, cfg: GlcmConfig = GlcmConfig()) -> RasterGrid:
    """Per-pixel dissimilarity sum P(i,j)|i-j| of the symmetric co-occurrence matrix.

    The window is clipped at the scene border. With symmetric counting the
    normalized dissimilarity reduces to the mean absolute level difference
    over all in-window valid pixel pairs, which is what is accumulated here
    with prefix sums instead of building per-window matrices.
    """
    valid = band.valid
    q, degenerate = quantize(band.values, valid, cfg.levels)
    h, w = q.shape
    if degenerate:
        warnings.warn("GLCM input has a degenerate value range; texture set to 0",
                      DegenerateRangeWarning, stacklevel=2)
        out = np.zeros((h, w), dtype=np.float32)
        out[~valid] = band.nodata
        return band.with_values(out)

    half = cfg.window // 2
    rows = np.arange(h)
    cols = np.arange(w)
    wr0, wr1 = np.maximum(rows - half, 0), np.minimum(rows + half, h - 1)
    wc0, wc1 = np.maximum(cols - half, 0), np.minimum(cols + half, w - 1)

    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for dy, dx in cfg.offsets:
        diff = np.zeros((h, w))
        ok = np.zeros((h, w))
        ya, yb = max(0, -dy), min(h, h - dy)
        xa, xb = max(0, -dx), min(w, w - dx)
        if ya < yb and xa < xb:
            a = q[ya:yb, xa:xb]
            b = q[ya + dy:yb + dy, xa + dx:xb + dx]
            both = valid[ya:yb, xa:xb] & valid[ya + dy:yb + dy, xa + dx:xb + dx]
            diff[ya:yb, xa:xb] = np.abs(a - b) * both
            ok[ya:yb, xa:xb] = both
        # anchor p and partner p + (dy, dx) must both lie in the window
        r0, r1 = np.maximum(wr0, wr0 - dy), np.minimum(wr1, wr1 - dy)
        c0, c1 = np.maximum(wc0, wc0 - dx), np.minimum(wc1, wc1 - dx)
        total += _box_sum(diff, r0, r1, c0, c1)
        count += _box_sum(ok, r0, r1, c0, c1)

    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    out[~valid] = band.nodata
    return band.with_values(out.astype(np.float32))
