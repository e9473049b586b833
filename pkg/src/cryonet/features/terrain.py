"""Slope and aspect from a DEM with Horn's 3x3 stencil."""

from __future__ import annotations

import numpy as np

from ..raster import GeometryError, RasterGrid

FLAT_ASPECT = -1.0


def _horn_gradients(dem: RasterGrid):
    """Return (dz/dx east, dz/dy south, invalid mask); borders use edge replication."""
    if dem.height < 3 or dem.width < 3:
        raise GeometryError(f"DEM must be at least 3x3, got {dem.width}x{dem.height}")
    z = np.pad(dem.values.astype(np.float64), 1, mode="edge")
    bad = np.pad(~dem.valid, 1, mode="edge")
    h, w = dem.values.shape

    def win(dr, dc):
        return z[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    a, b, c = win(-1, -1), win(-1, 0), win(-1, 1)
    d, f = win(0, -1), win(0, 1)
    g, hh, i = win(1, -1), win(1, 0), win(1, 1)
    ps = dem.pixel_size
    dzdx = ((c + 2 * f + i) - (a + 2 * d + g)) / (8 * ps)
    dzdy = ((g + 2 * hh + i) - (a + 2 * b + c)) / (8 * ps)

    invalid = np.zeros((h, w), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            invalid |= bad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return dzdx, dzdy, invalid


def slope(dem: RasterGrid) -> RasterGrid:
    """Slope in degrees."""
    dzdx, dzdy, invalid = _horn_gradients(dem)
    out = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    out[invalid] = dem.nodata
    return dem.with_values(out.astype(np.float32))


def aspect(dem: RasterGrid, flat_tol=1e-9) -> RasterGrid:
    """Downslope azimuth in degrees clockwise from north, -1 on flat pixels.

    Rows are assumed to run north to south, so the downslope direction in
    (east, north) components is (-dz/dx, +dz/dy_south).
    """
    dzdx, dzdy, invalid = _horn_gradients(dem)
    out = np.degrees(np.arctan2(-dzdx, dzdy)) % 360.0
    out[out >= 360.0] = 0.0
    out[np.hypot(dzdx, dzdy) < flat_tol] = FLAT_ASPECT
    out[invalid] = dem.nodata
    return dem.with_values(out.astype(np.float32))
