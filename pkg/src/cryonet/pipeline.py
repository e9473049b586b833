"""Assembling the 30-band model input from source rasters."""

from __future__ import annotations

import numpy as np

from .features import (IndexKind, PcaLoadings, TasseledCapCoefficients, apply_pca, aspect,
                       fit_pca, glcm_dissimilarity, slope, spectral_index, tasseled_cap)
from .features.texture import GlcmConfig
from .raster import ROLES, BandStack, RasterError, resample

SENTINEL2_ROLES = ROLES[:12]
SOURCE_ROLES = SENTINEL2_ROLES + ("Elevation", "LST", "Velocity", "Coherence", "Phase")


def collect_sources(stacks, method="bilinear"):
    """Merge role-tagged bands from several stacks onto the first stack's lattice.

    Bands on a different lattice are resampled with ``method``; later files
    may not re-supply a role already seen.
    """
    stacks = list(stacks)
    if not stacks:
        raise RasterError("no input stacks")
    ref = stacks[0].geometry
    out = None
    for s in stacks:
        for i, role in enumerate(s.roles):
            if role is None:
                continue
            grid = s.band(s.names[i])
            if grid.geometry != ref:
                grid = resample(grid, ref, method)
            if out is None:
                out = BandStack.from_grids([(role, grid, role)])
            elif role in out.roles:
                raise RasterError(f"role {role} supplied twice")
            else:
                out = out.append(role, grid, role)
    missing = [r for r in SOURCE_ROLES if out is None or r not in out.roles]
    if missing:
        raise RasterError(f"input stacks are missing source bands: {missing}")
    return out


def build_feature_stack(sources: BandStack, glcm: GlcmConfig = GlcmConfig(), glcm_band="NIR",
                        pca_components=3, pca_standardize=False, pca_loadings: PcaLoadings | None = None,
                        tc: TasseledCapCoefficients | None = None):
    """Derive terrain, index, texture, PCA and tasseled-cap layers.

    Returns ``(stack, loadings)``: the stack in canonical role order and the
    PCA loadings that were fitted (or reused when ``pca_loadings`` is given).
    """
    dem = sources.by_role("Elevation")
    derived = {
        "Slope": slope(dem),
        "Aspect": aspect(dem),
        "GLCM": glcm_dissimilarity(sources.by_role(glcm_band), glcm),
    }
    for kind in IndexKind:
        derived[kind.name] = spectral_index(sources, kind)
    optical = sources.select(SENTINEL2_ROLES)
    loadings = pca_loadings or fit_pca(optical, pca_components, pca_standardize)
    pcs = apply_pca(optical, loadings)
    tcs = tasseled_cap(sources, tc)
    for extra in (pcs, tcs):
        for name in extra.names:
            derived[name] = extra.band(name)
    bands = []
    for role in ROLES:
        if role in sources.roles:
            grid = sources.by_role(role)
        elif role in derived:
            grid = derived[role]
        else:
            continue
        bands.append((role, grid, role))
    stack = BandStack.from_grids(bands)
    # a pixel invalid in any source band is invalid everywhere
    bad = ~stack.valid
    if bad.any():
        data = stack.data.copy()
        data[:, bad] = np.float32(stack.nodata)
        stack = BandStack(stack.geometry, stack.names, stack.roles, data, stack.nodata)
    return stack, loadings
