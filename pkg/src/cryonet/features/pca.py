"""Principal components of a band stack via covariance eigendecomposition."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..raster import BandStack


class PcaError(ArithmeticError):
    pass


@dataclass
class PcaLoadings:
    """Fitted PCA: band means, components (k x B, rows are eigenvectors) and eigenvalues."""

    band_names: list
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    all_eigenvalues: np.ndarray
    scale: np.ndarray | None = None

    def save(self, path):
        doc = {
            "band_names": list(self.band_names),
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "all_eigenvalues": self.all_eigenvalues.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
        }
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        scale = doc.get("scale")
        return cls(
            doc["band_names"],
            np.asarray(doc["mean"]),
            np.asarray(doc["components"]),
            np.asarray(doc["eigenvalues"]),
            np.asarray(doc["all_eigenvalues"]),
            None if scale is None else np.asarray(scale),
        )


def _pixels(stack: BandStack):
    valid = stack.valid
    return stack.data[:, valid].astype(np.float64).T, valid


def fit_pca(stack: BandStack, components=3, standardize=False) -> PcaLoadings:
    """Fit on pixels valid in every band.

    ``standardize`` scales each band to unit variance before the
    decomposition (correlation-matrix PCA) instead of using raw values.
    """
    nb = len(stack)
    if components > nb:
        raise ValueError(f"requested {components} components from {nb} bands")
    x, _ = _pixels(stack)
    if x.shape[0] < components + 1:
        raise ValueError(f"need at least {components + 1} valid pixels, have {x.shape[0]}")
    mean = x.mean(axis=0)
    xc = x - mean
    scale = None
    if standardize:
        scale = xc.std(axis=0, ddof=1)
        scale[scale == 0] = 1.0
        xc = xc / scale
    cov = xc.T @ xc / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    tol = 1e-10 * max(abs(evals).max(), 1e-300)
    if not np.all(np.isfinite(evals)) or evals.min() < -tol:
        raise PcaError(f"covariance is not positive semidefinite (min eigenvalue {evals.min():.3e})")
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order].T
    # sign convention: largest-magnitude loading positive
    lead = np.argmax(np.abs(evecs), axis=1)
    signs = np.sign(evecs[np.arange(nb), lead])
    evecs = evecs * signs[:, None]
    return PcaLoadings(list(stack.names), mean, evecs[:components], evals[:components], evals, scale)


def apply_pca(stack: BandStack, loadings: PcaLoadings) -> BandStack:
    """Project ``stack`` onto fitted loadings; works for any scene with the same bands."""
    if list(stack.names) != list(loadings.band_names):
        src = stack.select(loadings.band_names)
    else:
        src = stack
    x, valid = _pixels(src)
    xc = x - loadings.mean
    if loadings.scale is not None:
        xc = xc / loadings.scale
    proj = xc @ loadings.components.T
    k = loadings.components.shape[0]
    h, w = stack.geometry.shape
    out = np.full((k, h, w), np.float32(stack.nodata), dtype=np.float32)
    out[:, valid] = proj.T.astype(np.float32)
    names = [f"PCA{i + 1}" for i in range(k)]
    roles = [n if i < 3 else None for i, n in enumerate(names)]
    return BandStack(stack.geometry, names, roles, out, stack.nodata)


def pca(stack: BandStack, components=3, standardize=False) -> BandStack:
    return apply_pca(stack, fit_pca(stack, components, standardize))
