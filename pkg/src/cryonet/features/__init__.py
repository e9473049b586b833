"""Derived input layers: spectral indices, terrain, texture, PCA and tasseled cap."""

from .indices import IndexKind, normalized_difference, spectral_index
from .pca import PcaError, PcaLoadings, apply_pca, fit_pca, pca
from .tasseled_cap import TasseledCapCoefficients, tasseled_cap
from .terrain import FLAT_ASPECT, aspect, slope
from .texture import DegenerateRangeWarning, GlcmConfig, glcm_dissimilarity, quantize

__all__ = [
    "IndexKind", "normalized_difference", "spectral_index",
    "PcaError", "PcaLoadings", "apply_pca", "fit_pca", "pca",
    "TasseledCapCoefficients", "tasseled_cap",
    "FLAT_ASPECT", "aspect", "slope",
    "DegenerateRangeWarning", "GlcmConfig", "glcm_dissimilarity", "quantize",
]
