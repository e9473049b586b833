"""Multi-modal glacier segmentation: raster features, labels, a nested-skip scSE network, evaluation."""

__version__ = "0.1.0"
