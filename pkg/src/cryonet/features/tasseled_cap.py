"""Tasseled-cap brightness/greenness/wetness as a coefficient-table transform."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..raster import BandStack

OUTPUT_NAMES = ("TCB", "TCG", "TCW")


@dataclass
class TasseledCapCoefficients:
    bands: list
    matrix: np.ndarray  # 3 x B; rows brightness, greenness, wetness

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != 3:
            raise ValueError(f"coefficient matrix must have 3 rows, got shape {self.matrix.shape}")
        if self.matrix.shape[1] != len(self.bands):
            raise ValueError(
                f"{self.matrix.shape[1]} coefficient columns for {len(self.bands)} declared bands"
            )

    @classmethod
    def from_dict(cls, doc):
        return cls(list(doc["bands"]), [doc["brightness"], doc["greenness"], doc["wetness"]])

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls):
        text = resources.files("cryonet.features").joinpath("data/sentinel2_tasseled_cap.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {
            "bands": list(self.bands),
            "brightness": self.matrix[0].tolist(),
            "greenness": self.matrix[1].tolist(),
            "wetness": self.matrix[2].tolist(),
        }


def tasseled_cap(stack: BandStack, coeffs: TasseledCapCoefficients | None = None) -> BandStack:
    coeffs = coeffs or TasseledCapCoefficients.default()
    idx = [stack.index(role) for role in coeffs.bands]
    x = stack.data[idx].astype(np.float64)
    nodata = np.float32(stack.nodata)
    bad = np.any(x == nodata, axis=0)
    out = np.einsum("kb,bhw->khw", coeffs.matrix, x)
    out[:, bad] = nodata
    return BandStack(stack.geometry, list(OUTPUT_NAMES), list(OUTPUT_NAMES), out.astype(np.float32), stack.nodata)
