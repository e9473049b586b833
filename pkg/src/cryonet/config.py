"""Run configuration: one JSON file, strict keys, per-section dataclasses."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .features.texture import GlcmConfig
from .labels import DEFAULT_PRIORITY, VEGETATION_NDVI_THRESHOLD, WATER_NDWI_THRESHOLD
from .nn.model import ModelConfig
from .train import TrainConfig


class RunConfigError(ValueError):
    pass


@dataclass
class FeatureSettings:
    glcm_band: str = "NIR"
    glcm_window: int = 7
    glcm_levels: int = 32
    glcm_offsets: list = field(default_factory=lambda: [[0, 1], [1, 0]])
    pca_components: int = 3
    pca_standardize: bool = False
    pca_loadings: str | None = None  # reuse loadings from a previous scene
    tasseled_cap: str | None = None  # path to a coefficient JSON; None = shipped table
    resample_method: str = "bilinear"

    def glcm(self):
        return GlcmConfig(self.glcm_window, self.glcm_levels, tuple(map(tuple, self.glcm_offsets)))


@dataclass
class LabelSettings:
    priority: list = field(default_factory=lambda: list(DEFAULT_PRIORITY))
    water_threshold: float = WATER_NDWI_THRESHOLD
    vegetation_threshold: float = VEGETATION_NDVI_THRESHOLD


@dataclass
class PatchSettings:
    patch_size: int = 256
    stride: int | None = None
    train_fraction: float = 0.8


@dataclass
class PredictSettings:
    patch_size: int | None = None
    stride: int | None = None
    batch_size: int = 16


@dataclass
class ImportanceSettings:
    repeats: int = 3


@dataclass
class SynthSettings:
    size: int = 128
    bands: int = 30
    informative: list = field(default_factory=lambda: [0, 1, 2])
    noise: float = 0.35
    separation: float = 1.5
    texture: float = 0.6
    shift: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    features: FeatureSettings = field(default_factory=FeatureSettings)
    labels: LabelSettings = field(default_factory=LabelSettings)
    patches: PatchSettings = field(default_factory=PatchSettings)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    predict: PredictSettings = field(default_factory=PredictSettings)
    importance: ImportanceSettings = field(default_factory=ImportanceSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)

    def model_config(self):
        return ModelConfig.from_dict(self.model)

    def train_config(self):
        d = dict(self.train)
        d.setdefault("seed", self.seed)
        return TrainConfig(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["model"] = self.model_config().to_dict()
        d["train"] = self.train_config().to_dict()
        return d

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


_SECTIONS = {
    "features": FeatureSettings,
    "labels": LabelSettings,
    "patches": PatchSettings,
    "predict": PredictSettings,
    "importance": ImportanceSettings,
    "synth": SynthSettings,
}
_FREEFORM = {"model": ModelConfig, "train": TrainConfig}


def _check_keys(where, given, allowed):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise RunConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def from_dict(doc) -> RunConfig:
    if not isinstance(doc, dict):
        raise RunConfigError("run config must be a JSON object")
    _check_keys("config", doc, ["seed", *_SECTIONS, *_FREEFORM])
    kwargs = {}
    if "seed" in doc:
        kwargs["seed"] = int(doc["seed"])
    for name, cls in _SECTIONS.items():
        if name in doc:
            sec = doc[name]
            _check_keys(name, sec, [f.name for f in dataclasses.fields(cls)])
            kwargs[name] = cls(**sec)
    for name, cls in _FREEFORM.items():
        if name in doc:
            _check_keys(name, doc[name], [f.name for f in dataclasses.fields(cls)])
            kwargs[name] = dict(doc[name])
    cfg = RunConfig(**kwargs)
    try:
        cfg.model_config()
        cfg.train_config()
        cfg.features.glcm()
    except (TypeError, ValueError) as exc:
        raise RunConfigError(str(exc)) from exc
    return cfg


def load(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"{path}: invalid JSON: {exc}") from exc
    return from_dict(doc)
