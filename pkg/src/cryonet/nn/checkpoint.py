"""Versioned checkpoint files: JSON manifest header plus little-endian tensor payload."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, init_params
from .tensor import Tensor

MAGIC = b"CRYOCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    band_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, config: ModelConfig, band_names=(), seed=0):
        return cls(config, init_params(config, seed), list(band_names), {"init_seed": seed})

    def copy(self):
        return Checkpoint(self.config, self.params.copy(), list(self.band_names), dict(self.meta))

    def save(self, path):
        entries, chunks, offset = [], [], 0
        for kind, items, dtype in (("param", self.params.arrays(), "<f4"),
                                   ("buffer", self.params.buffers, "<f8")):
            for name, arr in items.items():
                raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
                entries.append({"name": name, "kind": kind, "dtype": dtype,
                                "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
                chunks.append(raw)
                offset += len(raw)
        header = json.dumps({
            "config": self.config.to_dict(),
            "band_names": list(self.band_names),
            "meta": self.meta,
            "tensors": entries,
        }, sort_keys=True).encode("utf-8")
        Path(path).write_bytes(MAGIC + struct.pack("<HI", VERSION, len(header)) + header + b"".join(chunks))

    @classmethod
    def load(cls, path):
        buf = Path(path).read_bytes()
        if buf[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack_from("<HI", buf, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        start = 14
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
        base = start + hlen
        params, buffers = {}, {}
        for e in header["tensors"]:
            lo = base + e["offset"]
            if lo + e["nbytes"] > len(buf):
                raise CheckpointError(f"{path}: payload truncated at tensor {e['name']}")
            arr = np.frombuffer(buf, dtype=e["dtype"], count=e["nbytes"] // np.dtype(e["dtype"]).itemsize,
                                offset=lo).reshape(e["shape"])
            if e["kind"] == "param":
                params[e["name"]] = Tensor(arr.astype(np.float32), requires_grad=True, name=e["name"])
            else:
                buffers[e["name"]] = arr.astype(np.float64)
        config = ModelConfig.from_dict(header["config"])
        return cls(config, ModelParams(params, buffers), header["band_names"], header["meta"])


def params_equal(a: ModelParams, b: ModelParams):
    if a.params.keys() != b.params.keys() or a.buffers.keys() != b.buffers.keys():
        return False
    return (all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
            and all(np.array_equal(a.buffers[k], b.buffers[k]) for k in a.buffers))
