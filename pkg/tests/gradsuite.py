"""Finite-difference checks for every differentiable op and the tiny network.

``run(seed)`` returns ``{case name: GradCheckResult}``; both the unit tests
and the acceptance script iterate it over seeds.
"""

from __future__ import annotations

import numpy as np

from cryonet.nn import tensor as T
from cryonet.nn.gradcheck import grad_check
from cryonet.nn.model import (Context, ModelConfig, ModelParams, bottleneck, cryonet_forward, cse,
                              decoder_node, init_params, scse, sse)
from cryonet.nn.tensor import Tensor

TINY = ModelConfig(in_channels=30, classes=5, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2)


def _bn_buffers(c):
    return np.zeros(c), np.ones(c)


def _ctx_params(rng, shapes, buffers=()):
    """Random float64 params for a hand-built Context."""
    arrays = {name: rng.standard_normal(shape) * scale for name, (shape, scale) in shapes.items()}
    bufs = {}
    for name, c in buffers:
        bufs[name + ".mean"] = rng.standard_normal(c) * 0.1
        bufs[name + ".var"] = rng.uniform(0.5, 1.5, c)
    return arrays, bufs


def _with_ctx(cfg, bufs, body, training=True):
    def fn(t):
        params = ModelParams({k: v for k, v in t.items() if k != "x"}, {k: v.copy() for k, v in bufs.items()})
        return body(Context(cfg, params, training), t["x"])

    return fn


def cases(rng):
    """Yield (name, fn, inputs)."""
    x = rng.standard_normal((2, 3, 6, 6))
    yield "conv2d 3x3 pad1", lambda t: T.conv2d(t["x"], t["w"], t["b"], padding=1), \
        {"x": x, "w": rng.standard_normal((4, 3, 3, 3)), "b": rng.standard_normal(4)}
    yield "conv2d 3x3 stride2", lambda t: T.conv2d(t["x"], t["w"], stride=2, padding=1), \
        {"x": x, "w": rng.standard_normal((2, 3, 3, 3))}
    yield "conv2d 7x7 stride2", lambda t: T.conv2d(t["x"], t["w"], stride=2, padding=3), \
        {"x": x, "w": rng.standard_normal((2, 3, 7, 7))}
    yield "conv2d 1x1", lambda t: T.conv2d(t["x"], t["w"], t["b"]), \
        {"x": x, "w": rng.standard_normal((5, 3, 1, 1)), "b": rng.standard_normal(5)}
    yield "linear", lambda t: T.linear(t["x"], t["w"], t["b"]), \
        {"x": rng.standard_normal((3, 4)), "w": rng.standard_normal((2, 4)), "b": rng.standard_normal(2)}
    for training in (True, False):
        rm, rv = _bn_buffers(3)
        rm += rng.standard_normal(3) * 0.1

        def bn(t, training=training, rm=rm, rv=rv):
            return T.batch_norm(t["x"], t["g"], t["b"], rm.copy(), rv.copy(), training)

        yield f"batch_norm {'train' if training else 'eval'}", bn, \
            {"x": x, "g": rng.uniform(0.5, 1.5, 3), "b": rng.standard_normal(3)}
    yield "max_pool2d", lambda t: T.max_pool2d(t["x"], 2), {"x": x}
    yield "upsample2x", lambda t: T.upsample2x(t["x"]), {"x": rng.standard_normal((2, 2, 3, 5))}
    yield "concat", lambda t: T.concat([t["a"], t["b"]], axis=1), \
        {"a": rng.standard_normal((2, 1, 3, 3)), "b": rng.standard_normal((2, 2, 3, 3))}
    yield "add broadcast", lambda t: T.add(t["a"], t["b"]), \
        {"a": rng.standard_normal((2, 3, 2, 2)), "b": rng.standard_normal((1, 3, 1, 1))}
    yield "mul broadcast", lambda t: T.mul(t["a"], t["b"]), \
        {"a": rng.standard_normal((2, 3, 2, 2)), "b": rng.standard_normal((2, 1, 2, 2))}
    yield "maximum", lambda t: T.maximum(t["a"], t["b"]), \
        {"a": rng.standard_normal((2, 3, 2)), "b": rng.standard_normal((2, 3, 2))}
    yield "relu", lambda t: T.relu(t["x"]), {"x": x}
    yield "sigmoid", lambda t: T.sigmoid(t["x"]), {"x": x * 3}
    yield "spatial_mean", lambda t: T.spatial_mean(t["x"]), {"x": x}

    c = 4
    cfg = ModelConfig(in_channels=3, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2)
    gates = {"g.cse.fc1.w": ((2, c), 0.7), "g.cse.fc1.b": ((2,), 0.3),
             "g.cse.fc2.w": ((c, 2), 0.7), "g.cse.fc2.b": ((c,), 0.3),
             "g.sse.w": ((1, c, 1, 1), 0.7), "g.sse.b": ((1,), 0.3)}
    fmap = rng.standard_normal((2, c, 4, 4))
    for name, op in (("cSE", lambda ctx, x: cse(ctx, x, "g.cse")),
                     ("sSE", lambda ctx, x: sse(ctx, x, "g.sse")),
                     ("scSE add", lambda ctx, x: scse(ctx, x, "g"))):
        arrays, bufs = _ctx_params(rng, gates)
        yield name, _with_ctx(cfg, bufs, op), {"x": fmap, **arrays}
    max_cfg = ModelConfig(in_channels=3, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2, scse_mode="max")
    arrays, bufs = _ctx_params(rng, gates)
    yield "scSE max", _with_ctx(max_cfg, bufs, lambda ctx, x: scse(ctx, x, "g")), {"x": fmap, **arrays}

    shapes = {"b.conv1.w": ((2, 4, 1, 1), 0.5), "b.conv2.w": ((2, 2, 3, 3), 0.4),
            "b.conv3.w": ((8, 2, 1, 1), 0.5), "b.proj.w": ((8, 4, 1, 1), 0.5)}
    bns = [("b.bn1", 2), ("b.bn2", 2), ("b.bn3", 8), ("b.projbn", 8)]
    for bn_name, ch in bns:
        shapes[bn_name + ".g"] = ((ch,), 0.3)
        shapes[bn_name + ".b"] = ((ch,), 0.3)
    arrays, bufs = _ctx_params(rng, shapes, bns)
    for bn_name, _ in bns:
        arrays[bn_name + ".g"] += 1.0
    yield "bottleneck stride2", _with_ctx(cfg, bufs, lambda ctx, x: bottleneck(ctx, x, "b", 2)), \
        {"x": rng.standard_normal((2, 4, 6, 6)), **arrays}

    shapes = {"d.conv1.w": ((3, 5, 3, 3), 0.3), "d.conv2.w": ((3, 3, 3, 3), 0.3),
            "d.cse.fc1.w": ((2, 3), 0.7), "d.cse.fc1.b": ((2,), 0.3),
            "d.cse.fc2.w": ((3, 2), 0.7), "d.cse.fc2.b": ((3,), 0.3),
            "d.sse.w": ((1, 3, 1, 1), 0.7), "d.sse.b": ((1,), 0.3)}
    bns = [("d.bn1", 3), ("d.bn2", 3)]
    for bn_name, ch in bns:
        shapes[bn_name + ".g"] = ((ch,), 0.3)
        shapes[bn_name + ".b"] = ((ch,), 0.3)
    arrays, bufs = _ctx_params(rng, shapes, bns)
    for bn_name, _ in bns:
        arrays[bn_name + ".g"] += 1.0
    skip = rng.standard_normal((2, 2, 4, 4))
    yield "decoder node", _with_ctx(
        cfg, bufs, lambda ctx, x: decoder_node(ctx, [Tensor(skip), T.upsample2x(x)], "d")), \
        {"x": rng.standard_normal((2, 3, 2, 2)), **arrays}

    yield "tiny network", *_network_case(rng)


def _network_case(rng, cfg=TINY):
    base = init_params(cfg, seed=int(rng.integers(2**31)), dtype=np.float64)
    arrays = {}
    for k, v in base.params.items():
        a = v.data.copy()
        if k.endswith(".g"):
            a = 1.0 + 0.3 * rng.standard_normal(a.shape)  # undo the zero-scale init so every branch matters
        elif k.endswith(".b") and "bn" in k:
            a = 0.1 * rng.standard_normal(a.shape)
        arrays[k] = a
    # frozen running statistics: the network is checked in eval mode
    bufs = {k: (0.1 * rng.standard_normal(v.shape) if k.endswith(".mean") else rng.uniform(0.5, 1.5, v.shape))
            for k, v in base.buffers.items()}

    def fn(t):
        params = ModelParams({k: v for k, v in t.items() if k != "x"}, bufs)
        logits, _ = cryonet_forward(t["x"], cfg, params, training=False)
        return logits

    return fn, {"x": rng.standard_normal((1, cfg.in_channels, 16, 16)), **arrays}


def run(seed, samples=6):
    rng = np.random.default_rng(seed)
    out = {}
    for name, fn, inputs in cases(rng):
        out[name] = grad_check(fn, inputs, samples=samples, seed=[seed, 1])
    return out
