import math

import numpy as np
import pytest

import gradsuite
from cryonet.nn import tensor as T
from cryonet.nn.checkpoint import Checkpoint, CheckpointError, params_equal
from cryonet.nn.gradcheck import NonFiniteError, grad_check
from cryonet.nn.model import (DESK, FULL_SCALE, ConfigError, Context, ModelConfig, ModelParams,
                              bottleneck, cryonet_forward, cse, encoder_forward, init_params,
                              nested_decoder_forward, parameter_count, scse, sse)
from cryonet.nn.tensor import ShapeError, Tensor


def conv_loop(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(n):
        for f in range(o):
            for r in range(ho):
                for q in range(wo):
                    acc = 0.0 if b is None else b[f]
                    for ch in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += w[f, ch, u, v] * xp[i, ch, r * stride + u, q * stride + v]
                    out[i, f, r, q] = acc
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 3, 7)])
def test_conv_matches_loop(stride, pad, k):
    rng = np.random.default_rng(k + stride)
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    np.testing.assert_allclose(got, conv_loop(x, w, b, stride, pad), atol=1e-5)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_pool_and_upsample_oracles():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 4, 6))
    pooled = T.max_pool2d(Tensor(x), 2).data
    for r in range(2):
        for c in range(3):
            assert pooled[0, 1, r, c] == x[0, 1, 2 * r:2 * r + 2, 2 * c:2 * c + 2].max()
    up = T.upsample2x(Tensor(x)).data

    def src(o, n):
        s = min(max((o + 0.5) / 2 - 0.5, 0.0), n - 1)
        i0 = min(int(math.floor(s)), n - 1)
        i1 = min(i0 + 1, n - 1)
        return i0, i1, s - i0

    for r in range(8):
        for c in range(12):
            r0, r1, fr = src(r, 4)
            c0, c1, fc = src(c, 6)
            a = x[0, 0]
            ref = ((1 - fr) * ((1 - fc) * a[r0, c0] + fc * a[r0, c1])
                   + fr * ((1 - fc) * a[r1, c0] + fc * a[r1, c1]))
            assert abs(up[0, 0, r, c] - ref) < 1e-12


def test_pool_tie_routes_to_first():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    T.max_pool2d(x, 2).backward(np.ones((1, 1, 1, 1)))
    assert x.grad.ravel().tolist() == [1, 0, 0, 0]


def test_batch_norm_running_stats():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 2, 3, 3)) * 3 + 1
    rm, rv = np.zeros(2), np.ones(2)
    out = T.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_suite(seed):
    for name, res in gradsuite.run(seed).items():
        assert res.max_rel_error < 1e-3, (name, res)
        assert res.checked > 0, name


def test_grad_check_linear_exact_and_nonfinite():
    rng = np.random.default_rng(2)
    res = grad_check(lambda t: T.linear(t["x"], t["w"]), {"x": rng.standard_normal((2, 3)),
                                                          "w": rng.standard_normal((4, 3))})
    assert res.max_rel_error < 1e-6
    with pytest.raises(NonFiniteError):
        grad_check(lambda t: T.mul(t["x"], Tensor(np.array([np.inf]))), {"x": np.ones(1)})


def test_relu_off_kink():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(50)
    res = grad_check(lambda t: T.relu(t["x"]), {"x": x}, samples=50,
                     exclude=lambda name, i: abs(x[i]) <= 1e-2)
    assert res.max_rel_error < 1e-4


def _gates(c, hidden):
    rng = np.random.default_rng(4)
    return {"a.cse.fc1.w": Tensor(rng.standard_normal((hidden, c))), "a.cse.fc1.b": Tensor(np.zeros(hidden)),
            "a.cse.fc2.w": Tensor(rng.standard_normal((c, hidden))), "a.cse.fc2.b": Tensor(np.zeros(c)),
            "a.sse.w": Tensor(rng.standard_normal((1, c, 1, 1))), "a.sse.b": Tensor(np.zeros(1))}


def _saturate(p, cse_bias, sse_bias):
    p["a.cse.fc2.w"].data[:] = 0
    p["a.cse.fc2.b"].data[:] = cse_bias
    p["a.sse.w"].data[:] = 0
    p["a.sse.b"].data[:] = sse_bias


def test_scse_saturation():
    x = Tensor(np.random.default_rng(5).standard_normal((2, 4, 3, 3)))
    p = _gates(4, 2)
    ctx = Context(ModelConfig(), ModelParams(p, {}))
    _saturate(p, 50.0, 50.0)
    np.testing.assert_allclose(scse(ctx, x, "a").data, 2 * x.data, atol=1e-12)
    _saturate(p, -50.0, -50.0)
    np.testing.assert_allclose(scse(ctx, x, "a").data, 0, atol=1e-12)
    assert np.all(scse(ctx, Tensor(np.zeros((1, 4, 2, 2))), "a").data == 0)


def test_scse_is_sum_and_max_of_gates():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((2, 4, 3, 3)))
    p = _gates(4, 2)
    for k in p:
        p[k].data[:] = rng.standard_normal(p[k].shape)
    ctx = Context(ModelConfig(), ModelParams(p, {}))
    a, b = cse(ctx, x, "a.cse").data, sse(ctx, x, "a.sse").data
    np.testing.assert_allclose(scse(ctx, x, "a").data, a + b, atol=1e-6)
    ctx = Context(ModelConfig(scse_mode="max"), ModelParams(p, {}))
    np.testing.assert_allclose(scse(ctx, x, "a").data, np.maximum(a, b), atol=1e-6)
    # straight-line channel gate
    z = x.data.mean(axis=(2, 3))
    h = np.maximum(z @ p["a.cse.fc1.w"].data.T + p["a.cse.fc1.b"].data, 0)
    s = 1 / (1 + np.exp(-(h @ p["a.cse.fc2.w"].data.T + p["a.cse.fc2.b"].data)))
    np.testing.assert_allclose(a, x.data * s[:, :, None, None], atol=1e-6)


def test_encoder_shapes_default():
    params = init_params(DESK, 0)
    feats = encoder_forward(np.zeros((1, 30, 256, 256), np.float32), DESK, params)
    assert [f.shape[2] for f in feats] == [128, 64, 32, 16, 8]
    assert [f.shape[1] for f in feats] == list(DESK.widths)


def test_encoder_identity_residual_at_init():
    cfg = ModelConfig(in_channels=3, widths=(4, 8, 16), blocks=(2, 1))
    params = init_params(cfg, 0, np.float64)
    ctx = Context(cfg, params)
    x = Tensor(np.abs(np.random.default_rng(7).standard_normal((1, 8, 4, 4))))
    # second block of stage 1 has no projection; zero final scale makes it the identity on ReLU outputs
    np.testing.assert_allclose(bottleneck(ctx, x, "enc1.1", 1).data, x.data)


def test_decoder_shape_and_head():
    params = init_params(DESK, 0)
    x = np.random.default_rng(8).standard_normal((1, 30, 64, 64)).astype(np.float32)
    feats = encoder_forward(x, DESK, params)
    top = nested_decoder_forward(feats, DESK, params)
    assert top.shape == (1, DESK.dec_widths[0], 32, 32)
    logits, probs = cryonet_forward(x, DESK, params)
    assert logits.shape == (1, 5, 64, 64)
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)
    assert probs.min() >= 0


def test_nested_depth_one_is_unet():
    cfg = ModelConfig(nested_depth=1)
    assert cfg.nodes() == [(3, 1), (2, 2), (1, 3), (0, 4)]
    assert len(DESK.nodes()) == 10
    params = init_params(cfg, 0)
    # each node sees exactly one skip plus the upsampled input
    assert params["dec2_2.conv1.w"].shape[1] == cfg.widths[2] + cfg.dec_widths[3]
    logits, _ = cryonet_forward(np.zeros((1, 30, 32, 32), np.float32), cfg, params)
    assert logits.shape == (1, 5, 32, 32)
    assert parameter_count(cfg) == params.count()
    with pytest.raises(ConfigError):
        ModelConfig(nested_depth=5)


def test_attention_saturated_equals_plain():
    on = ModelConfig(in_channels=4, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2)
    off = ModelConfig(in_channels=4, widths=(4, 8, 16), blocks=(1, 1), attention=False)
    p_on = init_params(on, 3, np.float64)
    p_off = init_params(off, 3, np.float64)
    for k in p_off.params:
        p_on.params[k].data[...] = p_off.params[k].data
    for k in list(p_on.params):
        if k.endswith("cse.fc2.w") or k.endswith("sse.w"):
            p_on.params[k].data[...] = 0
        elif k.endswith("cse.fc2.b"):
            p_on.params[k].data[...] = 50.0  # channel gate -> 1
        elif k.endswith("sse.b"):
            p_on.params[k].data[...] = -50.0  # spatial gate -> 0
    x = np.random.default_rng(9).standard_normal((2, 4, 16, 16))
    a, _ = cryonet_forward(x, on, p_on)
    b, _ = cryonet_forward(x, off, p_off)
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)


def test_constant_input_gives_constant_logits_interior():
    cfg = ModelConfig(in_channels=3, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2)
    params = init_params(cfg, 1, np.float64)
    logits, _ = cryonet_forward(np.ones((1, 3, 128, 128)), cfg, params)
    # zero padding breaks the symmetry within the receptive field of the border
    centre = logits.data[0, :, 56:72, 56:72]
    np.testing.assert_allclose(centre, centre[:, :1, :1] * np.ones_like(centre), atol=1e-9)


def test_determinism_and_size_errors():
    cfg = ModelConfig(in_channels=3, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2)
    x = np.random.default_rng(10).standard_normal((1, 3, 16, 16)).astype(np.float32)
    a = cryonet_forward(x, cfg, init_params(cfg, 5))[0].data
    b = cryonet_forward(x, cfg, init_params(cfg, 5))[0].data
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ShapeError, match="pad by 4 rows"):
        cryonet_forward(np.zeros((1, 3, 12, 16)), cfg, init_params(cfg, 5))
    with pytest.raises(ShapeError):
        cryonet_forward(np.zeros((1, 2, 16, 16)), cfg, init_params(cfg, 5))


def test_parameter_counts():
    assert parameter_count(DESK) == init_params(DESK, 0).count()
    assert abs(parameter_count(FULL_SCALE) - 70e6) / 70e6 < 0.2
    small = ModelConfig(scse_reduction=1000)
    assert parameter_count(small) == init_params(small, 0).count()


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(in_channels=3, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2)
    ck = Checkpoint.fresh(cfg, ["a", "b", "c"], seed=2)
    ck.params.buffers["stem.bn.mean"][:] = [0.1, 0.2, 0.3, 0.4]
    ck.meta["norm_stats"] = [[0.0, 1.0]] * 3
    ck.save(tmp_path / "m.ckpt")
    back = Checkpoint.load(tmp_path / "m.ckpt")
    assert back.config == cfg and back.band_names == ["a", "b", "c"] and back.meta == ck.meta
    assert params_equal(back.params, ck.params)
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "bad.ckpt")
