"""CryoNet: residual bottleneck encoder, nested dense-skip decoder with scSE gates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Network shape.

    ``widths[0]`` is the stem width, ``widths[1:]`` the output widths of the
    residual stages (one entry per ``blocks`` entry). A bottleneck's inner
    width is its output width divided by ``expansion``.
    ``decoder_widths`` gives the node width per decoder level and defaults to
    ``widths[:-1]``. ``nested_depth`` trims the dense grid: 1 keeps only
    the U-Net diagonal, ``levels - 1`` (the default) keeps every node.
    """

    in_channels: int = 30
    classes: int = 5
    widths: tuple = (16, 32, 64, 128, 256)
    blocks: tuple = (2, 2, 3, 2)
    decoder_widths: tuple | None = None
    expansion: int = 4
    stem_kernel: int = 7
    scse_reduction: int = 16
    scse_mode: str = "add"
    attention: bool = True
    nested_depth: int | None = None
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if self.decoder_widths is not None:
            object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        if len(self.widths) < 2:
            raise ConfigError("need a stem width and at least one stage width")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"widths must be strictly increasing, got {self.widths}")
        if len(self.blocks) != len(self.widths) - 1:
            raise ConfigError(f"{len(self.blocks)} block counts for {len(self.widths) - 1} stages")
        if any(b < 1 for b in self.blocks):
            raise ConfigError("every stage needs at least one bottleneck block")
        if self.scse_reduction < 1:
            raise ConfigError("scse_reduction must be >= 1")
        if self.scse_mode not in ("add", "max"):
            raise ConfigError(f"scse_mode must be 'add' or 'max', got {self.scse_mode!r}")
        if len(self.dec_widths) != self.levels - 1:
            raise ConfigError(f"decoder_widths needs {self.levels - 1} entries")
        if not 1 <= self.depth <= self.levels - 1:
            raise ConfigError(f"nested_depth must be in [1, {self.levels - 1}]")

    @property
    def levels(self):
        """Encoder feature levels including the stem output."""
        return len(self.widths)

    @property
    def dec_widths(self):
        return self.decoder_widths if self.decoder_widths is not None else self.widths[:-1]

    @property
    def depth(self):
        return self.nested_depth if self.nested_depth is not None else self.levels - 1

    @property
    def divisor(self):
        return 2 ** self.levels

    def nodes(self):
        """Decoder nodes (i, j), j >= 1, in evaluation order."""
        top = self.levels - 1
        return [(i, j) for j in range(1, top + 1) for i in range(top - j + 1)
                if i + j >= top - self.depth + 1]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("widths", "blocks", "decoder_widths"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


DESK = ModelConfig()
FULL_SCALE = ModelConfig(
    widths=(64, 256, 512, 1024, 2048),
    blocks=(3, 4, 23, 3),
    decoder_widths=(64, 128, 256, 512),
)


@dataclass
class ModelParams:
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype):
        return ModelParams(
            {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()},
            {k: v.astype(np.float64) for k, v in self.buffers.items()},
        )

    def copy(self):
        return self.astype(next(iter(self.params.values())).dtype)

    def arrays(self):
        return {k: v.data for k, v in self.params.items()}


class _Init:
    def __init__(self, rng, dtype=np.float32):
        self.rng = rng
        self.dtype = dtype
        self.p = ModelParams()

    def conv(self, name, o, c, k):
        bound = 1.0 / math.sqrt(c * k * k)
        self._add(name + ".w", self.rng.uniform(-bound, bound, (o, c, k, k)) * math.sqrt(6.0))

    def bias(self, name, n, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        self._add(name, self.rng.uniform(-bound, bound, (n,)))

    def linear(self, name, o, i):
        bound = math.sqrt(6.0 / i)
        self._add(name + ".w", self.rng.uniform(-bound, bound, (o, i)))
        self._add(name + ".b", np.zeros(o))

    def bn(self, name, c, zero_scale=False):
        self._add(name + ".g", np.zeros(c) if zero_scale else np.ones(c))
        self._add(name + ".b", np.zeros(c))
        self.p.buffers[name + ".mean"] = np.zeros(c)
        self.p.buffers[name + ".var"] = np.ones(c)

    def _add(self, name, arr):
        if name in self.p.params:
            raise KeyError(f"duplicate parameter {name}")
        self.p.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True, name=name)


def _stage_plan(cfg: ModelConfig):
    """Yield (stage, prefix, in_ch, mid, out_ch, stride) for every bottleneck block."""
    in_ch = cfg.widths[0]
    for s, (out_ch, n) in enumerate(zip(cfg.widths[1:], cfg.blocks), start=1):
        mid = max(out_ch // cfg.expansion, 1)
        for b in range(n):
            stride = 2 if (b == 0 and s > 1) else 1
            yield s, f"enc{s}.{b}", in_ch, mid, out_ch, stride
            in_ch = out_ch


def _node_inputs(cfg: ModelConfig, i, j, present):
    """Channel count entering decoder node (i, j)."""
    width = lambda a, b: cfg.widths[a] if b == 0 else cfg.dec_widths[a]  # noqa: E731
    same = [width(i, k) for k in range(j) if k == 0 or (i, k) in present]
    return sum(same) + width(i + 1, j - 1)


def init_params(cfg: ModelConfig, seed=0, dtype=np.float32) -> ModelParams:
    """Fan-in scaled uniform convs; zero final BN scale in each residual branch; zero gate biases."""
    ini = _Init(np.random.default_rng(seed), dtype)
    ini.conv("stem.conv", cfg.widths[0], cfg.in_channels, cfg.stem_kernel)
    ini.bn("stem.bn", cfg.widths[0])
    for _, prefix, cin, mid, cout, stride in _stage_plan(cfg):
        ini.conv(prefix + ".conv1", mid, cin, 1)
        ini.bn(prefix + ".bn1", mid)
        ini.conv(prefix + ".conv2", mid, mid, 3)
        ini.bn(prefix + ".bn2", mid)
        ini.conv(prefix + ".conv3", cout, mid, 1)
        ini.bn(prefix + ".bn3", cout, zero_scale=True)
        if cin != cout or stride != 1:
            ini.conv(prefix + ".proj", cout, cin, 1)
            ini.bn(prefix + ".projbn", cout)
    present = set(cfg.nodes())
    for i, j in cfg.nodes():
        name = f"dec{i}_{j}"
        cin = _node_inputs(cfg, i, j, present)
        c = cfg.dec_widths[i]
        ini.conv(name + ".conv1", c, cin, 3)
        ini.bn(name + ".bn1", c)
        ini.conv(name + ".conv2", c, c, 3)
        ini.bn(name + ".bn2", c)
        if cfg.attention:
            hidden = max(math.ceil(c / cfg.scse_reduction), 1)
            ini.linear(name + ".cse.fc1", hidden, c)
            ini.linear(name + ".cse.fc2", c, hidden)
            ini.conv(name + ".sse", 1, c, 1)
            ini.p.params[name + ".sse.b"] = Tensor(np.zeros(1, dtype=dtype), requires_grad=True, name=name + ".sse.b")
    ini.conv("head", cfg.classes, cfg.dec_widths[0], 1)
    ini.bias("head.b", cfg.classes, cfg.dec_widths[0])
    return ini.p


def parameter_count(cfg: ModelConfig) -> int:
    """Trainable parameters without allocating them."""
    total = 0

    def conv(o, c, k):
        return o * c * k * k

    total += conv(cfg.widths[0], cfg.in_channels, cfg.stem_kernel) + 2 * cfg.widths[0]
    for _, _, cin, mid, cout, stride in _stage_plan(cfg):
        total += conv(mid, cin, 1) + conv(mid, mid, 3) + conv(cout, mid, 1) + 4 * mid + 2 * cout
        if cin != cout or stride != 1:
            total += conv(cout, cin, 1) + 2 * cout
    present = set(cfg.nodes())
    for i, j in cfg.nodes():
        c = cfg.dec_widths[i]
        total += conv(c, _node_inputs(cfg, i, j, present), 3) + conv(c, c, 3) + 4 * c
        if cfg.attention:
            hidden = max(math.ceil(c / cfg.scse_reduction), 1)
            total += 2 * hidden * c + hidden + c + c + 1
    total += cfg.classes * cfg.dec_widths[0] + cfg.classes
    return total


# ------------------------------------------------------------------ blocks

class Context:
    """Forward-pass state: parameters, buffers and train/eval mode."""

    def __init__(self, cfg: ModelConfig, params: ModelParams, training=False):
        self.cfg = cfg
        self.params = params
        self.training = training

    def p(self, name):
        return self.params.params[name]

    def conv(self, x, name, stride=1, padding=0, bias=False):
        b = self.p(name + ".b") if bias else None
        return T.conv2d(x, self.p(name + ".w"), b, stride=stride, padding=padding)

    def bn(self, x, name):
        buf = self.params.buffers
        return T.batch_norm(x, self.p(name + ".g"), self.p(name + ".b"), buf[name + ".mean"],
                            buf[name + ".var"], self.training, self.cfg.bn_momentum, self.cfg.bn_eps)


def conv_bn_relu(ctx, x, name, bn_name, k=3):
    return T.relu(ctx.bn(ctx.conv(x, name, padding=k // 2), bn_name))


def bottleneck(ctx: Context, x, prefix, stride):
    h = T.relu(ctx.bn(ctx.conv(x, prefix + ".conv1"), prefix + ".bn1"))
    h = T.relu(ctx.bn(ctx.conv(h, prefix + ".conv2", stride=stride, padding=1), prefix + ".bn2"))
    h = ctx.bn(ctx.conv(h, prefix + ".conv3"), prefix + ".bn3")
    if prefix + ".proj.w" in ctx.params.params:
        skip = ctx.bn(ctx.conv(x, prefix + ".proj", stride=stride), prefix + ".projbn")
    else:
        skip = x
    return T.relu(T.add(h, skip))


def cse(ctx: Context, x, name):
    """Channel gate: spatial mean -> FC -> ReLU -> FC -> sigmoid, scaled per channel."""
    z = T.spatial_mean(x)
    z = T.relu(T.linear(z, ctx.p(name + ".fc1.w"), ctx.p(name + ".fc1.b")))
    s = T.sigmoid(T.linear(z, ctx.p(name + ".fc2.w"), ctx.p(name + ".fc2.b")))
    n, c = s.shape
    return T.mul(x, _reshape(s, (n, c, 1, 1)))


def sse(ctx: Context, x, name):
    """Pixel gate: sigmoid of a 1x1 conv to one channel."""
    q = T.sigmoid(T.conv2d(x, ctx.p(name + ".w"), ctx.p(name + ".b")))
    return T.mul(x, q)


def scse(ctx: Context, x, name):
    a = cse(ctx, x, name + ".cse")
    b = sse(ctx, x, name + ".sse")
    return T.add(a, b) if ctx.cfg.scse_mode == "add" else T.maximum(a, b)


def _reshape(x, shape):
    def backward(g):
        T._accum(x, g.reshape(x.shape))

    return T._result(x.data.reshape(shape), (x,), backward)


# ----------------------------------------------------------------- network

def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def encoder_forward(x, cfg: ModelConfig, params: ModelParams, training=False):
    """Return [X(0,0), ..., X(L,0)]; X(0,0) is at half input resolution."""
    x = _as_tensor(x)
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, model expects {cfg.in_channels}")
    h, w = x.shape[2:]
    if h < cfg.divisor or w < cfg.divisor:
        raise ShapeError(f"input {h}x{w} is smaller than the minimum {cfg.divisor}x{cfg.divisor}")
    ctx = Context(cfg, params, training)
    stem = T.relu(ctx.bn(ctx.conv(x, "stem.conv", stride=2, padding=cfg.stem_kernel // 2), "stem.bn"))
    feats = [stem]
    h = T.max_pool2d(stem, 2)
    stage = 1
    for s, prefix, _, _, _, stride in _stage_plan(cfg):
        if s != stage:
            feats.append(h)
            stage = s
        h = bottleneck(ctx, h, prefix, stride)
    feats.append(h)
    return feats


def decoder_node(ctx: Context, inputs, name):
    h = conv_bn_relu(ctx, T.concat(inputs, axis=1), name + ".conv1", name + ".bn1")
    h = conv_bn_relu(ctx, h, name + ".conv2", name + ".bn2")
    if ctx.cfg.attention:
        h = scse(ctx, h, name)
    return h


def nested_decoder_forward(feats, cfg: ModelConfig, params: ModelParams, training=False):
    """Evaluate the dense node grid and return the top node X(0, L)."""
    ctx = Context(cfg, params, training)
    grid = {(i, 0): f for i, f in enumerate(feats)}
    for i, j in cfg.nodes():
        same = [grid[(i, k)] for k in range(j) if (i, k) in grid]
        up = T.upsample2x(grid[(i + 1, j - 1)])
        grid[(i, j)] = decoder_node(ctx, same + [up], f"dec{i}_{j}")
    return grid[(0, cfg.levels - 1)]


def check_input_size(cfg: ModelConfig, h, w):
    d = cfg.divisor
    if h % d or w % d:
        ph, pw = (-h) % d, (-w) % d
        raise ShapeError(
            f"input {h}x{w} must be divisible by {d}; pad by {ph} rows and {pw} columns"
        )


def cryonet_forward(x, cfg: ModelConfig, params: ModelParams, training=False):
    """Return (logits Tensor N x K x H x W, softmax probabilities as an array)."""
    x = _as_tensor(x)
    check_input_size(cfg, *x.shape[2:])
    feats = encoder_forward(x, cfg, params, training)
    top = nested_decoder_forward(feats, cfg, params, training)
    ctx = Context(cfg, params, training)
    logits = T.upsample2x(ctx.conv(top, "head", bias=True))
    return logits, T.softmax(logits.data, axis=1)
