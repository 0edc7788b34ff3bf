"""The continuous CNN: stem, residual blocks, pooling, classifier.

Block layout (pre-norm, S4-style): h = x + PW2(Dropout(GELU(SepConv(LN(x))))),
where SepConv is a channelwise continuous convolution (kernel produced by a
coordinate network, Gaussian-masked, full input extent by default) followed
by a pointwise channel mix.  The stem is a pointwise lift of the input
channels, the head is LayerNorm -> global average pool -> linear classifier.

Every kernel generator is rescaled at build time by
gain / sqrt(channels * kernel_points) so feature variance stays flat with
depth; the `rescale_init` switch exists so the verification suite can
demonstrate the blow-up this prevents.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .conv import ConvLayerSpec, separable_conv
from .errors import DimensionError, UsageError
from .kernelgen import KernelGenerator, init_generator, rescale_last_layer
from .tensor import Tensor

CHECKPOINT_VERSION = 1

# named model sizes; kg_hidden follows the small/large generator split
PRESETS = {
    "ccnn-4-110": dict(n_blocks=4, channels=110, kg_hidden=32),
    "ccnn-6-380": dict(n_blocks=6, channels=380, kg_hidden=64),
    "ccnn-2-16": dict(n_blocks=2, channels=16, kg_hidden=32),
    "ccnn-1-4": dict(n_blocks=1, channels=4, kg_hidden=32),
}


@dataclass
class CCNNConfig:
    n_blocks: int = 4
    channels: int = 110
    d: int = 1
    n_classes: int = 10
    in_channels: int = 1
    input_size: tuple[int, ...] = (784,)
    dropout: float = 0.1
    kg_hidden: int = 32
    omega0: float = 30.0
    seed: int = 0
    kernel_points: int | None = None
    kg_mode: str = "gabor"
    use_norm: bool = True
    rescale_init: bool = True

    def __post_init__(self):
        if isinstance(self.input_size, int):
            self.input_size = (self.input_size,) * self.d
        self.input_size = tuple(int(s) for s in self.input_size)
        if self.n_blocks < 1 or self.channels < 1:
            raise UsageError("n_blocks and channels must be >= 1")
        if self.d not in (1, 2):
            raise UsageError(f"d must be 1 or 2, got {self.d}")
        if len(self.input_size) != self.d:
            raise UsageError(
                f"input_size {self.input_size} does not match d={self.d}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "CCNNConfig":
        if name not in PRESETS:
            raise UsageError(
                f"unknown preset {name!r}; available: {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})


# classifier gain: average pooling shrinks feature spread well below the
# per-position unit variance the final norm guarantees; this keeps the
# logit spread order-one at init
CLS_GAIN = 2.5


def _uniform(rng, fan_in, shape, dtype, gain=1.0):
    # variance-preserving at gain 1: Var(W) = gain^2/fan_in
    bound = gain * math.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class ResidualBlock:
    def __init__(self, cfg: CCNNConfig, extents, rng, dtype):
        c = cfg.channels
        self.cfg = cfg
        self.spec = ConvLayerSpec(
            d=cfg.d, n_in=c, n_out=c, separable=True,
            causal=(cfg.d == 1), kernel_points=extents)
        self.gen = init_generator(
            cfg.d, cfg.kg_hidden, c, cfg.omega0,
            seed=int(rng.integers(2 ** 31)), mode=cfg.kg_mode, dtype=dtype)
        if cfg.rescale_init:
            rescale_last_layer(self.gen, 1.0, c, int(np.prod(extents)))
        self.norm_gamma = _ones(c, dtype)
        self.norm_beta = _zeros(c, dtype)
        self.pw_w = _uniform(rng, c, (c, c), dtype)
        self.pw_b = _zeros(c, dtype)
        self.pw2_w = _uniform(rng, c, (c, c), dtype)
        self.pw2_b = _zeros(c, dtype)

    def forward(self, x, train_mode, rng, kernel_scale=1.0, branch_scale=1.0):
        h = T.layer_norm(x, self.norm_gamma, self.norm_beta, axis=1) \
            if self.cfg.use_norm else x
        h = separable_conv(h, self.spec, self.gen, self.pw_w, self.pw_b,
                           scale=kernel_scale)
        h = T.gelu(h)
        if train_mode and self.cfg.dropout > 0:
            h = T.dropout(h, self.cfg.dropout, rng)
        h = T.channel_linear(h, self.pw2_w, self.pw2_b)
        if branch_scale != 1.0:
            h = h * branch_scale
        return x + h

    def parameters(self, prefix):
        out = {
            f"{prefix}_norm_gamma": self.norm_gamma,
            f"{prefix}_norm_beta": self.norm_beta,
            f"{prefix}_pw_w": self.pw_w,
            f"{prefix}_pw_b": self.pw_b,
            f"{prefix}_pw2_w": self.pw2_w,
            f"{prefix}_pw2_b": self.pw2_b,
        }
        for name, t in self.gen.parameters().items():
            out[f"{prefix}_gen_{name}"] = t
        return out


class CCNN:
    def __init__(self, config: CCNNConfig, dtype=np.float32):
        cfg = config
        self.config = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        spec_probe = ConvLayerSpec(d=cfg.d, n_in=1, n_out=1,
                                   causal=(cfg.d == 1),
                                   kernel_points=cfg.kernel_points)
        self.kernel_extents = spec_probe.resolve_extents(cfg.input_size)
        self.stem_w = _uniform(rng, cfg.in_channels,
                               (cfg.channels, cfg.in_channels), dtype)
        self.stem_b = _zeros(cfg.channels, dtype)
        self.blocks = [ResidualBlock(cfg, self.kernel_extents, rng, dtype)
                       for _ in range(cfg.n_blocks)]
        self.final_gamma = _ones(cfg.channels, dtype)
        self.final_beta = _zeros(cfg.channels, dtype)
        self.cls_w = _uniform(rng, cfg.channels,
                              (cfg.n_classes, cfg.channels), dtype,
                              gain=CLS_GAIN)
        self.cls_b = _zeros(cfg.n_classes, dtype)

    def forward(self, x: Tensor, train_mode: bool = False,
                rng: np.random.Generator | None = None,
                kernel_scale: float = 1.0, branch_scale: float = 1.0) -> Tensor:
        """Logits (B, n_classes).

        ``kernel_scale`` carries the cross-resolution factor
        (r_train/r_test)^d onto every generated kernel at inference
        time; ``branch_scale`` is a test hook that multiplies each
        residual branch.
        """
        if x.ndim != self.config.d + 2:
            raise UsageError(
                f"{self.config.d}d model expects rank-{self.config.d + 2} "
                f"input (B, C, spatial...), got shape {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"expected {self.config.in_channels} input channels, "
                f"got {x.shape[1]}")
        if train_mode and rng is None:
            raise UsageError("train_mode forward needs an rng for dropout")
        h = T.channel_linear(x, self.stem_w, self.stem_b)
        for block in self.blocks:
            h = block.forward(h, train_mode, rng,
                              kernel_scale=kernel_scale,
                              branch_scale=branch_scale)
        if self.config.use_norm:
            h = T.layer_norm(h, self.final_gamma, self.final_beta, axis=1)
        pooled = T.spatial_mean(h)
        return T.channel_linear(pooled, self.cls_w, self.cls_b)

    def parameters(self) -> dict[str, Tensor]:
        out = {"stem_w": self.stem_w, "stem_b": self.stem_b}
        for i, block in enumerate(self.blocks):
            out.update(block.parameters(f"block{i}"))
        out.update({
            "final_norm_gamma": self.final_gamma,
            "final_norm_beta": self.final_beta,
            "cls_w": self.cls_w,
            "cls_b": self.cls_b,
        })
        return out

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def param_count(self):
        """Total parameter count plus a (stem, blocks, generators, classifier) split."""
        breakdown = {"stem": self.stem_w.size + self.stem_b.size,
                     "blocks": 0, "generators": 0, "classifier": 0}
        for block in self.blocks:
            breakdown["generators"] += block.gen.param_count()
            for name in ("norm_gamma", "norm_beta", "pw_w", "pw_b",
                         "pw2_w", "pw2_b"):
                breakdown["blocks"] += getattr(block, name).size
        breakdown["classifier"] = (self.final_gamma.size + self.final_beta.size
                                   + self.cls_w.size + self.cls_b.size)
        return sum(breakdown.values()), breakdown


def build(config: CCNNConfig, dtype=np.float32) -> CCNN:
    return CCNN(config, dtype=dtype)


def save_checkpoint(net: CCNN, path) -> None:
    """Single-file checkpoint: config echo, format version, named arrays."""
    arrays = {name: t.data for name, t in net.parameters().items()}
    meta = dict(asdict(net.config))
    payload = {
        "__format_version__": np.asarray(CHECKPOINT_VERSION),
        "__config__": np.frombuffer(
            json.dumps(meta).encode(), dtype=np.uint8),
        "__dtype__": np.frombuffer(str(net.dtype).encode(), dtype=np.uint8),
    }
    payload.update(arrays)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> CCNN:
    with np.load(path) as z:
        version = int(z["__format_version__"])
        if version != CHECKPOINT_VERSION:
            raise UsageError(
                f"checkpoint format version {version} not supported "
                f"(expected {CHECKPOINT_VERSION})")
        meta = json.loads(bytes(z["__config__"]).decode())
        dtype = np.dtype(bytes(z["__dtype__"]).decode())
        meta["input_size"] = tuple(meta["input_size"])
        cfg = CCNNConfig(**meta)
        net = CCNN(cfg, dtype=dtype)
        params = net.parameters()
        missing = set(params) - set(z.files)
        if missing:
            raise UsageError(f"checkpoint is missing arrays: {sorted(missing)}")
        for name, t in params.items():
            arr = z[name]
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"checkpoint array {name} has shape {arr.shape}, "
                    f"expected {t.data.shape}")
            t.data = arr.astype(dtype, copy=True)
    return net
