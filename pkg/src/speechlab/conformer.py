"""Conformer encoder: convolutional subsampling plus a block stack.

Each block runs half-step feed-forward, self-attention (relative or
absolute positions), a convolution module, a second half-step
feed-forward and a closing layer norm. encode() keeps the output of the
input embedding (index -1), every block (0..num_layers-1) and the final
projection (index num_layers) so probes can read any depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .audio import NUM_MEL, Spectrogram
from .tensor import Tensor


@dataclass(frozen=True)
class ConformerConfig:
    num_layers: int
    model_dim: int
    attention_heads: int
    conv_kernel_size: int = 5
    relative_attention: bool = True
    ff_expansion: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.model_dim % self.attention_heads != 0:
            raise ValueError("model_dim must be divisible by attention_heads")
        if self.conv_kernel_size % 2 != 1:
            raise ValueError("conv_kernel_size must be odd")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.attention_heads

    def to_dict(self) -> dict:
        return {"num_layers": self.num_layers, "model_dim": self.model_dim,
                "attention_heads": self.attention_heads,
                "conv_kernel_size": self.conv_kernel_size,
                "relative_attention": self.relative_attention,
                "ff_expansion": self.ff_expansion, "dropout": self.dropout}


PRESETS = {
    "xs": ConformerConfig(num_layers=4, model_dim=64, attention_heads=4),
    "s": ConformerConfig(num_layers=8, model_dim=144, attention_heads=4),
}


def preset_config(name: str, relative_attention: bool = True, dropout: float | None = None) -> ConformerConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    cfg = replace(PRESETS[name], relative_attention=relative_attention)
    if dropout is not None:
        cfg = replace(cfg, dropout=dropout)
    return cfg


def subsampled_length(num_frames: int) -> int:
    return math.ceil(math.ceil(num_frames / 2) / 2)


SUBSAMPLED_MEL = subsampled_length(NUM_MEL)  # 20


def _param(rng, shape, scale) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _linear_params(rng, fan_in, fan_out, prefix, params):
    params[f"{prefix}.w"] = _param(rng, (fan_in, fan_out), 1.0 / math.sqrt(fan_in))
    params[f"{prefix}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)


def _ln_params(dim, prefix, params):
    params[f"{prefix}.g"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{prefix}.b"] = Tensor(np.zeros(dim), requires_grad=True)


def init_encoder_params(cfg: ConformerConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.model_dim
    params: dict[str, Tensor] = {}
    c = d
    params["subsample.conv1.w"] = _param(rng, (3, 3, 1, c), 1.0 / 3.0)
    params["subsample.conv1.b"] = Tensor(np.zeros(c), requires_grad=True)
    params["subsample.conv2.w"] = _param(rng, (3, 3, c, c), 1.0 / (3.0 * math.sqrt(c)))
    params["subsample.conv2.b"] = Tensor(np.zeros(c), requires_grad=True)
    _linear_params(rng, SUBSAMPLED_MEL * c, d, "subsample.proj", params)
    for i in range(cfg.num_layers):
        p = f"block{i}"
        for ff in ("ff1", "ff2"):
            _ln_params(d, f"{p}.{ff}.ln", params)
            _linear_params(rng, d, cfg.ff_expansion * d, f"{p}.{ff}.lin1", params)
            _linear_params(rng, cfg.ff_expansion * d, d, f"{p}.{ff}.lin2", params)
        _ln_params(d, f"{p}.attn.ln", params)
        for proj in ("wq", "wk", "wv", "wo"):
            _linear_params(rng, d, d, f"{p}.attn.{proj}", params)
        if cfg.relative_attention:
            params[f"{p}.attn.wr"] = _param(rng, (d, d), 1.0 / math.sqrt(d))
            params[f"{p}.attn.u"] = Tensor(np.zeros((cfg.attention_heads, cfg.head_dim)), requires_grad=True)
            params[f"{p}.attn.v"] = Tensor(np.zeros((cfg.attention_heads, cfg.head_dim)), requires_grad=True)
        _ln_params(d, f"{p}.conv.ln", params)
        _linear_params(rng, d, 2 * d, f"{p}.conv.pw1", params)
        params[f"{p}.conv.dw.w"] = _param(rng, (cfg.conv_kernel_size, d),
                                          1.0 / math.sqrt(cfg.conv_kernel_size))
        params[f"{p}.conv.dw.b"] = Tensor(np.zeros(d), requires_grad=True)
        _ln_params(d, f"{p}.conv.ln2", params)
        _linear_params(rng, d, d, f"{p}.conv.pw2", params)
        _ln_params(d, f"{p}.ln", params)
    _linear_params(rng, d, d, "proj", params)
    return params


def sinusoid_embedding(values: np.ndarray, dim: int) -> np.ndarray:
    """Sin/cos embedding of arbitrary (possibly negative) positions."""
    values = np.asarray(values, dtype=np.float64)
    half = dim // 2
    freq = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = values[..., None] * freq
    out = np.zeros(values.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang[..., : dim - half])
    return out


def _linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    return T.add(T.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def subsample(spec, params: dict[str, Tensor], cfg: ConformerConfig) -> Tensor:
    """Two stride-(2,2) convolutions (swish) then a linear fold of the
    frequency axis into model_dim. Time shrinks as ceil(ceil(T/2)/2)."""
    if isinstance(spec, Spectrogram):
        frames = spec.frames
    elif isinstance(spec, Tensor):
        frames = spec.data
    else:
        frames = np.asarray(spec, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != NUM_MEL:
        raise ValueError(f"expected (T, {NUM_MEL}) features, got {frames.shape}")
    x = Tensor(frames[:, :, None])
    if x.shape[0] < 4:
        raise ValueError(f"need at least 4 frames to subsample, got {x.shape[0]}")
    h = T.swish(T.conv2d(x, params["subsample.conv1.w"], params["subsample.conv1.b"]))
    h = T.swish(T.conv2d(h, params["subsample.conv2.w"], params["subsample.conv2.b"]))
    tp = h.shape[0]
    h = T.reshape(h, (tp, h.shape[1] * h.shape[2]))
    return _linear(h, params, "subsample.proj")


def attention_scores(queries: Tensor, keys: Tensor, relative: bool, params: dict,
                     num_heads: int, positions: np.ndarray | None = None) -> Tensor:
    """Per-head pre-softmax score matrices, (heads, T, T), scaled by
    1/sqrt(head_dim).

    relative=True uses content and content-position terms with learned
    relative embeddings, so scores depend on positions only through their
    pairwise differences. relative=False is plain scaled dot product
    (absolute sinusoidal positions are added to the encoder input instead).
    """
    queries, keys = T.as_tensor(queries), T.as_tensor(keys)
    t, d = queries.shape
    if d % num_heads != 0:
        raise ValueError("model dim must divide into heads")
    dh = d // num_heads
    scale = 1.0 / math.sqrt(dh)
    qh = T.transpose(T.reshape(queries, (t, num_heads, dh)), (1, 0, 2))
    kh = T.transpose(T.reshape(keys, (t, num_heads, dh)), (1, 0, 2))
    if not relative:
        return T.mul(T.matmul(qh, T.swapaxes(kh, -1, -2)), scale)
    if positions is None:
        positions = np.arange(t)
    dist = np.asarray(positions)[:, None] - np.asarray(positions)[None, :]
    rel = T.matmul(Tensor(sinusoid_embedding(dist, d)), params["wr"])  # (T, T, D)
    rel = T.transpose(T.reshape(rel, (t, t, num_heads, dh)), (2, 0, 1, 3))  # (H, T, T, dh)
    content = T.matmul(T.add(qh, T.reshape(params["u"], (num_heads, 1, dh))),
                       T.swapaxes(kh, -1, -2))
    qv = T.reshape(T.add(qh, T.reshape(params["v"], (num_heads, 1, dh))),
                   (num_heads, t, 1, dh))
    position = T.tsum(T.mul(qv, rel), axis=-1)
    return T.mul(T.add(content, position), scale)


@dataclass
class LayerActivations:
    """Per-layer (T', model_dim) outputs, indexed -1..num_layers."""

    layers: dict[int, Tensor]
    num_layers: int

    def layer(self, index: int) -> Tensor:
        if index not in self.layers:
            raise ValueError(f"layer index {index} out of range -1..{self.num_layers}")
        return self.layers[index]

    @property
    def final(self) -> Tensor:
        return self.layers[self.num_layers]

    def indices(self) -> list[int]:
        return list(range(-1, self.num_layers + 1))

    @property
    def num_frames(self) -> int:
        return self.layers[-1].shape[0]


def _feed_forward(x: Tensor, params: dict, prefix: str, cfg: ConformerConfig,
                  rng) -> Tensor:
    h = T.layer_norm(x, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
    h = T.swish(_linear(h, params, f"{prefix}.lin1"))
    h = T.dropout(h, cfg.dropout, rng)
    h = _linear(h, params, f"{prefix}.lin2")
    return T.dropout(h, cfg.dropout, rng)


def _attention(x: Tensor, params: dict, prefix: str, cfg: ConformerConfig,
               positions, rng) -> Tensor:
    h = T.layer_norm(x, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
    q = _linear(h, params, f"{prefix}.wq")
    k = _linear(h, params, f"{prefix}.wk")
    v = _linear(h, params, f"{prefix}.wv")
    rel_params = {key: params[f"{prefix}.{key}"] for key in ("wr", "u", "v")} \
        if cfg.relative_attention else {}
    scores = attention_scores(q, k, cfg.relative_attention, rel_params,
                              cfg.attention_heads, positions)
    weights = T.softmax(scores, axis=-1)
    t = x.shape[0]
    vh = T.transpose(T.reshape(v, (t, cfg.attention_heads, cfg.head_dim)), (1, 0, 2))
    ctx = T.matmul(weights, vh)  # (H, T, dh)
    ctx = T.reshape(T.transpose(ctx, (1, 0, 2)), (t, cfg.model_dim))
    out = _linear(ctx, params, f"{prefix}.wo")
    return T.dropout(out, cfg.dropout, rng)


def _conv_module(x: Tensor, params: dict, prefix: str, cfg: ConformerConfig, rng) -> Tensor:
    h = T.layer_norm(x, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
    h = _linear(h, params, f"{prefix}.pw1")
    d = cfg.model_dim
    gate = T.sigmoid(h[:, d:])
    h = T.mul(h[:, :d], gate)
    h = T.depthwise_conv1d(h, params[f"{prefix}.dw.w"], params[f"{prefix}.dw.b"])
    h = T.layer_norm(h, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = T.swish(h)
    h = _linear(h, params, f"{prefix}.pw2")
    return T.dropout(h, cfg.dropout, rng)


def _block(x: Tensor, params: dict, index: int, cfg: ConformerConfig,
           positions, rng) -> Tensor:
    p = f"block{index}"
    x = T.add(x, T.mul(_feed_forward(x, params, f"{p}.ff1", cfg, rng), 0.5))
    x = T.add(x, _attention(x, params, f"{p}.attn", cfg, positions, rng))
    x = T.add(x, _conv_module(x, params, f"{p}.conv", cfg, rng))
    x = T.add(x, T.mul(_feed_forward(x, params, f"{p}.ff2", cfg, rng), 0.5))
    return T.layer_norm(x, params[f"{p}.ln.g"], params[f"{p}.ln.b"])


def encode(features: Tensor, cfg: ConformerConfig, params: dict[str, Tensor],
           positions: np.ndarray | None = None,
           rng: np.random.Generator | None = None) -> LayerActivations:
    """Run the block stack over subsampled features.

    rng enables dropout (training); None gives the deterministic forward
    pass used for evaluation and probing.
    """
    features = T.as_tensor(features)
    if features.data.ndim != 2 or features.shape[1] != cfg.model_dim:
        raise ValueError(f"features must be (T', {cfg.model_dim}), got {features.shape}")
    t = features.shape[0]
    if positions is None:
        positions = np.arange(t)
    emb = features
    if not cfg.relative_attention:
        emb = T.add(emb, Tensor(sinusoid_embedding(np.asarray(positions), cfg.model_dim)))
    layers = {-1: emb}
    x = emb
    for i in range(cfg.num_layers):
        x = _block(x, params, i, cfg, positions, rng)
        layers[i] = x
    layers[cfg.num_layers] = _linear(x, params, "proj")
    return LayerActivations(layers=layers, num_layers=cfg.num_layers)
