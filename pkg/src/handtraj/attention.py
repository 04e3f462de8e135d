"""Forward-only toy transformer decoder block with temporal adapter layers.

Token tensors are ``(..., M, N, D)``: M frames of a window, N tokens per
frame, D channels. Leading batch axes are allowed everywhere. Two adapter
layers are inserted after the base cross-attention:

* cross-view self-attention, where all ``M*N`` tokens attend jointly and a
  sinusoidal frame encoding is added to queries and keys;
* global cross-attention, where each frame's tokens attend to that frame's
  full-image context features.

Every attention layer is pre-norm with a residual branch scaled by a scalar
gate. Adapter gates start at 0, so a freshly adapted block computes exactly
the base block applied to each frame on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import FormatError, InvalidArgument, VersionError

WEIGHTS_FORMAT = "handtraj-weights"
WEIGHTS_VERSION = 1
LN_EPS = 1e-5

TOY_FRAMES = 8
TOY_TOKENS = 4
TOY_DIM = 64
TOY_HEADS = 4


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def scaled_dot_attention(Q, K, V) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d)) V`` over the last two axes."""
    Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
    if Q.ndim < 2 or K.ndim < 2 or V.ndim < 2:
        raise InvalidArgument("attention inputs need at least 2 dimensions")
    if Q.shape[-1] != K.shape[-1]:
        raise InvalidArgument(f"query dim {Q.shape[-1]} != key dim {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise InvalidArgument(f"{K.shape[-2]} keys but {V.shape[-2]} values")
    scores = Q @ np.swapaxes(K, -1, -2) / math.sqrt(Q.shape[-1])
    return softmax(scores) @ V


def layer_norm(x, scale, bias, eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + bias


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def frame_positional_encoding(n_frames: int, dim: int) -> np.ndarray:
    """Sinusoidal encoding of the frame index, shape ``(n_frames, dim)``."""
    if n_frames < 1 or dim < 1:
        raise InvalidArgument("need at least one frame and one channel")
    pos = np.arange(n_frames, dtype=float)[:, None]
    i = np.arange(0, dim, 2, dtype=float)
    freq = np.exp(-math.log(10000.0) * i / dim)
    pe = np.zeros((n_frames, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)[:, : dim // 2]
    return pe


@dataclass
class AttentionWeights:
    """Multi-head attention: projections ``(D, heads, d_head)``, output ``(heads, d_head, D)``."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln_scale: np.ndarray
    ln_bias: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        D, H, dh = np.shape(self.wq)
        for name in ("wk", "wv"):
            if np.shape(getattr(self, name)) != (D, H, dh):
                raise InvalidArgument(f"{name} has shape {np.shape(getattr(self, name))}, expected {(D, H, dh)}")
        if np.shape(self.wo) != (H, dh, D):
            raise InvalidArgument(f"wo has shape {np.shape(self.wo)}, expected {(H, dh, D)}")
        if np.shape(self.ln_scale) != (D,) or np.shape(self.ln_bias) != (D,):
            raise InvalidArgument("layer-norm parameters must have shape (D,)")
        if not math.isfinite(self.gamma):
            raise InvalidArgument("gate must be finite")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    def n_params(self) -> int:
        return sum(np.size(a) for a in (self.wq, self.wk, self.wv, self.wo, self.ln_scale, self.ln_bias)) + 1


@dataclass
class FeedForwardWeights:
    w1: np.ndarray  # (D, F)
    b1: np.ndarray
    w2: np.ndarray  # (F, D)
    b2: np.ndarray
    ln_scale: np.ndarray
    ln_bias: np.ndarray

    def n_params(self) -> int:
        return sum(np.size(getattr(self, f.name)) for f in fields(self))


@dataclass
class DecoderWeights:
    base_self: AttentionWeights
    base_cross: AttentionWeights
    cross_view: AttentionWeights
    global_cross: AttentionWeights
    ffn: FeedForwardWeights

    BASE = ("base_self", "base_cross", "ffn")
    ADAPTER = ("cross_view", "global_cross")

    def base_params(self) -> int:
        return sum(getattr(self, k).n_params() for k in self.BASE)

    def adapter_params(self) -> int:
        return sum(getattr(self, k).n_params() for k in self.ADAPTER)


def _check_tokens(x, dim, name="tokens") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 3 or min(x.shape[-3:]) < 1:
        raise InvalidArgument(f"{name} must be (..., M, N, D), got {x.shape}")
    if x.shape[-1] != dim:
        raise InvalidArgument(f"{name} have {x.shape[-1]} channels, weights expect {dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument(f"{name} contain non-finite values")
    return x


def _mha(xq, xkv, w: AttentionWeights, q_add=None, k_add=None) -> np.ndarray:
    """Multi-head attention of ``xq (..., Lq, D)`` onto ``xkv (..., Lk, D)``, before gating."""
    q_in = xq if q_add is None else xq + q_add
    k_in = xkv if k_add is None else xkv + k_add
    q = np.einsum("...ld,dhk->...hlk", q_in, w.wq)
    k = np.einsum("...ld,dhk->...hlk", k_in, w.wk)
    v = np.einsum("...ld,dhk->...hlk", xkv, w.wv)
    return np.einsum("...hlk,hkd->...ld", scaled_dot_attention(q, k, v), w.wo)


def self_attention(tokens, w: AttentionWeights) -> np.ndarray:
    """Within-frame self-attention with pre-norm and gated residual."""
    x = _check_tokens(tokens, w.dim)
    h = layer_norm(x, w.ln_scale, w.ln_bias)
    return x + w.gamma * _mha(h, h, w)


def cross_attention(tokens, context, w: AttentionWeights) -> np.ndarray:
    """Each frame's tokens attend to that frame's ``context (..., M, N_ctx, D)``."""
    x = _check_tokens(tokens, w.dim)
    c = _check_tokens(context, w.dim, "context")
    if c.shape[:-2] != x.shape[:-2]:
        raise InvalidArgument(f"context frames {c.shape[:-2]} do not match token frames {x.shape[:-2]}")
    h = layer_norm(x, w.ln_scale, w.ln_bias)
    return x + w.gamma * _mha(h, c, w)


def cross_view_self_attention(tokens, pe, w: AttentionWeights) -> np.ndarray:
    """All ``M*N`` tokens of a window attend jointly.

    ``pe`` is ``(M, D)`` added to queries and keys (not values), or None to
    drop the frame encoding.
    """
    x = _check_tokens(tokens, w.dim)
    *lead, M, N, D = x.shape
    h = layer_norm(x, w.ln_scale, w.ln_bias).reshape(*lead, M * N, D)
    add = None
    if pe is not None:
        pe = np.asarray(pe, dtype=float)
        if pe.shape != (M, D):
            raise InvalidArgument(f"frame encoding must be {(M, D)}, got {pe.shape}")
        add = np.repeat(pe, N, axis=0)
    out = _mha(h, h, w, add, add).reshape(x.shape)
    return x + w.gamma * out


def global_cross_attention(tokens, context, w: AttentionWeights) -> np.ndarray:
    """Per-frame attention from hand tokens onto full-image context features."""
    return cross_attention(tokens, context, w)


def feed_forward(tokens, w: FeedForwardWeights) -> np.ndarray:
    x = np.asarray(tokens, dtype=float)
    h = layer_norm(x, w.ln_scale, w.ln_bias)
    return x + gelu(h @ w.w1 + w.b1) @ w.w2 + w.b2


def base_block(tokens, crop_features, weights: DecoderWeights) -> np.ndarray:
    """The unadapted block: self-attention, crop cross-attention, feed-forward."""
    x = self_attention(tokens, weights.base_self)
    x = cross_attention(x, crop_features, weights.base_cross)
    return feed_forward(x, weights.ffn)


def decoder_block(tokens, pe, context, weights: DecoderWeights, crop_features=None) -> np.ndarray:
    """Adapted block on a window of frames.

    Order: base self-attention, base cross-attention onto the crop features,
    cross-view self-attention, global cross-attention onto ``context``,
    feed-forward. ``crop_features`` defaults to ``context``.
    """
    crop = context if crop_features is None else crop_features
    x = self_attention(tokens, weights.base_self)
    x = cross_attention(x, crop, weights.base_cross)
    x = cross_view_self_attention(x, pe, weights.cross_view)
    x = global_cross_attention(x, context, weights.global_cross)
    return feed_forward(x, weights.ffn)


def image_mode(tokens, context, weights: DecoderWeights, crop_features=None) -> np.ndarray:
    """Run a stack of M independent images through the video block.

    Each image becomes its own one-frame window by a reshape, so cross-view
    attention only sees its own frame.
    """
    x = np.asarray(tokens, dtype=float)
    c = np.asarray(context, dtype=float)
    crop = c if crop_features is None else np.asarray(crop_features, dtype=float)
    pe = frame_positional_encoding(1, x.shape[-1])
    out = decoder_block(x[..., None, :, :], pe, c[..., None, :, :], weights, crop[..., None, :, :])
    return out[..., 0, :, :]


def init_attention(rng: np.random.Generator, dim: int, heads: int, gamma: float) -> AttentionWeights:
    if dim % heads:
        raise InvalidArgument(f"dim {dim} is not divisible by {heads} heads")
    dh = dim // heads
    std = 1.0 / math.sqrt(dim)
    return AttentionWeights(
        wq=rng.normal(0, std, (dim, heads, dh)),
        wk=rng.normal(0, std, (dim, heads, dh)),
        wv=rng.normal(0, std, (dim, heads, dh)),
        wo=rng.normal(0, std, (heads, dh, dim)),
        ln_scale=1.0 + 0.1 * rng.normal(size=dim),
        ln_bias=0.1 * rng.normal(size=dim),
        gamma=float(gamma),
    )


def init_decoder(dim: int = TOY_DIM, heads: int = TOY_HEADS, ffn_dim: int | None = None, *,
                 seed: int = 0, adapter_gate: float = 0.0) -> DecoderWeights:
    """Random base weights plus adapter layers gated by ``adapter_gate`` (0 = zero-init)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    F = 2 * dim if ffn_dim is None else ffn_dim
    base_self = init_attention(rng, dim, heads, 1.0)
    base_cross = init_attention(rng, dim, heads, 1.0)
    ffn = FeedForwardWeights(
        w1=rng.normal(0, 1 / math.sqrt(dim), (dim, F)), b1=0.1 * rng.normal(size=F),
        w2=rng.normal(0, 1 / math.sqrt(F), (F, dim)), b2=0.1 * rng.normal(size=dim),
        ln_scale=1.0 + 0.1 * rng.normal(size=dim), ln_bias=0.1 * rng.normal(size=dim),
    )
    cross_view = init_attention(rng, dim, heads, adapter_gate)
    global_cross = init_attention(rng, dim, heads, adapter_gate)
    return DecoderWeights(base_self, base_cross, cross_view, global_cross, ffn)


def added_param_fraction(base_params: int, adapter_params: int) -> float:
    if not base_params > 0:
        raise InvalidArgument("base parameter count must be positive")
    if adapter_params < 0:
        raise InvalidArgument("adapter parameter count must be non-negative")
    return adapter_params / base_params


def _flatten(weights: DecoderWeights) -> dict:
    out = {}
    for layer in ("base_self", "base_cross", "cross_view", "global_cross", "ffn"):
        obj = getattr(weights, layer)
        for f in fields(obj):
            out[f"{layer}.{f.name}"] = np.asarray(getattr(obj, f.name), dtype=float)
    return out


def save_weights(weights: DecoderWeights, path) -> None:
    """Write an ``.npz`` container tagged with format name and version."""
    arrays = _flatten(weights)
    arrays["__format__"] = np.array(WEIGHTS_FORMAT)
    arrays["__version__"] = np.array(WEIGHTS_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_weights(path) -> DecoderWeights:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read weight container: {exc}") from None
    with data:
        if "__format__" not in data or str(data["__format__"]) != WEIGHTS_FORMAT:
            raise FormatError("not a handtraj weight container")
        if int(data["__version__"]) != WEIGHTS_VERSION:
            raise VersionError(f"unsupported weight container version {int(data['__version__'])}")
        arr = {k: data[k] for k in data.files}
    try:
        def attn(name):
            return AttentionWeights(**{f.name: (float(arr[f"{name}.{f.name}"]) if f.name == "gamma"
                                                else arr[f"{name}.{f.name}"]) for f in fields(AttentionWeights)})

        ffn = FeedForwardWeights(**{f.name: arr[f"ffn.{f.name}"] for f in fields(FeedForwardWeights)})
        return DecoderWeights(attn("base_self"), attn("base_cross"), attn("cross_view"), attn("global_cross"), ffn)
    except KeyError as exc:
        raise FormatError(f"weight container is missing {exc}") from None


@dataclass
class ContractReport:
    checks: dict = field(default_factory=dict)
    base_params: int = 0
    adapter_params: int = 0

    @property
    def fraction(self) -> float:
        return added_param_fraction(self.base_params, self.adapter_params)

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.checks.values())

    def to_text(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'} {name} (max abs diff {diff:.3g})" for name, (ok, diff) in self.checks.items()]
        lines.append(f"base_params={self.base_params} adapter_params={self.adapter_params} "
                     f"added_fraction={self.fraction:.4f}")
        return "\n".join(lines) + "\n"


def check_contracts(frames: int = TOY_FRAMES, tokens: int = TOY_TOKENS, dim: int = TOY_DIM,
                    heads: int = TOY_HEADS, context_tokens: int = 16, seed: int = 0) -> ContractReport:
    """Run the adapter invariants on random toy inputs."""
    rng = np.random.Generator(np.random.Philox(key=seed + 1))
    x = rng.normal(size=(frames, tokens, dim))
    ctx = rng.normal(size=(frames, context_tokens, dim))
    crop = rng.normal(size=(frames, context_tokens, dim))
    pe = frame_positional_encoding(frames, dim)
    rep = ContractReport()

    w0 = init_decoder(dim, heads, seed=seed, adapter_gate=0.0)
    video = decoder_block(x, pe, ctx, w0, crop)
    per_frame = np.stack([base_block(x[m:m + 1], crop[m:m + 1], w0)[0] for m in range(frames)])
    d = float(np.max(np.abs(video - per_frame)))
    rep.checks["zero-gate window equals per-frame base block"] = (d < 1e-12, d)

    w1 = init_decoder(dim, heads, seed=seed, adapter_gate=0.7)
    one = decoder_block(x[:1], frame_positional_encoding(1, dim), ctx[:1], w1, crop[:1])
    img = image_mode(x[:1], ctx[:1], w1, crop[:1])
    d = float(np.max(np.abs(one - img)))
    rep.checks["single-frame window equals image mode"] = (d == 0.0, d)

    perm = rng.permutation(frames)
    a = cross_view_self_attention(x, None, w1.cross_view)[perm]
    b = cross_view_self_attention(x[perm], None, w1.cross_view)
    d = float(np.max(np.abs(a - b)))
    rep.checks["cross-view attention is frame-permutation equivariant without encoding"] = (d < 1e-12, d)

    rep.base_params = w0.base_params()
    rep.adapter_params = w0.adapter_params()
    return rep
