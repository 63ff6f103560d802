"""Parameterized layers built on the autograd ops.

Parameters live in a flat ``dict[str, Tensor]`` owned by the model; layer
functions take the dict plus a name prefix, so the same code serves the
fusion attention, the pooling stack, and the decoder. All sequence inputs
are batched ``(B, L, D)``; masks are additive constants (0 for visible,
-1e9 for hidden) broadcastable to the attention score shape ``(B, H, Lq,
Lk)``.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class HeadsDontDivide(ValueError):
    pass


NEG_INF = -1e9


def init_linear(params: dict, name: str, d_in: int, d_out: int, rng) -> None:
    bound = 1.0 / math.sqrt(d_in)
    params[f"{name}.w"] = Tensor(
        rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True,
        name=f"{name}.w",
    )
    params[f"{name}.b"] = Tensor(
        np.zeros(d_out), requires_grad=True, name=f"{name}.b"
    )


def init_layer_norm(params: dict, name: str, dim: int) -> None:
    params[f"{name}.g"] = Tensor(np.ones(dim), requires_grad=True, name=f"{name}.g")
    params[f"{name}.b"] = Tensor(np.zeros(dim), requires_grad=True, name=f"{name}.b")


def init_embedding(params: dict, name: str, count: int, dim: int, rng) -> None:
    params[name] = Tensor(
        rng.normal(0.0, 0.5, size=(count, dim)), requires_grad=True, name=name
    )


def init_mha(params: dict, name: str, dim: int, rng) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{proj}", dim, dim, rng)


def linear(params: dict, name: str, x) -> Tensor:
    return ag.linear(x, params[f"{name}.w"], params[f"{name}.b"])


def layer_norm(params: dict, name: str, x) -> Tensor:
    return ag.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, l, d = x.shape
    return ag.swapaxes(ag.reshape(x, (b, l, heads, d // heads)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, l, dh = x.shape
    return ag.reshape(ag.swapaxes(x, 1, 2), (b, l, h * dh))


def mha(
    params: dict,
    name: str,
    query: Tensor,
    key: Tensor,
    value: Tensor,
    heads: int,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention with learned projections.

    Returns ``(output, weights)`` where ``weights`` has shape
    ``(B, heads, Lq, Lk)`` and each row is a post-softmax distribution.
    """
    d = query.shape[-1]
    if d % heads:
        raise HeadsDontDivide(f"dim {d} not divisible by {heads} heads")
    q = _split_heads(linear(params, f"{name}.q", query), heads)
    k = _split_heads(linear(params, f"{name}.k", key), heads)
    v = _split_heads(linear(params, f"{name}.v", value), heads)
    scores = ag.mul(ag.matmul(q, ag.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d // heads))
    if mask is not None:
        scores = ag.add(scores, Tensor(mask))
    weights = ag.softmax(scores, axis=-1)
    ctx = _merge_heads(ag.matmul(weights, v))
    out = linear(params, f"{name}.o", ctx)
    return out, weights


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sine/cosine position table, (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def add_positions(x: Tensor) -> Tensor:
    _, l, d = x.shape
    return ag.add(x, Tensor(sinusoidal_positions(l, d)[None]))


def init_encoder_layer(params: dict, name: str, dim: int, ffn_dim: int, rng) -> None:
    init_layer_norm(params, f"{name}.ln1", dim)
    init_mha(params, f"{name}.attn", dim, rng)
    init_layer_norm(params, f"{name}.ln2", dim)
    init_linear(params, f"{name}.ff1", dim, ffn_dim, rng)
    init_linear(params, f"{name}.ff2", ffn_dim, dim, rng)


def encoder_layer(
    params: dict, name: str, x: Tensor, heads: int, mask: np.ndarray | None
) -> Tensor:
    """Pre-norm self-attention block: x + Attn(LN(x)), x + FFN(LN(x))."""
    h = layer_norm(params, f"{name}.ln1", x)
    attn, _ = mha(params, f"{name}.attn", h, h, h, heads, mask)
    x = ag.add(x, attn)
    h = layer_norm(params, f"{name}.ln2", x)
    h = linear(params, f"{name}.ff2", ag.relu(linear(params, f"{name}.ff1", h)))
    return ag.add(x, h)


def init_decoder_layer(params: dict, name: str, dim: int, ffn_dim: int, rng) -> None:
    init_layer_norm(params, f"{name}.ln1", dim)
    init_mha(params, f"{name}.self", dim, rng)
    init_layer_norm(params, f"{name}.ln2", dim)
    init_mha(params, f"{name}.cross", dim, rng)
    init_layer_norm(params, f"{name}.ln3", dim)
    init_linear(params, f"{name}.ff1", dim, ffn_dim, rng)
    init_linear(params, f"{name}.ff2", ffn_dim, dim, rng)


def decoder_layer(
    params: dict,
    name: str,
    x: Tensor,
    enc: Tensor,
    heads: int,
    self_mask: np.ndarray,
    cross_mask: np.ndarray | None,
) -> Tensor:
    h = layer_norm(params, f"{name}.ln1", x)
    attn, _ = mha(params, f"{name}.self", h, h, h, heads, self_mask)
    x = ag.add(x, attn)
    h = layer_norm(params, f"{name}.ln2", x)
    attn, _ = mha(params, f"{name}.cross", h, enc, enc, heads, cross_mask)
    x = ag.add(x, attn)
    h = layer_norm(params, f"{name}.ln3", x)
    h = linear(params, f"{name}.ff2", ag.relu(linear(params, f"{name}.ff1", h)))
    return ag.add(x, h)


def causal_mask(length: int) -> np.ndarray:
    """(1, 1, L, L) additive mask hiding future positions."""
    m = np.triu(np.full((length, length), NEG_INF), k=1)
    return m[None, None]


def key_padding_mask(lengths, max_len: int) -> np.ndarray:
    """(B, 1, 1, L) additive mask hiding positions >= each sample's length."""
    lengths = np.asarray(lengths)
    cols = np.arange(max_len)
    m = np.where(cols[None, :] < lengths[:, None], 0.0, NEG_INF)
    return m[:, None, None, :]
