"""
Masked scaled dot-product attention, the multi-head wrapper, and the
long-short term self-attention layer that runs a global and a local stream
through one shared set of projection weights.
"""

import math
from dataclasses import dataclass

import numpy as np

from errors import ConfigError, DimensionError, NumericError
from numerics import (
    NEG_INF,
    Tensor,
    add,
    dropout,
    layer_norm,
    matmul,
    mul,
    parameter,
    reshape,
    softmax_rows,
    transpose,
)


@dataclass
class AttentionParams:
    """Query/key/value/output projections for one attention block.

    A long-short term layer owns exactly one of these and uses it for both
    of its streams.
    """

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    n_heads: int

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"model dimension {self.d_model} is not divisible by {self.n_heads} heads"
            )

    @property
    def d_model(self):
        return self.w_q.shape[0]

    @classmethod
    def initialize(cls, d_model, n_heads, rng, prefix=""):
        limit = math.sqrt(6.0 / (2 * d_model))
        tensors = {}
        for part in ("q", "k", "v", "o"):
            tensors[f"w_{part}"] = parameter(
                rng.uniform(-limit, limit, (d_model, d_model)), f"{prefix}w_{part}"
            )
            tensors[f"b_{part}"] = parameter(np.zeros(d_model), f"{prefix}b_{part}")
        return cls(n_heads=n_heads, **tensors)

    def tensors(self):
        return {
            "w_q": self.w_q, "b_q": self.b_q,
            "w_k": self.w_k, "b_k": self.b_k,
            "w_v": self.w_v, "b_v": self.b_v,
            "w_o": self.w_o, "b_o": self.b_o,
        }


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def initialize(cls, d_model, prefix=""):
        return cls(
            gain=parameter(np.ones(d_model), f"{prefix}gain"),
            bias=parameter(np.zeros(d_model), f"{prefix}bias"),
        )

    def tensors(self):
        return {"gain": self.gain, "bias": self.bias}


@dataclass
class StreamState:
    """Global and local hidden-state sequences of one long-short term stack"""

    global_stream: Tensor
    local_stream: Tensor

    def __post_init__(self):
        if self.global_stream.shape != self.local_stream.shape:
            raise DimensionError(
                f"stream shapes differ: global {self.global_stream.shape}, "
                f"local {self.local_stream.shape}"
            )

    @property
    def seq_len(self):
        return self.global_stream.shape[-2]


def scaled_dot_attention(q, k, v, m, dropout_rate=0.0, rng=None, return_weights=False):
    """softmax(q k^T / sqrt(d_head) + m) v over the last two axes"""
    d_head = q.shape[-1]
    if k.shape[-1] != d_head or v.shape[-2] != k.shape[-2]:
        raise DimensionError(f"attention shapes q {q.shape}, k {k.shape}, v {v.shape} disagree")
    m = np.asarray(m, dtype=np.float64)
    expected = (q.shape[-2], k.shape[-2])
    if m.shape[-2:] != expected:
        raise DimensionError(f"mask shape {m.shape} does not cover attention {expected}")
    if np.any(np.all(m <= NEG_INF / 2, axis=-1)):
        raise NumericError("row with no attendable position")

    scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(d_head))
    weights = softmax_rows(add(scores, m))
    out = matmul(dropout(weights, dropout_rate, rng), v)
    if return_weights:
        return out, weights
    return out


def _split_heads(x, n_heads):
    """(..., L, d) -> (..., h, L, d/h)"""
    *lead, length, d_model = x.shape
    x = reshape(x, (*lead, length, n_heads, d_model // n_heads))
    n = len(lead)
    return transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x):
    """(..., h, L, d/h) -> (..., L, d)"""
    *lead, n_heads, length, d_head = x.shape
    n = len(lead)
    x = transpose(x, (*range(n), n + 1, n, n + 2))
    return reshape(x, (*lead, length, n_heads * d_head))


def linear(x, weight, bias):
    return add(matmul(x, weight), bias)


def multi_head(x_q, x_kv, m, p, dropout_rate=0.0, rng=None):
    """Project, attend per head, concatenate heads and project back"""
    if x_q.shape[-1] != p.d_model or x_kv.shape[-1] != p.d_model:
        raise DimensionError(
            f"inputs {x_q.shape} / {x_kv.shape} do not match model dimension {p.d_model}"
        )
    q = _split_heads(linear(x_q, p.w_q, p.b_q), p.n_heads)
    k = _split_heads(linear(x_kv, p.w_k, p.b_k), p.n_heads)
    v = _split_heads(linear(x_kv, p.w_v, p.b_v), p.n_heads)
    heads = scaled_dot_attention(q, k, v, m, dropout_rate, rng)
    return linear(_merge_heads(heads), p.w_o, p.b_o)


def residual_norm(x, sublayer_out, norm, dropout_rate=0.0, rng=None):
    """Post-norm residual connection: LN(x + dropout(sublayer(x)))"""
    return layer_norm(add(x, dropout(sublayer_out, dropout_rate, rng)), norm.gain, norm.bias)


def lst_self_attention(
    s, m_global, m_local, p, norm, dropout_rate=0.0, rng=None, local_query="local"
):
    """One long-short term self-attention sublayer over both streams.

    Each stream attends over its own previous states under its own mask,
    with the same projection and normalization parameters. With
    local_query="global" the local stream takes its queries from the global
    states instead.
    """
    query_source = s.global_stream if local_query == "global" else s.local_stream
    global_att = multi_head(s.global_stream, s.global_stream, m_global, p, dropout_rate, rng)
    local_att = multi_head(query_source, s.local_stream, m_local, p, dropout_rate, rng)
    return StreamState(
        global_stream=residual_norm(s.global_stream, global_att, norm, dropout_rate, rng),
        local_stream=residual_norm(s.local_stream, local_att, norm, dropout_rate, rng),
    )
