"""
Encoder-decoder translation model in two variants.

`baseline` is the standard post-norm transformer. `lst` replaces every
self-attention with the long-short term layer: a global stream that sees the
whole chunk and a local stream confined to the current sentence, sharing all
layer parameters. The final layer of each stack merges the two streams
(concatenation followed by an affine map by default).
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from attention import (
    AttentionParams,
    LayerNormParams,
    StreamState,
    linear,
    lst_self_attention,
    multi_head,
    residual_norm,
)
from checkpoint import load_checkpoint, save_checkpoint
from errors import CheckpointError, ConfigError, DimensionError, EmptySequenceError
from masking import cross_attention_bias, self_attention_bias
from numerics import (
    Tensor,
    add,
    concat,
    embedding,
    log_softmax,
    matmul,
    mul,
    parameter,
    relu,
    reshape,
    sinusoidal_positions,
    transpose,
)

VARIANTS = ("baseline", "lst")
COMBINE_MODES = ("concat", "sum", "global")
LOCAL_QUERY_SOURCES = ("local", "global")


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults follow the base transformer."""

    d_model: int = 512
    n_heads: int = 8
    n_layers_enc: int = 6
    n_layers_dec: int = 6
    ffn_dim: int = 2048
    combine_dim: int = None
    vocab_src: int = 10000
    vocab_tgt: int = 10000
    k: int = 1
    sep_id: int = 3
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    variant: str = "lst"
    dropout: float = 0.1
    max_positions: int = 1024
    tie_output: bool = True
    combine: str = "concat"
    local_query: str = "local"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.combine not in COMBINE_MODES:
            raise ConfigError(f"combine must be one of {COMBINE_MODES}, got {self.combine!r}")
        if self.local_query not in LOCAL_QUERY_SOURCES:
            raise ConfigError(
                f"local_query must be one of {LOCAL_QUERY_SOURCES}, got {self.local_query!r}"
            )
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        specials = (self.pad_id, self.bos_id, self.eos_id, self.sep_id)
        if len(set(specials)) != len(specials):
            raise ConfigError(f"special token ids must be distinct, got {specials}")
        if max(specials) >= min(self.vocab_src, self.vocab_tgt):
            raise ConfigError("special token ids must be smaller than both vocabulary sizes")

        expected = {"concat": 2 * self.d_model, "sum": self.d_model, "global": 0}[self.combine]
        if self.combine_dim is None:
            self.combine_dim = expected
        elif self.combine_dim != expected:
            raise ConfigError(
                f"combine_dim={self.combine_dim} does not match combine={self.combine!r} "
                f"(expected {expected})"
            )

    @property
    def has_combine(self):
        return self.variant == "lst" and self.combine != "global"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def initialize(cls, d_model, ffn_dim, rng, prefix=""):
        limit = math.sqrt(6.0 / (d_model + ffn_dim))
        return cls(
            w1=parameter(rng.uniform(-limit, limit, (d_model, ffn_dim)), f"{prefix}w1"),
            b1=parameter(np.zeros(ffn_dim), f"{prefix}b1"),
            w2=parameter(rng.uniform(-limit, limit, (ffn_dim, d_model)), f"{prefix}w2"),
            b2=parameter(np.zeros(d_model), f"{prefix}b2"),
        )

    def tensors(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class CombineParams:
    """Affine map from the merged streams (combine_dim wide) down to d_model"""

    weight: Tensor
    bias: Tensor

    @classmethod
    def initialize(cls, in_dim, d_model, rng, prefix=""):
        limit = math.sqrt(6.0 / (in_dim + d_model))
        return cls(
            weight=parameter(rng.uniform(-limit, limit, (in_dim, d_model)), f"{prefix}weight"),
            bias=parameter(np.zeros(d_model), f"{prefix}bias"),
        )

    def tensors(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class EncoderLayerParams:
    self_attn: AttentionParams
    norm1: LayerNormParams
    ffn: FeedForwardParams
    norm2: LayerNormParams


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    norm1: LayerNormParams
    cross_attn: AttentionParams
    norm2: LayerNormParams
    ffn: FeedForwardParams
    norm3: LayerNormParams


class Parameters:
    """All learned weights of a model, addressable by dotted name"""

    def __init__(self, src_embed, tgt_embed, encoder, decoder, enc_combine, dec_combine,
                 out_bias, out_weight=None):
        self.src_embed = src_embed
        self.tgt_embed = tgt_embed
        self.encoder = encoder
        self.decoder = decoder
        self.enc_combine = enc_combine
        self.dec_combine = dec_combine
        self.out_bias = out_bias
        self.out_weight = out_weight
        self._named = self._collect()

    @classmethod
    def initialize(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        d = config.d_model
        scale = d ** -0.5
        src_embed = parameter(rng.normal(0.0, scale, (config.vocab_src, d)), "src_embed")
        tgt_embed = parameter(rng.normal(0.0, scale, (config.vocab_tgt, d)), "tgt_embed")

        encoder = []
        for i in range(config.n_layers_enc):
            prefix = f"enc.{i}."
            encoder.append(EncoderLayerParams(
                self_attn=AttentionParams.initialize(d, config.n_heads, rng, prefix + "self_attn."),
                norm1=LayerNormParams.initialize(d, prefix + "norm1."),
                ffn=FeedForwardParams.initialize(d, config.ffn_dim, rng, prefix + "ffn."),
                norm2=LayerNormParams.initialize(d, prefix + "norm2."),
            ))

        decoder = []
        for i in range(config.n_layers_dec):
            prefix = f"dec.{i}."
            decoder.append(DecoderLayerParams(
                self_attn=AttentionParams.initialize(d, config.n_heads, rng, prefix + "self_attn."),
                norm1=LayerNormParams.initialize(d, prefix + "norm1."),
                cross_attn=AttentionParams.initialize(d, config.n_heads, rng, prefix + "cross_attn."),
                norm2=LayerNormParams.initialize(d, prefix + "norm2."),
                ffn=FeedForwardParams.initialize(d, config.ffn_dim, rng, prefix + "ffn."),
                norm3=LayerNormParams.initialize(d, prefix + "norm3."),
            ))

        enc_combine = dec_combine = None
        if config.has_combine:
            enc_combine = CombineParams.initialize(config.combine_dim, d, rng, "enc.combine.")
            dec_combine = CombineParams.initialize(config.combine_dim, d, rng, "dec.combine.")

        out_weight = None
        if not config.tie_output:
            out_weight = parameter(rng.normal(0.0, scale, (d, config.vocab_tgt)), "out.weight")
        out_bias = parameter(np.zeros(config.vocab_tgt), "out.bias")
        return cls(src_embed, tgt_embed, encoder, decoder, enc_combine, dec_combine,
                   out_bias, out_weight)

    def _collect(self):
        named = {"src_embed": self.src_embed, "tgt_embed": self.tgt_embed}
        for i, layer in enumerate(self.encoder):
            for block in ("self_attn", "norm1", "ffn", "norm2"):
                for key, tensor in getattr(layer, block).tensors().items():
                    named[f"enc.{i}.{block}.{key}"] = tensor
        for i, layer in enumerate(self.decoder):
            for block in ("self_attn", "norm1", "cross_attn", "norm2", "ffn", "norm3"):
                for key, tensor in getattr(layer, block).tensors().items():
                    named[f"dec.{i}.{block}.{key}"] = tensor
        for label, combine in (("enc", self.enc_combine), ("dec", self.dec_combine)):
            if combine is not None:
                for key, tensor in combine.tensors().items():
                    named[f"{label}.combine.{key}"] = tensor
        if self.out_weight is not None:
            named["out.weight"] = self.out_weight
        named["out.bias"] = self.out_bias
        return named

    def named_tensors(self):
        return dict(self._named)

    def __getitem__(self, name):
        return self._named[name]

    def __iter__(self):
        return iter(self._named.items())

    def __len__(self):
        return len(self._named)

    def count(self):
        return sum(tensor.data.size for tensor in self._named.values())

    def all_finite(self):
        return all(np.all(np.isfinite(tensor.data)) for tensor in self._named.values())

    def zero_grad(self):
        for tensor in self._named.values():
            tensor.zero_grad()

    def arrays(self):
        return {name: tensor.data.copy() for name, tensor in self._named.items()}

    def load_arrays(self, arrays):
        missing = set(self._named) - set(arrays)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, tensor in self._named.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise CheckpointError(
                    f"parameter {name} has shape {value.shape}, expected {tensor.shape}"
                )
            tensor.data = value.copy()


def param_count(config):
    """Closed-form number of learned scalars for a configuration"""
    d, f = config.d_model, config.ffn_dim
    attention = 4 * (d * d + d)
    norm = 2 * d
    ffn = d * f + f + f * d + d
    total = (config.vocab_src + config.vocab_tgt) * d
    total += config.n_layers_enc * (attention + ffn + 2 * norm)
    total += config.n_layers_dec * (2 * attention + ffn + 3 * norm)
    total += config.vocab_tgt
    if not config.tie_output:
        total += d * config.vocab_tgt
    if config.has_combine:
        total += 2 * (config.combine_dim * d + d)
    return total


def feed_forward(x, ffn):
    return linear(relu(linear(x, ffn.w1, ffn.b1)), ffn.w2, ffn.b2)


def combine_streams(global_states, local_states, combine_params, mode="concat"):
    """Merge the final-layer streams into one (len, d) representation"""
    if global_states.shape != local_states.shape:
        raise DimensionError(
            f"cannot combine streams of shapes {global_states.shape} and {local_states.shape}"
        )
    if mode == "global":
        return global_states
    if mode == "sum":
        merged = add(global_states, local_states)
    else:
        merged = concat([global_states, local_states], axis=-1)
    if combine_params.weight.shape[0] != merged.shape[-1]:
        raise DimensionError(
            f"combine weight {combine_params.weight.shape} does not accept width {merged.shape[-1]}"
        )
    return linear(merged, combine_params.weight, combine_params.bias)


class TranslationModel:
    """Forward computation over Parameters for either variant.

    Token id inputs may be a single 1-D sequence or a padded (B, L) batch;
    single sequences come back without the batch axis.
    """

    def __init__(self, config, params=None, seed=0):
        self.config = config
        self.params = params if params is not None else Parameters.initialize(config, seed)
        self.training = False
        self.rng = np.random.default_rng(seed)

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    @property
    def is_lst(self):
        return self.config.variant == "lst"

    def _dropout(self):
        if self.training and self.config.dropout > 0:
            return self.config.dropout, self.rng
        return 0.0, None

    def _as_batch(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        single = ids.ndim == 1
        if single:
            ids = ids[None, :]
        if ids.ndim != 2:
            raise DimensionError(f"token ids must be 1-D or 2-D, got shape {ids.shape}")
        if ids.shape[1] == 0:
            raise EmptySequenceError("empty token sequence")
        if ids.shape[1] > self.config.max_positions:
            raise DimensionError(
                f"sequence length {ids.shape[1]} exceeds max_positions={self.config.max_positions}"
            )
        return ids, single

    def _embed(self, table, ids):
        d = self.config.d_model
        scaled = mul(embedding(table, ids), math.sqrt(d))
        return add(scaled, sinusoidal_positions(ids.shape[1], d))

    def _feed_forward_sublayer(self, x, ffn, norm):
        rate, rng = self._dropout()
        return residual_norm(x, feed_forward(x, ffn), norm, rate, rng)

    # --- encoder -------------------------------------------------------------

    def _encode(self, src):
        cfg = self.config
        rate, rng = self._dropout()
        x = self._embed(self.params.src_embed, src)
        global_bias = self_attention_bias(src, "zero", cfg.sep_id, cfg.pad_id)
        states = []
        if not self.is_lst:
            for layer in self.params.encoder:
                x = residual_norm(
                    x, multi_head(x, x, global_bias, layer.self_attn, rate, rng), layer.norm1, rate, rng
                )
                x = self._feed_forward_sublayer(x, layer.ffn, layer.norm2)
                states.append(x)
            return x, states

        local_bias = self_attention_bias(src, "enc-local", cfg.sep_id, cfg.pad_id)
        s = StreamState(x, x)
        for layer in self.params.encoder:
            s = lst_self_attention(
                s, global_bias, local_bias, layer.self_attn, layer.norm1, rate, rng, cfg.local_query
            )
            s = StreamState(
                self._feed_forward_sublayer(s.global_stream, layer.ffn, layer.norm2),
                self._feed_forward_sublayer(s.local_stream, layer.ffn, layer.norm2),
            )
            states.append(s)
        memory = combine_streams(s.global_stream, s.local_stream, self.params.enc_combine, cfg.combine)
        return memory, states

    def encode(self, src_ids):
        """Encoder memory of shape (len, d), or (B, len, d) for a batch"""
        src, single = self._as_batch(src_ids)
        memory, _ = self._encode(src)
        return _squeeze(memory) if single else memory

    def encoder_states(self, src_ids):
        """Per-layer encoder outputs before any stream combination"""
        src, single = self._as_batch(src_ids)
        _, states = self._encode(src)
        return [_squeeze_state(s) for s in states] if single else states

    # --- decoder -------------------------------------------------------------

    def _decode(self, memory, tgt, cross_bias):
        cfg = self.config
        rate, rng = self._dropout()
        y = self._embed(self.params.tgt_embed, tgt)
        causal_bias = self_attention_bias(tgt, "causal", cfg.sep_id, cfg.pad_id)
        states = []

        def cross(x, layer):
            att = multi_head(x, memory, cross_bias, layer.cross_attn, rate, rng)
            return residual_norm(x, att, layer.norm2, rate, rng)

        if not self.is_lst:
            for layer in self.params.decoder:
                y = residual_norm(
                    y, multi_head(y, y, causal_bias, layer.self_attn, rate, rng), layer.norm1, rate, rng
                )
                y = cross(y, layer)
                y = self._feed_forward_sublayer(y, layer.ffn, layer.norm3)
                states.append(y)
            return self._project(y), states

        local_bias = self_attention_bias(tgt, "dec-local", cfg.sep_id, cfg.pad_id)
        s = StreamState(y, y)
        for layer in self.params.decoder:
            s = lst_self_attention(
                s, causal_bias, local_bias, layer.self_attn, layer.norm1, rate, rng, cfg.local_query
            )
            s = StreamState(cross(s.global_stream, layer), cross(s.local_stream, layer))
            s = StreamState(
                self._feed_forward_sublayer(s.global_stream, layer.ffn, layer.norm3),
                self._feed_forward_sublayer(s.local_stream, layer.ffn, layer.norm3),
            )
            states.append(s)
        hidden = combine_streams(s.global_stream, s.local_stream, self.params.dec_combine, cfg.combine)
        return self._project(hidden), states

    def _project(self, hidden):
        if self.params.out_weight is None:
            logits = matmul(hidden, transpose(self.params.tgt_embed))
        else:
            logits = matmul(hidden, self.params.out_weight)
        return add(logits, self.params.out_bias)

    def _memory_batch(self, memory, batch_size):
        if memory.ndim == 2:
            if batch_size == 1:
                return _unsqueeze(memory)
            return Tensor(np.broadcast_to(memory.data, (batch_size, *memory.shape)))
        return memory

    def _cross_bias(self, src_ids, memory, tgt):
        if src_ids is not None:
            src, _ = self._as_batch(src_ids)
            if src.shape[0] != tgt.shape[0]:
                src = np.broadcast_to(src, (tgt.shape[0], src.shape[1]))
            return cross_attention_bias(src, tgt.shape[1], self.config.pad_id)
        return np.zeros((tgt.shape[0], 1, tgt.shape[1], memory.shape[-2]))

    def decode_step(self, memory, tgt_prefix, src_ids=None):
        """Logits over the target vocabulary at every prefix position.

        `src_ids` is only needed to mask padded memory positions.
        """
        tgt, single = self._as_batch(tgt_prefix)
        batch_memory = self._memory_batch(memory, tgt.shape[0])
        logits, _ = self._decode(batch_memory, tgt, self._cross_bias(src_ids, memory, tgt))
        return _squeeze(logits) if single else logits

    def decoder_states(self, memory, tgt_prefix):
        tgt, single = self._as_batch(tgt_prefix)
        batch_memory = self._memory_batch(memory, tgt.shape[0])
        _, states = self._decode(batch_memory, tgt, self._cross_bias(None, memory, tgt))
        return [_squeeze_state(s) for s in states] if single else states

    def forward(self, src, tgt_in):
        """Teacher-forced logits (B, Lt, V) for padded source/target batches"""
        src, _ = self._as_batch(src)
        tgt, _ = self._as_batch(tgt_in)
        memory, _ = self._encode(src)
        cross_bias = cross_attention_bias(src, tgt.shape[1], self.config.pad_id)
        logits, _ = self._decode(memory, tgt, cross_bias)
        return logits

    # --- scoring -------------------------------------------------------------

    def next_token_log_probs(self, memory, prefixes):
        """Log-distribution of the next token for each prefix row, shape (B, V)"""
        logits = self.decode_step(memory, np.atleast_2d(prefixes))
        return log_softmax(logits.data[:, -1, :])

    def token_log_probs(self, src_ids, tgt_ids):
        """log p of each target token plus the closing eos under teacher forcing"""
        cfg = self.config
        tgt_ids = list(tgt_ids)
        memory = self.encode(src_ids)
        logits = self.decode_step(memory, [cfg.bos_id] + tgt_ids)
        logp = log_softmax(logits.data)
        targets = np.asarray(tgt_ids + [cfg.eos_id])
        return logp[np.arange(len(targets)), targets]

    def sequence_log_prob(self, src_ids, tgt_ids):
        return float(self.token_log_probs(src_ids, tgt_ids).sum())

    # --- persistence ---------------------------------------------------------

    def save(self, path, metadata=None, extra_tensors=None):
        tensors = self.params.arrays()
        if extra_tensors:
            tensors.update(extra_tensors)
        save_checkpoint(path, self.config.to_dict(), tensors, metadata or {})

    @classmethod
    def load(cls, path):
        checkpoint = load_checkpoint(path)
        config = ModelConfig.from_dict(checkpoint.config)
        model = cls(config)
        model.params.load_arrays(checkpoint.tensors)
        return model, checkpoint


def _squeeze(tensor):
    return reshape(tensor, tensor.shape[1:])


def _unsqueeze(tensor):
    return reshape(tensor, (1, *tensor.shape))


def _squeeze_state(state):
    if isinstance(state, StreamState):
        return StreamState(_squeeze(state.global_stream), _squeeze(state.local_stream))
    return _squeeze(state)
