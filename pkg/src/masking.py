"""
Additive attention masks.

Every mask is a dense float64 matrix whose entries are exactly 0 (attend) or
NEG_INF (blocked). Masks are combined with a saturating sum so that the
two-valued property survives any number of combinations.
"""

import numpy as np

from errors import DimensionError, EmptySequenceError
from numerics import NEG_INF


def _check_length(n):
    if n < 1:
        raise EmptySequenceError(f"mask requested for empty sequence (n={n})")


def _as_ids(tokens):
    ids = np.asarray(tokens)
    if ids.ndim != 1:
        raise DimensionError(f"expected a 1-D token sequence, got shape {ids.shape}")
    _check_length(ids.size)
    return ids


def zero_mask(n):
    _check_length(n)
    return np.zeros((n, n))


def causal_mask(n):
    """Position i may attend to positions j <= i"""
    _check_length(n)
    return np.triu(np.full((n, n), NEG_INF), k=1)


def segment_index(tokens, sep_id):
    """Running count of separators; a separator opens the segment that follows it"""
    ids = _as_ids(tokens)
    return np.cumsum(ids == sep_id)


def local_block_mask(tokens, sep_id):
    """Block-diagonal mask letting each token see only its own sentence"""
    segments = segment_index(tokens, sep_id)
    same_segment = segments[:, None] == segments[None, :]
    return np.where(same_segment, 0.0, NEG_INF)


def combine_masks(*masks):
    """Saturating sum: blocked anywhere means blocked, never below NEG_INF"""
    total = masks[0]
    for mask in masks[1:]:
        total = total + mask
    return np.maximum(total, NEG_INF)


def decoder_local_mask(tokens, sep_id):
    """Causal restriction intersected with the sentence blocks"""
    ids = _as_ids(tokens)
    return combine_masks(causal_mask(ids.size), local_block_mask(ids, sep_id))


def key_padding_mask(tokens, pad_id, n_queries=None):
    """Block every key column holding pad_id; shape (n_queries, len(tokens))"""
    ids = _as_ids(tokens)
    n_queries = ids.size if n_queries is None else n_queries
    row = np.where(ids == pad_id, NEG_INF, 0.0)
    return np.broadcast_to(row, (n_queries, ids.size)).copy()


def is_mask(matrix):
    matrix = np.asarray(matrix)
    return bool(np.all((matrix == 0.0) | (matrix == NEG_INF)))


MASK_KINDS = {
    "zero": lambda tokens, sep_id: zero_mask(len(tokens)),
    "causal": lambda tokens, sep_id: causal_mask(len(tokens)),
    "enc-local": local_block_mask,
    "dec-local": decoder_local_mask,
}


def self_attention_bias(ids, kind, sep_id, pad_id):
    """Stack per-row self-attention masks for a padded (B, L) id batch.

    Returns shape (B, 1, L, L) so the mask broadcasts across heads. Pad key
    columns are always blocked.
    """
    ids = np.asarray(ids)
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}")
    build = MASK_KINDS[kind]
    rows = [combine_masks(build(row, sep_id), key_padding_mask(row, pad_id)) for row in ids]
    return np.stack(rows)[:, None, :, :]


def cross_attention_bias(memory_ids, n_queries, pad_id):
    """Encoder-decoder mask: zero everywhere except padded memory positions"""
    memory_ids = np.asarray(memory_ids)
    rows = [key_padding_mask(row, pad_id, n_queries) for row in memory_ids]
    return np.stack(rows)[:, None, :, :]


def render_mask(matrix):
    """Text grid with '0' for attendable and '-' for blocked entries"""
    matrix = np.asarray(matrix)
    return "\n".join("".join("0" if value == 0.0 else "-" for value in row) for row in matrix)
