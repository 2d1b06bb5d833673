"""Five-feature construction from a record's text and image token matrices.

A record contributes a text-only vector, an image-only vector, the
L2-normalized concatenation of the two, and two cross-attended vectors
(one per query direction). Attention is single-head scaled dot-product:
``softmax(Q K^T / sqrt(d)) V`` with Q drawn from one modality and K, V
from the other. Pooled encoder outputs are the L = 1 special case, in
which the softmax is degenerate and the output equals the value
projection of the single key/value row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionError
from .numerics import check_finite, l2_normalize, mean_rows, softmax

if TYPE_CHECKING:  # pragma: no cover
    from .datastore import FeatureRecord

IMAGE_TO_TEXT = "image_to_text"
TEXT_TO_IMAGE = "text_to_image"
DIRECTIONS = (IMAGE_TO_TEXT, TEXT_TO_IMAGE)


@dataclass
class CrossAttentionParams:
    """Projection matrices for one attention direction.

    All three are d x d where d is the store embedding dimension
    (512 for the default encoder width).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    direction: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown attention direction {self.direction!r}")
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v"):
            m = getattr(self, name)
            if m.ndim != 2 or m.shape != (d, d):
                raise DimensionError(
                    f"{name} must be square {d}x{d}, got {tuple(m.shape)}"
                )

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


@dataclass
class FeatureBundle:
    """The five per-record modality features.

    f_t, f_m, f_mt, f_tm have width d; f_c is the unit-norm
    concatenation [f_t + f_m] of width 2d.
    """

    f_t: np.ndarray
    f_m: np.ndarray
    f_c: np.ndarray
    f_mt: np.ndarray
    f_tm: np.ndarray


@dataclass
class AttentionCache:
    """Forward intermediates kept for the exact backward pass."""

    x_q: np.ndarray  # (L_q, d) query-side tokens
    x_kv: np.ndarray  # (L_kv, d) key/value-side tokens
    q: np.ndarray  # (L_q, d)
    k: np.ndarray  # (L_kv, d)
    v: np.ndarray  # (L_kv, d)
    probs: np.ndarray  # (L_q, L_kv) attention weights, rows sum to 1
    out: np.ndarray  # (L_q, d)


def _check_seq(name: str, seq: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError(f"{name}: expected non-empty (L, d) matrix, got {x.shape}")
    if x.shape[1] != d:
        raise DimensionError(
            f"{name}: token width {x.shape[1]} does not match projection width {d}"
        )
    return x


def attention_forward(
    query_seq: np.ndarray, key_value_seq: np.ndarray, params: CrossAttentionParams
) -> AttentionCache:
    """Scaled dot-product attention, returning all intermediates."""
    d = params.dim
    x_q = _check_seq("query_seq", query_seq, d)
    x_kv = _check_seq("key_value_seq", key_value_seq, d)
    q = x_q @ params.w_q
    k = x_kv @ params.w_k
    v = x_kv @ params.w_v
    scores = (q @ k.T) / np.sqrt(float(d))
    probs = softmax(scores, axis=-1)
    out = probs @ v
    check_finite("attention output", out)
    return AttentionCache(x_q=x_q, x_kv=x_kv, q=q, k=k, v=v, probs=probs, out=out)


def cross_attend(
    query_seq: np.ndarray, key_value_seq: np.ndarray, params: CrossAttentionParams
) -> np.ndarray:
    """Attention output, one row per query token."""
    return attention_forward(query_seq, key_value_seq, params).out


def attention_backward(
    cache: AttentionCache, params: CrossAttentionParams, d_out: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. w_q, w_k, w_v.

    ``d_out`` is the loss gradient w.r.t. the full (L_q, d) output.
    """
    d = params.dim
    scale = 1.0 / np.sqrt(float(d))
    d_out = np.asarray(d_out, dtype=np.float64)
    d_v = cache.probs.T @ d_out
    d_probs = d_out @ cache.v.T
    # Row-wise softmax Jacobian: dS_i = P_i * (dP_i - <dP_i, P_i>).
    dot = np.sum(d_probs * cache.probs, axis=1, keepdims=True)
    d_scores = cache.probs * (d_probs - dot)
    d_q = (d_scores @ cache.k) * scale
    d_k = (d_scores.T @ cache.q) * scale
    return {
        "w_q": cache.x_q.T @ d_q,
        "w_k": cache.x_kv.T @ d_k,
        "w_v": cache.x_kv.T @ d_v,
    }


def pooled_backward(cache: AttentionCache, params: CrossAttentionParams,
                    d_pooled: np.ndarray) -> dict[str, np.ndarray]:
    """Backward through mean-pooling of the attention output rows."""
    l_q = cache.out.shape[0]
    d_out = np.repeat(d_pooled[None, :] / float(l_q), l_q, axis=0)
    return attention_backward(cache, params, d_out)


def concat_normalized(f_t: np.ndarray, f_m: np.ndarray) -> np.ndarray:
    """Concatenate [f_t + f_m] and L2-normalize the whole 2d vector once."""
    a = np.asarray(f_t, dtype=np.float64)
    b = np.asarray(f_m, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(
            f"concat_normalized: expected two equal-length vectors, got {a.shape} and {b.shape}"
        )
    return l2_normalize(np.concatenate([a, b]))


def build_bundle(
    record: "FeatureRecord",
    params_mt: CrossAttentionParams,
    params_tm: CrossAttentionParams,
) -> FeatureBundle:
    """All five features for one record.

    f_t / f_m are the mean-pooled raw token matrices; f_mt attends with
    the image tokens as queries over the text tokens; f_tm swaps the
    roles. Multi-token attention outputs are mean-pooled to one row.
    """
    f_t = mean_rows(record.text_tokens)
    f_m = mean_rows(record.image_tokens)
    f_c = concat_normalized(f_t, f_m)
    f_mt = mean_rows(cross_attend(record.image_tokens, record.text_tokens, params_mt))
    f_tm = mean_rows(cross_attend(record.text_tokens, record.image_tokens, params_tm))
    return FeatureBundle(f_t=f_t, f_m=f_m, f_c=f_c, f_mt=f_mt, f_tm=f_tm)
