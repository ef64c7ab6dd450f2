"""Attention kernels: scaled dot-product, multi-head, causal masks, and the
additive soft attention used by the recurrent decoder."""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Rng,
    Tensor,
    add,
    concat,
    constant,
    matmul,
    multiply,
    sigmoid,
    softmax,
    sum_all,
    tanh,
    uniform_init,
)

__all__ = [
    "causal_mask",
    "scaled_dot_product_attention",
    "MultiHeadParams",
    "multi_head_attention",
    "SoftAttentionParams",
    "soft_attention",
    "attention_coverage_penalty",
    "MASK_FILL",
]

# Additive logit fill for masked positions.  exp(-1e9) underflows to exactly
# +0.0 in float64, so masked weights come out bit-exactly zero while the
# kernel stays branch-free.
MASK_FILL = -1e9


def causal_mask(t: int) -> np.ndarray:
    """Boolean (t, t) matrix: entry (i, j) true iff j <= i."""
    if t < 1:
        raise ValueError(f"mask size must be >= 1, got {t}")
    return np.tril(np.ones((t, t), dtype=bool))


def _check_mask(mask, t_q, t_k):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t_q, t_k):
        raise ValueError(f"mask shape {mask.shape} != ({t_q}, {t_k})")
    empty = ~mask.any(axis=1)
    if empty.any():
        raise ValueError(f"mask rows {np.flatnonzero(empty).tolist()} allow no positions")
    return mask


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask=None):
    """softmax(q kT / sqrt(d_k)) v with optional boolean attend-allowed mask.

    Returns (output, weights); weight rows are a distribution over key
    positions, with masked positions at exactly zero.
    """
    t_q, d_k = q.shape
    t_k, d_k2 = k.shape
    if d_k != d_k2:
        raise ValueError(f"query/key widths disagree: {q.shape} vs {k.shape}")
    if v.shape[0] != t_k:
        raise ValueError(f"key/value counts disagree: {k.shape} vs {v.shape}")
    logits = multiply(matmul(q, k, transpose_b=True), 1.0 / math.sqrt(d_k))
    if mask is not None:
        mask = _check_mask(mask, t_q, t_k)
        logits = add(logits, constant(np.where(mask, 0.0, MASK_FILL)))
    weights = softmax(logits, axis=-1)
    return matmul(weights, v), weights


class MultiHeadParams:
    """Per-head query/key/value projections plus the output projection.

    Head width is d_model // heads; projections are bias-free.
    """

    def __init__(self, d_model: int, heads: int, rng: Rng, prefix="mha"):
        if d_model % heads != 0:
            raise ValueError(f"heads ({heads}) must divide d_model ({d_model})")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.w_q = [uniform_init(rng, (d_model, self.d_k), name=f"{prefix}.q{i}")
                    for i in range(heads)]
        self.w_k = [uniform_init(rng, (d_model, self.d_k), name=f"{prefix}.k{i}")
                    for i in range(heads)]
        self.w_v = [uniform_init(rng, (d_model, self.d_k), name=f"{prefix}.v{i}")
                    for i in range(heads)]
        self.w_o = uniform_init(rng, (d_model, d_model), name=f"{prefix}.o")

    def parameters(self):
        return [*self.w_q, *self.w_k, *self.w_v, self.w_o]


def multi_head_attention(x_q: Tensor, x_k: Tensor, x_v: Tensor,
                         params: MultiHeadParams, mask=None) -> Tensor:
    """Attend in ``heads`` learned subspaces, concatenate, and re-project."""
    for x in (x_q, x_k, x_v):
        if x.shape[1] != params.d_model:
            raise ValueError(f"input width {x.shape[1]} != d_model {params.d_model}")
    heads = []
    for i in range(params.heads):
        out, _ = scaled_dot_product_attention(
            matmul(x_q, params.w_q[i]),
            matmul(x_k, params.w_k[i]),
            matmul(x_v, params.w_v[i]),
            mask=mask,
        )
        heads.append(out)
    stacked = heads[0] if len(heads) == 1 else concat(heads, axis=1)
    return matmul(stacked, params.w_o)


class SoftAttentionParams:
    """Additive scorer: tanh MLP over (annotation, hidden state) pairs, plus an
    optional sigmoid gate on the context vector."""

    def __init__(self, channels: int, hidden: int, width: int, rng: Rng,
                 gated=True, prefix="soft_attn"):
        self.channels = channels
        self.hidden = hidden
        self.width = width
        self.gated = gated
        self.w_ann = uniform_init(rng, (channels, width), name=f"{prefix}.ann")
        self.w_hid = uniform_init(rng, (hidden, width), name=f"{prefix}.hid")
        self.bias = Tensor(np.zeros((1, width)), requires_grad=True,
                           name=f"{prefix}.bias")
        self.w_score = uniform_init(rng, (width, 1), name=f"{prefix}.score")
        if gated:
            self.w_gate = uniform_init(rng, (hidden, 1), name=f"{prefix}.gate.w")
            self.b_gate = Tensor(np.zeros((1, 1)), requires_grad=True,
                                 name=f"{prefix}.gate.b")

    def parameters(self):
        params = [self.w_ann, self.w_hid, self.bias, self.w_score]
        if self.gated:
            params.extend([self.w_gate, self.b_gate])
        return params


def soft_attention(annotations: Tensor, h_prev: Tensor,
                   params: SoftAttentionParams):
    """Context vector from additive attention over annotation positions.

    annotations: (P, N); h_prev: (1, D).  Returns (context (1, N),
    weights (P, 1)).  The gate, when enabled, scales the context by a
    sigmoid of the hidden state.
    """
    p = annotations.shape[0]
    if p == 0:
        raise ValueError("soft attention over zero positions")
    hidden = tanh(add(add(matmul(annotations, params.w_ann),
                          matmul(h_prev, params.w_hid)),
                      params.bias))
    scores = matmul(hidden, params.w_score)           # (P, 1)
    weights = softmax(scores, axis=0)
    context = matmul(weights, annotations, transpose_a=True)  # (1, N)
    if params.gated:
        gate = sigmoid(add(matmul(h_prev, params.w_gate), params.b_gate))
        context = multiply(context, gate)
    return context, weights


def attention_coverage_penalty(step_weights, coefficient: float) -> Tensor:
    """Doubly-stochastic regularizer: coeff * sum_i (1 - sum_t alpha[t, i])^2.

    ``step_weights`` is the per-decode-step list of (P, 1) attention weights.
    Zero exactly when every position's attention mass sums to one over time.
    """
    stacked = concat([w for w in step_weights], axis=1)  # (P, T)
    totals = matmul(stacked, constant(np.ones((stacked.shape[1], 1))))  # (P, 1)
    deficit = add(multiply(totals, -1.0), 1.0)
    return multiply(sum_all(multiply(deficit, deficit)), coefficient)
