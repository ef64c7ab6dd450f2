"""Caption decoders: soft-attention LSTM and masked-transformer stacks,
label-smoothed cross entropy, and greedy/beam sequence search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    MultiHeadParams,
    SoftAttentionParams,
    attention_coverage_penalty,
    causal_mask,
    multi_head_attention,
    scaled_dot_product_attention,
    soft_attention,
)
from .tensor import (
    Rng,
    Tensor,
    add,
    concat,
    constant,
    dropout,
    embedding,
    layer_norm,
    log,
    make_dropout_mask,
    matmul,
    mean_rows,
    multiply,
    no_grad,
    relu,
    sigmoid,
    softmax,
    sum_all,
    tanh,
    uniform_init,
)
from .text import END_ID, PAD_ID, START_ID

__all__ = [
    "LstmDecoder",
    "TransformerDecoder",
    "positional_encoding",
    "label_smoothed_loss",
    "DecodeOutput",
    "greedy_decode",
    "beam_decode",
]


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table: even columns sin, odd columns cos, with
    geometrically spaced frequencies."""
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(max_len)[:, None]
    freqs = np.power(10000.0, -np.arange(0, d_model, 2) / d_model)[None, :]
    table = np.empty((max_len, d_model))
    table[:, 0::2] = np.sin(pos * freqs)
    table[:, 1::2] = np.cos(pos * freqs)
    return table


def label_smoothed_loss(logits: Tensor, targets, epsilon: float) -> Tensor:
    """Mean smoothed cross entropy over non-pad positions.

    Target distribution per position: (1 - eps) * onehot + eps / V.  Pad
    positions are excluded from both the mean and the gradient.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    targets = np.asarray(targets, dtype=np.int64)
    t, v = logits.shape
    if targets.shape != (t,):
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and targets.max() >= v:
        raise IndexError(f"target id {targets.max()} >= vocabulary size {v}")
    valid = targets != PAD_ID
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("loss over pad-only targets")
    q = np.full((t, v), epsilon / v)
    q[np.arange(t), targets] += 1.0 - epsilon
    q[~valid] = 0.0
    weights = q / n_valid
    logp = log(softmax(logits, axis=-1))
    return multiply(sum_all(multiply(constant(weights), logp)), -1.0)


def _affine(x, w, b):
    return add(matmul(x, w), b)


def _zeros_param(shape, name):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


# -- LSTM decoder -----------------------------------------------------------------


class LstmDecoder:
    """Recurrent caption generator with additive attention over annotations.

    State is initialized from the mean annotation vector through separate
    affine+tanh maps; each step attends with the previous hidden state and
    feeds concat(word embedding, context) through a standard LSTM cell.
    """

    GATES = ("i", "f", "o", "g")

    def __init__(self, vocab_size: int, channels: int, rng: Rng, embed_size=512,
                 hidden_size=512, attention_width=64, dropout_rate=0.5,
                 gated_attention=True, coverage_coeff=1.0):
        self.vocab_size = vocab_size
        self.channels = channels
        self.embed_size = embed_size
        self.hidden_size = hidden_size
        self.dropout_rate = dropout_rate
        self.coverage_coeff = coverage_coeff

        self.embed = uniform_init(rng, (vocab_size, embed_size), name="lstm.embed")
        self.attn = SoftAttentionParams(channels, hidden_size, attention_width,
                                        rng, gated=gated_attention, prefix="lstm.attn")
        self.w_init_h = uniform_init(rng, (channels, hidden_size), name="lstm.init_h.w")
        self.b_init_h = _zeros_param((1, hidden_size), "lstm.init_h.b")
        self.w_init_c = uniform_init(rng, (channels, hidden_size), name="lstm.init_c.w")
        self.b_init_c = _zeros_param((1, hidden_size), "lstm.init_c.b")
        in_size = embed_size + channels
        self.w_x = {g: uniform_init(rng, (in_size, hidden_size), name=f"lstm.wx_{g}")
                    for g in self.GATES}
        self.w_h = {g: uniform_init(rng, (hidden_size, hidden_size), name=f"lstm.wh_{g}")
                    for g in self.GATES}
        self.b = {g: _zeros_param((1, hidden_size), f"lstm.b_{g}") for g in self.GATES}
        self.w_out = uniform_init(rng, (hidden_size, vocab_size), name="lstm.out.w")
        self.b_out = _zeros_param((1, vocab_size), "lstm.out.b")

    def parameters(self):
        params = [self.embed, self.w_init_h, self.b_init_h, self.w_init_c,
                  self.b_init_c]
        params.extend(self.attn.parameters())
        for g in self.GATES:
            params.extend([self.w_x[g], self.w_h[g], self.b[g]])
        params.extend([self.w_out, self.b_out])
        return params

    def init_state(self, annotations: Tensor):
        """(h0, c0) from the mean annotation through distinct affine+tanh maps."""
        mean = mean_rows(annotations)
        h0 = tanh(_affine(mean, self.w_init_h, self.b_init_h))
        c0 = tanh(_affine(mean, self.w_init_c, self.b_init_c))
        return h0, c0

    def step(self, token_id: int, h: Tensor, c: Tensor, annotations: Tensor,
             train=False, rng: Rng | None = None):
        """One decode step; returns (logits (1, V), h', c', attention weights)."""
        context, alpha = soft_attention(annotations, h, self.attn)
        x = concat([embedding(self.embed, [int(token_id)]), context], axis=1)
        gates = {
            g: _affine(x, self.w_x[g], self.b[g]) + matmul(h, self.w_h[g])
            for g in self.GATES
        }
        i = sigmoid(gates["i"])
        f = sigmoid(gates["f"])
        o = sigmoid(gates["o"])
        g_new = tanh(gates["g"])
        c_new = add(multiply(f, c), multiply(i, g_new))
        h_new = multiply(o, tanh(c_new))
        out = h_new
        if train and self.dropout_rate > 0.0:
            out = dropout(out, make_dropout_mask(rng, out.shape, self.dropout_rate))
        logits = _affine(out, self.w_out, self.b_out)
        return logits, h_new, c_new, alpha

    def caption_loss(self, annotations: Tensor, caption, epsilon=0.0,
                     train=False, rng: Rng | None = None) -> Tensor:
        """Teacher-forced smoothed loss over one caption (<start> ... <end>),
        plus the doubly-stochastic attention penalty when configured."""
        caption = list(caption)
        h, c = self.init_state(annotations)
        step_logits = []
        alphas = []
        for token in caption[:-1]:
            logits, h, c, alpha = self.step(token, h, c, annotations,
                                            train=train, rng=rng)
            step_logits.append(logits)
            alphas.append(alpha)
        logits = concat(step_logits, axis=0)
        loss = label_smoothed_loss(logits, caption[1:], epsilon)
        if self.coverage_coeff > 0.0:
            loss = add(loss, attention_coverage_penalty(alphas, self.coverage_coeff))
        return loss

    def stepper(self, annotations: Tensor):
        return _LstmStepper(self, constant(annotations.data))


class _LstmStepper:
    """Evaluation-mode incremental interface for sequence search."""

    def __init__(self, decoder: LstmDecoder, annotations: Tensor):
        self.decoder = decoder
        self.annotations = annotations
        with no_grad():
            self.start_state = decoder.init_state(annotations)

    def step(self, state, token_id: int):
        h, c = state
        with no_grad():
            logits, h, c, alpha = self.decoder.step(token_id, h, c,
                                                    self.annotations, train=False)
        return (h, c), _log_softmax_np(logits.data[0]), alpha.data[:, 0]


# -- transformer decoder ------------------------------------------------------------


class _TransformerBlock:
    """Masked self-attention, cross-attention over annotations, feed-forward;
    each sub-layer wrapped in dropout, residual, and affine layer norm."""

    def __init__(self, d_model, heads, d_ff, rng, idx):
        p = f"tf.block{idx}"
        self.self_attn = MultiHeadParams(d_model, heads, rng, prefix=f"{p}.self")
        self.cross_attn = MultiHeadParams(d_model, heads, rng, prefix=f"{p}.cross")
        self.w_ff1 = uniform_init(rng, (d_model, d_ff), name=f"{p}.ff1.w")
        self.b_ff1 = _zeros_param((1, d_ff), f"{p}.ff1.b")
        self.w_ff2 = uniform_init(rng, (d_ff, d_model), name=f"{p}.ff2.w")
        self.b_ff2 = _zeros_param((1, d_model), f"{p}.ff2.b")
        self.ln_gain = [Tensor(np.ones((1, d_model)), requires_grad=True,
                               name=f"{p}.ln{k}.gain") for k in range(3)]
        self.ln_bias = [_zeros_param((1, d_model), f"{p}.ln{k}.bias") for k in range(3)]

    def parameters(self):
        params = self.self_attn.parameters() + self.cross_attn.parameters()
        params.extend([self.w_ff1, self.b_ff1, self.w_ff2, self.b_ff2])
        params.extend(self.ln_gain)
        params.extend(self.ln_bias)
        return params

    def _add_norm(self, x, sub, k, train, rate, rng):
        if train and rate > 0.0:
            sub = dropout(sub, make_dropout_mask(rng, sub.shape, rate))
        normed = layer_norm(add(x, sub))
        return add(multiply(normed, self.ln_gain[k]), self.ln_bias[k])

    def forward(self, x, memory, mask, train, rate, rng):
        sa = multi_head_attention(x, x, x, self.self_attn, mask=mask)
        x = self._add_norm(x, sa, 0, train, rate, rng)
        ca = multi_head_attention(x, memory, memory, self.cross_attn)
        x = self._add_norm(x, ca, 1, train, rate, rng)
        ff = _affine(relu(_affine(x, self.w_ff1, self.b_ff1)), self.w_ff2, self.b_ff2)
        return self._add_norm(x, ff, 2, train, rate, rng)


class TransformerDecoder:
    """Stack of masked decoder blocks attending over encoder annotations.

    Annotations are projected once from their channel width to d_model before
    serving as cross-attention memory.
    """

    def __init__(self, vocab_size: int, channels: int, rng: Rng, d_model=512,
                 heads=1, layers=3, d_ff=2048, max_len=30, dropout_rate=0.1):
        if layers < 1:
            raise ValueError(f"layers must be >= 1, got {layers}")
        self.vocab_size = vocab_size
        self.channels = channels
        self.d_model = d_model
        self.max_len = max_len
        self.dropout_rate = dropout_rate
        self.embed = uniform_init(rng, (vocab_size, d_model), name="tf.embed")
        self.pe = positional_encoding(max_len + 2, d_model)  # room for specials
        self.w_mem = uniform_init(rng, (channels, d_model), name="tf.mem.w")
        self.b_mem = _zeros_param((1, d_model), "tf.mem.b")
        self.blocks = [_TransformerBlock(d_model, heads, d_ff, rng, i)
                       for i in range(layers)]
        self.w_out = uniform_init(rng, (d_model, vocab_size), name="tf.out.w")
        self.b_out = _zeros_param((1, vocab_size), "tf.out.b")

    def parameters(self):
        params = [self.embed, self.w_mem, self.b_mem]
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend([self.w_out, self.b_out])
        return params

    def forward(self, token_ids, annotations: Tensor, train=False,
                rng: Rng | None = None) -> Tensor:
        """Logits (T, V) for next-token prediction at every input position."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        t = token_ids.shape[0]
        if t > self.pe.shape[0]:
            raise ValueError(f"sequence length {t} exceeds max length {self.pe.shape[0]}")
        x = multiply(embedding(self.embed, token_ids), math.sqrt(self.d_model))
        x = add(x, constant(self.pe[:t]))
        memory = _affine(annotations, self.w_mem, self.b_mem)
        mask = causal_mask(t)
        for block in self.blocks:
            x = block.forward(x, memory, mask, train, self.dropout_rate, rng)
        return _affine(x, self.w_out, self.b_out)

    def caption_loss(self, annotations: Tensor, caption, epsilon=0.1,
                     train=False, rng: Rng | None = None) -> Tensor:
        caption = list(caption)
        logits = self.forward(caption[:-1], annotations, train=train, rng=rng)
        return label_smoothed_loss(logits, caption[1:], epsilon)

    def stepper(self, annotations: Tensor):
        return _TransformerStepper(self, constant(annotations.data))


class _TransformerStepper:
    """Evaluation-mode interface: re-runs the stack over the growing prefix."""

    def __init__(self, decoder: TransformerDecoder, annotations: Tensor):
        self.decoder = decoder
        self.annotations = annotations
        self.start_state = ()

    def step(self, state, token_id: int):
        prefix = state + (int(token_id),)
        with no_grad():
            logits = self.decoder.forward(list(prefix), self.annotations,
                                          train=False)
        return prefix, _log_softmax_np(logits.data[-1]), None


# -- sequence search -----------------------------------------------------------------


@dataclass
class DecodeOutput:
    """One decoded caption: body token ids (no specials) and log-probabilities."""

    token_ids: list
    step_logprobs: list
    total_logprob: float
    attention: list = field(default_factory=list)

    def __post_init__(self):
        assert START_ID not in self.token_ids and PAD_ID not in self.token_ids


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def greedy_decode(decoder, annotations, max_len: int) -> DecodeOutput:
    """Argmax decoding from <start> until <end> or ``max_len`` body tokens.

    Ties break toward the lowest token id.
    """
    stepper = decoder.stepper(annotations)
    state = stepper.start_state
    token = START_ID
    ids, logprobs, attention = [], [], []
    total = 0.0
    for _ in range(max_len + 1):
        state, logp, alpha = stepper.step(state, token)
        masked = logp.copy()
        masked[[PAD_ID, START_ID]] = -np.inf  # never emitted as body tokens
        token = int(np.argmax(masked))
        total += float(logp[token])
        logprobs.append(float(logp[token]))
        if alpha is not None:
            attention.append(alpha)
        if token == END_ID:
            break
        ids.append(token)
        if len(ids) == max_len:
            break
    return DecodeOutput(ids, logprobs, total, attention)


@dataclass
class _Hypothesis:
    score: float
    emitted: tuple
    last_token: int
    state: object
    logprobs: tuple
    finished: bool = False

    def sort_key(self):
        return (-self.score, self.emitted)


def beam_decode(decoder, annotations, beam_size: int, max_len: int,
                length_normalize=False) -> list:
    """Breadth-limited best-first search over token sequences.

    Hypotheses that emit <end> retire with their accumulated score (raw log
    probability sums unless ``length_normalize``); up to ``beam_size`` results
    return in descending score order.  ``beam_size=1`` reproduces greedy
    decoding exactly, including tie-breaking.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    stepper = decoder.stepper(annotations)
    live = [_Hypothesis(0.0, (), START_ID, stepper.start_state, ())]
    finished = []
    for _ in range(max_len + 1):
        candidates = []
        for hyp in live:
            state, logp, _ = stepper.step(hyp.state, hyp.last_token)
            for v in range(logp.shape[0]):
                if v in (PAD_ID, START_ID):
                    continue
                score = hyp.score + float(logp[v])
                if v == END_ID:
                    candidates.append(_Hypothesis(score, hyp.emitted, v, state,
                                                  hyp.logprobs + (float(logp[v]),),
                                                  finished=True))
                else:
                    candidates.append(_Hypothesis(score, hyp.emitted + (v,), v,
                                                  state,
                                                  hyp.logprobs + (float(logp[v]),)))
        candidates.sort(key=_Hypothesis.sort_key)
        # Top beam_size candidates overall: finished ones retire, the rest
        # stay live (hypotheses at the length limit retire unterminated).
        live = []
        for cand in candidates[:beam_size]:
            if cand.finished or len(cand.emitted) >= max_len:
                finished.append(cand)
            else:
                live.append(cand)
        if not live:
            break

    def final_score(h):
        if length_normalize and h.logprobs:
            return h.score / len(h.logprobs)
        return h.score

    finished.sort(key=lambda h: (-final_score(h), h.emitted))
    return [
        DecodeOutput(list(h.emitted), list(h.logprobs), final_score(h))
        for h in finished[:beam_size]
    ]
