"""Neural building blocks: LSTM cell, stacked biLSTM, attention layers.

Weight layout: LSTM input/recurrent weights are stored input-major
([D x 4H] / [H x 4H]) so a step is `x @ w_x + h @ w_h + b` for both a single
vector [D] and a batch [B x D]. Gate order along the 4H axis is
input, forget, candidate, output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LstmParams:
    w_x: Tensor  # [D, 4H]
    w_h: Tensor  # [H, 4H]
    b: Tensor  # [4H]
    input_dim: int
    hidden_dim: int

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b]


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> LstmParams:
    return LstmParams(
        w_x=ad.parameter(rng, (input_dim, 4 * hidden_dim)),
        w_h=ad.parameter(rng, (hidden_dim, 4 * hidden_dim)),
        b=ad.zeros_parameter((4 * hidden_dim,)),
        input_dim=input_dim,
        hidden_dim=hidden_dim,
    )


def lstm_step(x: Tensor, h: Tensor, c: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step. `x` is [D] or [B, D]; `h`, `c` match with H columns."""
    if x.data.shape[-1] != p.input_dim or h.data.shape[-1] != p.hidden_dim:
        raise ValueError(
            f"lstm_step dims: x {x.data.shape}, h {h.data.shape} "
            f"vs params D={p.input_dim}, H={p.hidden_dim}"
        )
    z = ad.add(ad.add(x @ p.w_x, h @ p.w_h), p.b)
    hd = p.hidden_dim
    i = ad.sigmoid(ad.narrow(z, -1, 0, hd))
    f = ad.sigmoid(ad.narrow(z, -1, hd, hd))
    g = ad.tanh(ad.narrow(z, -1, 2 * hd, hd))
    o = ad.sigmoid(ad.narrow(z, -1, 3 * hd, hd))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


@dataclass
class BiLstmStack:
    """Stacked biLSTM; layer i consumes the [.. x 2H] output of layer i-1."""

    layers: list[tuple[LstmParams, LstmParams]]  # (forward, backward) per layer
    dropout: float = 0.0

    @property
    def output_dim(self) -> int:
        return 2 * self.layers[-1][0].hidden_dim

    def parameters(self) -> list[Tensor]:
        out = []
        for fwd, bwd in self.layers:
            out.extend(fwd.parameters())
            out.extend(bwd.parameters())
        return out


def init_bilstm_stack(
    rng: np.random.Generator,
    input_dim: int,
    hidden_dim: int,
    num_layers: int,
    dropout: float = 0.0,
) -> BiLstmStack:
    layers = []
    d = input_dim
    for _ in range(num_layers):
        layers.append((init_lstm(rng, d, hidden_dim), init_lstm(rng, d, hidden_dim)))
        d = 2 * hidden_dim
    return BiLstmStack(layers=layers, dropout=dropout)


def _run_direction(
    xs: list[Tensor],
    mask: np.ndarray | None,
    p: LstmParams,
    reverse: bool,
) -> list[Tensor]:
    """Run one direction over per-step inputs [B, D]; returns hidden per step.

    With a mask, state updates are frozen on padded steps so padding cannot
    leak into real positions (matters for the backward direction).
    """
    batch = xs[0].data.shape[0]
    h = Tensor(np.zeros((batch, p.hidden_dim)))
    c = Tensor(np.zeros((batch, p.hidden_dim)))
    steps = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    out: list[Tensor | None] = [None] * len(xs)
    for t in steps:
        h_new, c_new = lstm_step(xs[t], h, c, p)
        if mask is not None:
            m = Tensor(mask[:, t : t + 1])
            keep = Tensor(1.0 - mask[:, t : t + 1])
            h = ad.add(ad.mul(m, h_new), ad.mul(keep, h))
            c = ad.add(ad.mul(m, c_new), ad.mul(keep, c))
        else:
            h, c = h_new, c_new
        out[t] = h
    return out  # type: ignore[return-value]


def bilstm_run_batch(
    x: Tensor,
    mask: np.ndarray | None,
    stack: BiLstmStack,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encode a batch [B, T, D] -> [B, T, 2H]; `mask` is [B, T] in {0, 1}."""
    b, t, _ = x.data.shape
    if t < 1:
        raise ValueError("cannot encode an empty sequence")
    layer_in = x
    for fwd, bwd in stack.layers:
        if train_mode and stack.dropout > 0.0:
            if rng is None:
                raise ValueError("train_mode dropout needs an rng")
            layer_in = ad.dropout(layer_in, stack.dropout, rng)
        xs = [ad.select(layer_in, i, axis=1) for i in range(t)]
        hf = _run_direction(xs, mask, fwd, reverse=False)
        hb = _run_direction(xs, mask, bwd, reverse=True)
        rows = [ad.concat([hf[i], hb[i]], axis=-1) for i in range(t)]
        layer_in = ad.stack(rows, axis=1)
    return layer_in


def bilstm_encode(
    embedded: Tensor,
    stack: BiLstmStack,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encode one sequence [T, D] -> [T, 2H] (top layer, both directions)."""
    t = embedded.data.shape[0]
    if t < 1:
        raise ValueError("cannot encode an empty sequence")
    x3 = ad.reshape(embedded, (1, t, embedded.data.shape[1]))
    out = bilstm_run_batch(x3, None, stack, train_mode=train_mode, rng=rng)
    return ad.reshape(out, (t, stack.output_dim))


@dataclass
class SelfAttentionParams:
    """Single-head structured self-attention over biLSTM states."""

    w1: Tensor  # [2H, A]
    w2: Tensor  # [A]

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.w2]


def init_self_attention(rng: np.random.Generator, input_dim: int, attn_dim: int) -> SelfAttentionParams:
    if attn_dim <= 0:
        raise ValueError("attention size must be positive")
    return SelfAttentionParams(
        w1=ad.parameter(rng, (input_dim, attn_dim)),
        w2=ad.parameter(rng, (attn_dim,)),
    )


def self_attention(h: Tensor, p: SelfAttentionParams) -> tuple[Tensor, Tensor]:
    """Pool [T, 2H] states into a sentence vector; returns (vector, weights)."""
    scores = ad.tanh(h @ p.w1) @ p.w2  # [T]
    alpha = ad.softmax(scores, axis=-1)
    sentence = alpha @ h  # [2H]
    return sentence, alpha


def dot_attention(query: Tensor, h_src: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product attention of `query` [d] over `h_src` [S, d]."""
    if query.data.shape[-1] != h_src.data.shape[-1]:
        raise ValueError(
            f"dot_attention dims: query {query.data.shape} vs keys {h_src.data.shape}"
        )
    scores = h_src @ query  # [S]
    alpha = ad.softmax(scores, axis=-1)
    context = alpha @ h_src  # [d]
    return context, alpha


def dot_attention_batch(
    query: Tensor, h_src: Tensor, mask: np.ndarray | None = None
) -> tuple[Tensor, Tensor]:
    """Batched dot attention: query [B, d] over h_src [B, S, d].

    Padded source positions (mask 0) are excluded via a large negative score.
    """
    b, s, d = h_src.data.shape
    scores = ad.reshape(h_src @ ad.reshape(query, (b, d, 1)), (b, s))
    if mask is not None:
        scores = ad.add(scores, Tensor((mask - 1.0) * 1e9))
    alpha = ad.softmax(scores, axis=-1)
    context = ad.reshape(ad.reshape(alpha, (b, 1, s)) @ h_src, (b, d))
    return context, alpha
