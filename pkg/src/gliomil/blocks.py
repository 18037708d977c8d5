"""Shared network pieces: linear layers, a pre-norm transformer block,
and attention-weighted pooling over a bag of patch features.

Patch bags are (N, K) matrices with no ordering semantics, so the block
uses no positional encoding and everything here is permutation
equivariant (the pooling output is permutation invariant).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ad.matmul(x, w)
    if b is not None:
        out = ad.add(out, ad.repeat_rows(b, x.data.shape[0]))
    return out


def affine_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Layer norm over features followed by a learned per-feature affine map."""
    n = x.data.shape[0]
    y = ad.layer_norm(x)
    return ad.add(ad.mul(y, ad.repeat_rows(gain, n)), ad.repeat_rows(bias, n))


@dataclass
class BlockParams:
    """Single-head self-attention + feed-forward, all square in K."""

    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


def init_block(rng: np.random.Generator, k: int, make) -> BlockParams:
    def w(rows, cols):
        std = math.sqrt(2.0 / (rows + cols))
        return make(rng.normal(scale=std, size=(rows, cols)))

    return BlockParams(
        ln1_gain=make(np.ones((1, k))),
        ln1_bias=make(np.zeros((1, k))),
        wq=w(k, k),
        wk=w(k, k),
        wv=w(k, k),
        wo=w(k, k),
        ln2_gain=make(np.ones((1, k))),
        ln2_bias=make(np.zeros((1, k))),
        ffn_w1=w(k, 2 * k),
        ffn_b1=make(np.zeros((1, 2 * k))),
        ffn_w2=w(2 * k, k),
        ffn_b2=make(np.zeros((1, k))),
    )


def transformer_block(x: Tensor, p: BlockParams) -> Tensor:
    """Pre-norm residual block: x + Attn(LN(x)), then + FFN(LN(.))."""
    k = x.data.shape[1]
    h = affine_norm(x, p.ln1_gain, p.ln1_bias)
    q = ad.matmul(h, p.wq)
    key = ad.matmul(h, p.wk)
    v = ad.matmul(h, p.wv)
    scores = ad.scale(ad.matmul(q, ad.transpose(key)), 1.0 / math.sqrt(k))
    attn = ad.softmax(scores, axis=1)
    x = ad.add(x, ad.matmul(ad.matmul(attn, v), p.wo))
    h2 = affine_norm(x, p.ln2_gain, p.ln2_bias)
    f = ad.relu(linear(h2, p.ffn_w1, p.ffn_b1))
    f = linear(f, p.ffn_w2, p.ffn_b2)
    return ad.add(x, f)


@dataclass
class AttnPoolParams:
    v: Tensor  # (L, K) scoring basis
    w: Tensor  # (L, 1) scoring weights


def init_pool(rng: np.random.Generator, k: int, make, hidden: int | None = None) -> AttnPoolParams:
    hidden = k if hidden is None else hidden
    std = math.sqrt(2.0 / (hidden + k))
    return AttnPoolParams(
        v=make(rng.normal(scale=std, size=(hidden, k))),
        w=make(rng.normal(scale=std, size=(hidden, 1))),
    )


def attention_pool(x: Tensor, p: AttnPoolParams):
    """Softmax-attention pooling of an (N, K) bag into a (1, K) summary.

    Returns (summary, weights); the weights are a positive (N, 1) column
    summing to one, so the summary is a convex combination of patch rows.
    """
    scores = ad.matmul(ad.tanh(ad.matmul(x, ad.transpose(p.v))), p.w)
    weights = ad.softmax(scores, axis=0)
    summary = ad.matmul(ad.transpose(weights), x)
    return summary, weights
