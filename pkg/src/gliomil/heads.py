"""Task heads: molecular marker branches with a correlation graph layer,
the histology branch, and the fused tumour classifier.

The three marker branches run in sequence -- IDH first as the upstream
event, then 1p/19q on IDH's output, then CDKN on 1p/19q's -- so each
later branch sees the earlier ones' refinements. Their stacked outputs
pass through one graph convolution whose (fixed) adjacency is the
marker co-occurrence estimated from training labels, blended back into
the input by a residual coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import AttnPoolParams, attention_pool, init_block, init_pool, transformer_block

MARKER_BLOCK_COUNTS = {"idh_mut": 3, "codel_1p19q": 2, "cdkn_homdel": 2}
HISTOLOGY_BLOCK_COUNT = 3


@dataclass
class BranchParams:
    """One prediction branch: refinement blocks, a pool, and a 2-way classifier."""

    blocks: list
    pool: AttnPoolParams
    clf_w: Tensor  # (K, 2)
    clf_b: Tensor  # (1, 2)


def init_branch(rng: np.random.Generator, k: int, n_blocks: int, make) -> BranchParams:
    std = math.sqrt(2.0 / (k + 2))
    return BranchParams(
        blocks=[init_block(rng, k, make) for _ in range(n_blocks)],
        pool=init_pool(rng, k, make),
        clf_w=make(rng.normal(scale=std, size=(k, 2))),
        clf_b=make(np.zeros((1, 2))),
    )


@dataclass
class MolecularParams:
    idh: BranchParams
    codel: BranchParams
    cdkn: BranchParams
    graph_w: Tensor  # (K, K)


def init_molecular(rng: np.random.Generator, k: int, make) -> MolecularParams:
    return MolecularParams(
        idh=init_branch(rng, k, MARKER_BLOCK_COUNTS["idh_mut"], make),
        codel=init_branch(rng, k, MARKER_BLOCK_COUNTS["codel_1p19q"], make),
        cdkn=init_branch(rng, k, MARKER_BLOCK_COUNTS["cdkn_homdel"], make),
        graph_w=make(rng.normal(scale=math.sqrt(1.0 / k), size=(k, k))),
    )


@dataclass
class MolecularState:
    feats_in: tuple    # three (N, K) tensors, pre-graph
    feats_out: tuple   # three (N, K) tensors, post-graph residual blend
    pooled: tuple      # three (1, K) summaries
    attn: tuple        # three (N, 1) attention columns
    logits: tuple      # three (1, 2) marker logits


def graph_mix(feats_in, adjacency: np.ndarray, graph_w: Tensor, alpha: float):
    """One graph convolution over the marker axis with a residual blend.

    mid_i = relu(sum_j A[i, j] * (F_j @ W)); out_i = alpha * mid_i +
    (1 - alpha) * F_i. The adjacency is a constant 3x3 matrix.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.shape != (3, 3):
        raise ValueError(f"adjacency must be 3x3, got {a.shape}")
    projected = [ad.matmul(f, graph_w) for f in feats_in]
    out = []
    for i in range(3):
        acc = ad.scale(projected[0], float(a[i, 0]))
        for j in (1, 2):
            acc = ad.add(acc, ad.scale(projected[j], float(a[i, j])))
        mid = ad.relu(acc)
        out.append(ad.add(ad.scale(mid, alpha), ad.scale(feats_in[i], 1.0 - alpha)))
    return tuple(out)


def molecular_forward(
    feats: Tensor,
    adjacency: np.ndarray,
    p: MolecularParams,
    alpha: float,
    use_graph: bool = True,
) -> MolecularState:
    n = feats.data.shape[0]
    h = feats
    per_branch = []
    for branch in (p.idh, p.codel, p.cdkn):
        for block in branch.blocks:
            h = transformer_block(h, block)
        per_branch.append(h)
    feats_in = tuple(per_branch)
    feats_out = graph_mix(feats_in, adjacency, p.graph_w, alpha) if use_graph else feats_in
    pooled, attn, logits = [], [], []
    for branch, f in zip((p.idh, p.codel, p.cdkn), feats_out):
        z, a = attention_pool(f, branch.pool)
        pooled.append(z)
        attn.append(a)
        logits.append(ad.add(ad.matmul(z, branch.clf_w), branch.clf_b))
    return MolecularState(
        feats_in=feats_in, feats_out=feats_out,
        pooled=tuple(pooled), attn=tuple(attn), logits=tuple(logits),
    )


def correlation_loss(feats_out, adjacency: np.ndarray) -> Tensor:
    """Mean squared gap between label co-occurrence and feature cosines.

    The feature side is the 3x3 matrix of flattened (Frobenius) cosine
    similarities between marker feature blocks; a zero-norm block makes
    its pairs' cosines 0.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    terms = []
    for i in range(3):
        for j in range(3):
            gap = ad.sub(ad.cosine(feats_out[i], feats_out[j]), float(a[i, j]))
            terms.append(ad.mul(gap, gap))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / 9.0)


@dataclass
class HistologyParams:
    blocks: list
    pool: AttnPoolParams
    clf_w: Tensor
    clf_b: Tensor


def init_histology(rng: np.random.Generator, k: int, make) -> HistologyParams:
    std = math.sqrt(2.0 / (k + 2))
    return HistologyParams(
        blocks=[init_block(rng, k, make) for _ in range(HISTOLOGY_BLOCK_COUNT)],
        pool=init_pool(rng, k, make),
        clf_w=make(rng.normal(scale=std, size=(k, 2))),
        clf_b=make(np.zeros((1, 2))),
    )


@dataclass
class HistologyState:
    feats: Tensor   # (N, K) refined patch features
    pooled: Tensor  # (1, K)
    attn: Tensor    # (N, 1)
    logits: Tensor  # (1, 2)


def histology_forward(feats: Tensor, p: HistologyParams) -> HistologyState:
    h = feats
    for block in p.blocks:
        h = transformer_block(h, block)
    z, a = attention_pool(h, p.pool)
    logits = ad.add(ad.matmul(z, p.clf_w), p.clf_b)
    return HistologyState(feats=h, pooled=z, attn=a, logits=logits)


def fusion_classify(pooled_his: Tensor, pooled_mol, w: Tensor, b: Tensor) -> Tensor:
    """Four-way tumour logits from both tasks' pooled summaries.

    The molecular side enters as the mean of the three marker summaries;
    the histology side as-is. Both halves concatenate into (1, 2K).
    """
    mol_mean = ad.scale(ad.add(ad.add(pooled_mol[0], pooled_mol[1]), pooled_mol[2]), 1.0 / 3.0)
    joint = ad.concat([pooled_his, mol_mean], axis=1)
    return ad.add(ad.matmul(joint, w), b)
