"""Splitting two-magnification patch features into task-specific streams.

The two magnifications are mixed (with learnable per-stream scales) into
a common base feature, which four small MLPs then project into shared and
independent components for the molecular and histology tasks. Each task's
working feature fuses its own shared + independent pair. The companion
loss pushes the two shared components together while keeping the
independent components apart from each other and informative about the
fused features.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import linear


@dataclass
class HeadMlpParams:
    w1: Tensor  # (K, 2K)
    b1: Tensor
    w2: Tensor  # (2K, K)
    b2: Tensor


@dataclass
class DisentanglerParams:
    scale_low: Tensor   # () learnable weight on low-mag features
    scale_high: Tensor  # () learnable weight on high-mag features
    base_w: Tensor      # (2K, K)
    base_b: Tensor
    shared_mol: HeadMlpParams
    indep_mol: HeadMlpParams
    shared_his: HeadMlpParams
    indep_his: HeadMlpParams
    fuse_mol_w: Tensor  # (2K, K)
    fuse_mol_b: Tensor
    fuse_his_w: Tensor
    fuse_his_b: Tensor


def init_disentangler(rng: np.random.Generator, k: int, make) -> DisentanglerParams:
    def w(rows, cols):
        std = math.sqrt(2.0 / (rows + cols))
        return make(rng.normal(scale=std, size=(rows, cols)))

    def head():
        return HeadMlpParams(
            w1=w(k, 2 * k), b1=make(np.zeros((1, 2 * k))),
            w2=w(2 * k, k), b2=make(np.zeros((1, k))),
        )

    return DisentanglerParams(
        scale_low=make(np.asarray(1.0)),
        scale_high=make(np.asarray(1.0)),
        base_w=w(2 * k, k), base_b=make(np.zeros((1, k))),
        shared_mol=head(), indep_mol=head(), shared_his=head(), indep_his=head(),
        fuse_mol_w=w(2 * k, k), fuse_mol_b=make(np.zeros((1, k))),
        fuse_his_w=w(2 * k, k), fuse_his_b=make(np.zeros((1, k))),
    )


@dataclass
class DisentangledFeatures:
    base: Tensor        # (N, K) mixed-magnification features
    shared_mol: Tensor  # (N, K)
    indep_mol: Tensor
    shared_his: Tensor
    indep_his: Tensor
    fused_mol: Tensor   # (N, K) molecular-task working features
    fused_his: Tensor   # (N, K) histology-task working features


def _head_mlp(x: Tensor, p: HeadMlpParams) -> Tensor:
    return linear(ad.relu(linear(x, p.w1, p.b1)), p.w2, p.b2)


def disentangle(feats_low: Tensor, feats_high: Tensor, p: DisentanglerParams) -> DisentangledFeatures:
    if feats_low.data.shape != feats_high.data.shape:
        raise ad.ShapeError(
            f"disentangle: magnification shapes differ: "
            f"{feats_low.data.shape} vs {feats_high.data.shape}"
        )
    mixed = ad.concat([ad.mul(p.scale_low, feats_low), ad.mul(p.scale_high, feats_high)], axis=1)
    base = linear(mixed, p.base_w, p.base_b)
    shared_mol = _head_mlp(base, p.shared_mol)
    indep_mol = _head_mlp(base, p.indep_mol)
    shared_his = _head_mlp(base, p.shared_his)
    indep_his = _head_mlp(base, p.indep_his)
    fused_mol = linear(ad.concat([shared_mol, indep_mol], axis=1), p.fuse_mol_w, p.fuse_mol_b)
    fused_his = linear(ad.concat([shared_his, indep_his], axis=1), p.fuse_his_w, p.fuse_his_b)
    return DisentangledFeatures(
        base=base,
        shared_mol=shared_mol, indep_mol=indep_mol,
        shared_his=shared_his, indep_his=indep_his,
        fused_mol=fused_mol, fused_his=fused_his,
    )


def disentangle_loss(d: DisentangledFeatures, eps: float = 1e-8) -> Tensor:
    """Shared-stream gap over the summed independent-stream gaps.

    A ratio of Frobenius norms: descent shrinks the distance between the
    two shared components while growing the distances separating the
    independent components from each other and from the fused features,
    so the shared/independent split actually carries different content.
    """
    num = ad.l2norm(ad.sub(d.shared_mol, d.shared_his))
    den = ad.add(
        ad.add(
            ad.l2norm(ad.sub(d.indep_mol, d.indep_his)),
            ad.l2norm(ad.sub(d.indep_mol, d.fused_mol)),
        ),
        ad.l2norm(ad.sub(d.indep_his, d.fused_his)),
    )
    return ad.div(num, ad.add(den, eps))
