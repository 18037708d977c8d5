"""Cross-task coupling: patch confidences, their overlap, and gradient
modulation between the histology and molecular parameter groups.

Patch confidences score how much each patch drives a branch's decision
for one class of interest (IDH-wildtype for the molecular side, lesion
presence for the histology side). The overlap of the two top-M patch
sets is both a monitored metric and -- through a softened surrogate -- a
loss that pulls the tasks toward agreeing on which patches matter, with
M shrinking on a schedule so agreement is demanded only on the most
decisive patches as training progresses.

Gradient modulation projects one parameter group's gradient to be
orthogonal to the other group's, keeping its length. The two groups have
different sizes, so the reference gradient is embedded into the
modulated group's coordinate space first (zero-padded or truncated at
the tail). Both flat orders lead with structurally identical sub-trees
(refinement blocks, pool, 2-way classifier) -- the molecular group
starts with the IDH branch -- so the embedding aligns the coupled pair
of branches coordinate-for-coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_TINY_NORM = 1e-12


# ---------------------------------------------------------------------------
# patch confidences

@dataclass
class ConfidenceVector:
    """Per-patch confidence for one branch's class of interest.

    ``order`` ranks patches by descending confidence, ties broken toward
    the lower patch index. ``column`` keeps the differentiable (N, 1)
    tensor for the surrogate loss.
    """

    values: np.ndarray  # (N,) float64
    order: np.ndarray   # (N,) int64
    column: Tensor      # (N, 1)

    def top(self, m: int) -> np.ndarray:
        return self.order[:m]


def confidence_weights(feats: Tensor, pooled: Tensor, class_col: Tensor) -> ConfidenceVector:
    """c_n = (f_n * pooled) . class_col for every patch row f_n."""
    n = feats.data.shape[0]
    column = ad.matmul(ad.mul(feats, ad.repeat_rows(pooled, n)), class_col)
    values = column.data.ravel().copy()
    order = np.argsort(-values, kind="stable")
    return ConfidenceVector(values=values, order=order, column=column)


# ---------------------------------------------------------------------------
# top-M agreement

@dataclass
class CurriculumSchedule:
    start: int          # initial top-M
    decay: float        # multiplier applied every `every` epochs
    every: int          # epochs per decay step


def curriculum_m(epoch: int, schedule: CurriculumSchedule, n_patches: int) -> int:
    """Scheduled top-M, floored to an int and clamped into [1, n_patches]."""
    raw = schedule.start * schedule.decay ** (epoch // schedule.every)
    return int(np.clip(int(raw), 1, n_patches))


def dcc_overlap(a: ConfidenceVector, b: ConfidenceVector, m: int) -> float:
    """Fraction of the two top-M patch sets that coincide."""
    return len(np.intersect1d(a.top(m), b.top(m))) / m


def dcc_surrogate(a: ConfidenceVector, b: ConfidenceVector, m: int, temperature: float) -> Tensor:
    """Differentiable stand-in for (1 - overlap).

    Each side's confidences are softened into a distribution over patches;
    the loss is 1 minus the average mass each distribution places on the
    *other* side's current top-M set. The top-M memberships are treated
    as constants, so gradients flow only through the softened masses.
    """
    n = a.values.size
    q_a = ad.softmax(ad.scale(a.column, 1.0 / temperature), axis=0)
    q_b = ad.softmax(ad.scale(b.column, 1.0 / temperature), axis=0)
    mask_a = np.zeros((n, 1))
    mask_a[a.top(m)] = 1.0
    mask_b = np.zeros((n, 1))
    mask_b[b.top(m)] = 1.0
    cross = ad.add(
        ad.sum_all(ad.mul(q_b, Tensor(mask_a))),
        ad.sum_all(ad.mul(q_a, Tensor(mask_b))),
    )
    return ad.sub(Tensor(1.0), ad.scale(cross, 0.5))


# ---------------------------------------------------------------------------
# gradient surgery

def project_perp(vec: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Component of ``vec`` orthogonal to ``ref`` (same-length 1-d vectors).

    A reference shorter than the tiny-norm floor leaves ``vec`` unchanged.
    """
    vec = np.asarray(vec, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if vec.shape != ref.shape:
        raise ValueError(f"project_perp: lengths differ: {vec.shape} vs {ref.shape}")
    denom = float(ref @ ref)
    if denom < _TINY_NORM * _TINY_NORM:
        return vec.copy()
    return vec - (float(vec @ ref) / denom) * ref


def rescale(vec: np.ndarray, target_norm: float) -> np.ndarray:
    """Scale ``vec`` to the given Euclidean length (zero vectors pass through)."""
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm < _TINY_NORM:
        return vec.copy()
    return vec * (float(target_norm) / norm)


def embed_reference(ref: np.ndarray, length: int) -> np.ndarray:
    """Represent a reference gradient in a space of the given length.

    Zero-pads a shorter reference; truncates a longer one. Because both
    partitions' flat orders lead with the same branch structure, the kept
    coordinates are the structurally matching ones.
    """
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if ref.size >= length:
        return ref[:length].copy()
    out = np.zeros(length)
    out[: ref.size] = ref
    return out


# ---------------------------------------------------------------------------
# gradient sets and modulation

@dataclass
class GradientSet:
    """Named gradients split into the two modulated groups plus the rest.

    Dicts preserve insertion order; flattening concatenates raveled
    arrays in that order.
    """

    histology: dict   # name -> ndarray
    molecular: dict
    shared: dict      # disentangler + fusion: never modulated

    def flat(self, group: str) -> np.ndarray:
        arrs = getattr(self, group)
        if not arrs:
            return np.zeros(0)
        return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrs.values()])

    def with_flat(self, group: str, flat: np.ndarray) -> "GradientSet":
        """Copy of this set with one group's gradients replaced from a flat vector."""
        arrs = getattr(self, group)
        new = {}
        pos = 0
        for name, a in arrs.items():
            size = a.size
            new[name] = flat[pos: pos + size].reshape(a.shape).copy()
            pos += size
        if pos != flat.size:
            raise ValueError(f"flat vector of size {flat.size} does not cover group {group!r} ({pos})")
        parts = {"histology": dict(self.histology), "molecular": dict(self.molecular),
                 "shared": dict(self.shared)}
        parts[group] = new
        return GradientSet(**parts)


@dataclass
class ModulationRecord:
    modulated_group: str       # "histology" or "molecular"
    reference_embedded: np.ndarray
    flat_before: np.ndarray
    flat_after: np.ndarray


def majority_vote(flags) -> int:
    """1 when positives are at least as many as negatives."""
    flags = list(flags)
    positives = sum(1 for f in flags if f)
    return int(positives * 2 >= len(flags))


def cmg_modulate(
    grads: GradientSet,
    nmp_majority: int,
    guide: bool = True,
    apply_rescale: bool = True,
):
    """Project one group's flat gradient orthogonal to the other's.

    A lesion-positive batch majority modulates the molecular group
    (histology is the reliable signal there); a negative majority
    modulates the histology group. With ``guide`` off the molecular
    group is always the one modulated. Returns the new GradientSet and a
    record of what happened.
    """
    if guide:
        group = "molecular" if nmp_majority == 1 else "histology"
    else:
        group = "molecular"
    other = "histology" if group == "molecular" else "molecular"
    vec = grads.flat(group)
    ref = embed_reference(grads.flat(other), vec.size)
    projected = project_perp(vec, ref)
    if apply_rescale:
        projected = rescale(projected, float(np.linalg.norm(vec)))
    record = ModulationRecord(
        modulated_group=group,
        reference_embedded=ref,
        flat_before=vec,
        flat_after=projected,
    )
    return grads.with_flat(group, projected), record
