"""Synthetic multi-magnification patch bags with planted marker signals.

Each case carries three molecular markers (IDH mutation, 1p/19q
co-deletion, CDKN2A/B homozygous deletion), one histology flag
(necrosis/microvascular proliferation, "NMP"), and the tumour class the
four jointly determine. Bags are patch feature matrices at two
magnifications; a positive label plants a fixed unit direction on a
random subset of patches -- molecular signals at high magnification, the
histology signal at low magnification.

Every case draws from its own RNG stream keyed by (seed, case_id), so a
dataset is reproducible case-by-case regardless of generation order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .config import GenConfig

GRAPH_MARKERS = ("idh_mut", "codel_1p19q", "cdkn_homdel")
CLASS_NAMES = (
    "gbm_grade4",          # IDH wildtype
    "astro_high_grade",    # IDH mutant, non-codeleted, CDKN loss or NMP
    "astro_low_grade",     # IDH mutant, non-codeleted, neither
    "oligodendroglioma",   # IDH mutant and 1p/19q co-deleted
)


@dataclass(frozen=True)
class MarkerTuple:
    idh_mut: int
    codel_1p19q: int
    cdkn_homdel: int
    nmp: int

    def as_array(self) -> np.ndarray:
        return np.array([self.idh_mut, self.codel_1p19q, self.cdkn_homdel, self.nmp], dtype=np.int64)


@dataclass
class PatchBag:
    case_id: str
    feats_high: np.ndarray  # (N, K) float64
    feats_low: np.ndarray   # (N, K) float64
    markers: MarkerTuple
    glioma_class: int


@dataclass
class CooccurrenceMatrix:
    """Symmetrized conditional co-positivity of the three molecular markers."""

    a: np.ndarray        # (3, 3) float64
    counts: np.ndarray   # (3, 3) int64 joint-positive counts (diag = marginals)
    n_cases: int


def derive_glioma_class(markers: MarkerTuple) -> int:
    """Tumour class from markers; the first matching rule wins.

    wildtype IDH -> 0; co-deletion -> 3; CDKN loss or NMP -> 1; else 2.
    """
    if markers.idh_mut == 0:
        return 0
    if markers.codel_1p19q == 1:
        return 3
    if markers.cdkn_homdel == 1 or markers.nmp == 1:
        return 1
    return 2


def rng_for_case(seed: int, case_id: str) -> np.random.Generator:
    """Independent, platform-stable RNG stream for one case."""
    digest = hashlib.sha256(f"{seed}|{case_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def sample_case(rng: np.random.Generator, cfg: GenConfig) -> MarkerTuple:
    """Draw one marker tuple. Co-deletion only ever occurs with IDH mutation."""
    idh = int(rng.random() < cfg.p_idh_mut)
    codel = int(idh == 1 and rng.random() < cfg.p_codel_given_mut)
    cdkn = int(rng.random() < cfg.p_cdkn)
    p_nmp = cfg.nmp_given_idhmut if idh == 1 else cfg.nmp_given_idhwt
    nmp = int(rng.random() < p_nmp)
    return MarkerTuple(idh, codel, cdkn, nmp)


def signal_directions(feat_dim: int) -> dict:
    """Fixed unit directions for the four planted signals.

    Derived from a constant-seeded Gaussian draw, orthonormalized when the
    feature space is wide enough, so the same feat_dim always produces the
    same geometry.
    """
    rng = np.random.default_rng(718281828)
    raw = rng.normal(size=(4, feat_dim))
    if feat_dim >= 4:
        q, _ = np.linalg.qr(raw.T)
        dirs = q.T[:4]
    else:
        dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return {
        "idh_mut": dirs[0],
        "codel_1p19q": dirs[1],
        "cdkn_homdel": dirs[2],
        "nmp": dirs[3],
    }


def generate_bag(
    markers: MarkerTuple,
    cfg: GenConfig,
    rng: np.random.Generator,
    case_id: str = "",
) -> PatchBag:
    """Standard-normal background plus per-label evidence patches.

    Feature values are rounded through float32 so bags survive the
    float32 on-disk format bit-for-bit.
    """
    n, k = cfg.n_patches, cfg.feat_dim
    high = rng.standard_normal((n, k))
    low = rng.standard_normal((n, k))
    dirs = signal_directions(k)
    n_evidence = min(n, int(round(cfg.evidence_fraction * n)))
    label_values = {
        "idh_mut": markers.idh_mut,
        "codel_1p19q": markers.codel_1p19q,
        "cdkn_homdel": markers.cdkn_homdel,
        "nmp": markers.nmp,
    }
    for name, value in label_values.items():
        rows = rng.choice(n, size=n_evidence, replace=False)
        if value == 1 and n_evidence > 0:
            target = low if name == "nmp" else high
            target[rows] += cfg.signal_strength * dirs[name]
    high = high.astype(np.float32).astype(np.float64)
    low = low.astype(np.float32).astype(np.float64)
    return PatchBag(
        case_id=case_id,
        feats_high=high,
        feats_low=low,
        markers=markers,
        glioma_class=derive_glioma_class(markers),
    )


def generate_dataset(cfg: GenConfig) -> list:
    bags = []
    for i in range(cfg.n_cases):
        case_id = f"case{i:04d}"
        rng = rng_for_case(cfg.seed, case_id)
        markers = sample_case(rng, cfg)
        bags.append(generate_bag(markers, cfg, rng, case_id=case_id))
    return bags


def align_patch_count(feats: np.ndarray, n: int) -> np.ndarray:
    """Force a feature matrix to exactly ``n`` rows.

    Fewer rows cycle from the top; more rows are averaged over ``n``
    contiguous, near-equal buckets (boundary i sits at ceil(i * M / n)).
    """
    if n < 1:
        raise ValueError(f"target patch count must be >= 1, got {n}")
    m = feats.shape[0]
    if m == n:
        return feats
    if m < n:
        return feats[np.arange(n) % m]
    bounds = [-(-i * m // n) for i in range(n + 1)]  # ceil without floats
    return np.stack([feats[bounds[i]:bounds[i + 1]].mean(axis=0) for i in range(n)])


def estimate_cooccurrence(marker_rows: np.ndarray) -> CooccurrenceMatrix:
    """Co-occurrence of the three molecular markers over a label table.

    ``marker_rows`` is (n_cases, 3) of 0/1. Entry (i, j) is the average of
    the two conditional positive rates P(i=1 | j=1) and P(j=1 | i=1); an
    undefined conditional (marker never positive) counts as 0.
    """
    rows = np.asarray(marker_rows, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) marker table, got {rows.shape}")
    counts = rows.T @ rows
    marginals = np.diag(counts).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(marginals[None, :] > 0, counts / marginals[None, :], 0.0)
    a = 0.5 * (cond + cond.T)
    return CooccurrenceMatrix(a=a, counts=counts, n_cases=rows.shape[0])
