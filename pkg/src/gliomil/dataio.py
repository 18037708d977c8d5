"""On-disk formats: patch-bag datasets and model checkpoints.

A dataset is a text manifest (`dataset.manifest`) plus a raw blob
(`dataset.blob`) of little-endian float32 features, one high- then one
low-magnification matrix per case, row-major. A checkpoint is the same
idea at float64: a manifest of named parameter shapes and byte offsets
(`checkpoint.manifest`) plus the packed values (`checkpoint.blob`).
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .synth import CooccurrenceMatrix, MarkerTuple, PatchBag, align_patch_count, derive_glioma_class

DATASET_MANIFEST = "dataset.manifest"
DATASET_BLOB = "dataset.blob"
CHECKPOINT_MANIFEST = "checkpoint.manifest"
CHECKPOINT_BLOB = "checkpoint.blob"

_DATASET_MAGIC = "bagset v1"
_CHECKPOINT_MAGIC = "paramset v1"


class DatasetError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# datasets

def write_dataset(out_dir, bags) -> None:
    """Write bags to ``out_dir``/dataset.{manifest,blob}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    chunks = []
    offset = 0
    for bag in bags:
        n, k = bag.feats_high.shape
        if bag.feats_low.shape != (n, k):
            raise DatasetError(
                f"case {bag.case_id}: magnification shapes differ: "
                f"{bag.feats_high.shape} vs {bag.feats_low.shape}"
            )
        high = np.ascontiguousarray(bag.feats_high, dtype="<f4")
        low = np.ascontiguousarray(bag.feats_low, dtype="<f4")
        off_high = offset
        off_low = off_high + high.nbytes
        offset = off_low + low.nbytes
        m = bag.markers
        records.append(
            f"{bag.case_id} {n} {k} {m.idh_mut} {m.codel_1p19q} {m.cdkn_homdel} "
            f"{m.nmp} {bag.glioma_class} {off_high} {off_low}"
        )
        chunks.append(high.tobytes())
        chunks.append(low.tobytes())
    manifest = "\n".join([f"{_DATASET_MAGIC} cases={len(records)}"] + records) + "\n"
    (out_dir / DATASET_MANIFEST).write_text(manifest)
    (out_dir / DATASET_BLOB).write_bytes(b"".join(chunks))


def _parse_int(token: str, what: str, case_id: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DatasetError(f"case {case_id}: bad {what} field {token!r}") from None


def read_dataset(data_dir, n_patches: int | None = None) -> list:
    """Read bags back; optionally force every bag to ``n_patches`` rows.

    External bags whose stored patch count differs from ``n_patches`` are
    aligned by cycling (too few) or bucket-averaging (too many).
    """
    data_dir = Path(data_dir)
    manifest_path = data_dir / DATASET_MANIFEST
    blob_path = data_dir / DATASET_BLOB
    if not manifest_path.exists():
        raise DatasetError(f"missing {manifest_path}")
    if not blob_path.exists():
        raise DatasetError(f"missing {blob_path}")
    lines = manifest_path.read_text().splitlines()
    if not lines or not lines[0].startswith(_DATASET_MAGIC):
        raise DatasetError(f"{manifest_path}: not a {_DATASET_MAGIC} manifest")
    header = lines[0].split()
    try:
        declared = int(header[-1].split("=", 1)[1])
    except (IndexError, ValueError):
        raise DatasetError(f"{manifest_path}: malformed header {lines[0]!r}") from None
    records = [ln for ln in lines[1:] if ln.strip()]
    if len(records) != declared:
        raise DatasetError(
            f"{manifest_path}: header declares {declared} cases, found {len(records)} records"
        )
    blob = blob_path.read_bytes()

    bags = []
    for record in records:
        fields = record.split()
        if len(fields) != 10:
            raise DatasetError(f"malformed record (want 10 fields): {record!r}")
        case_id = fields[0]
        n, k = (_parse_int(fields[i], "size", case_id) for i in (1, 2))
        labels = [_parse_int(fields[i], "label", case_id) for i in (3, 4, 5, 6)]
        if any(v not in (0, 1) for v in labels):
            raise DatasetError(f"case {case_id}: labels must be 0/1, got {labels}")
        glioma = _parse_int(fields[7], "class", case_id)
        off_high, off_low = (_parse_int(fields[i], "offset", case_id) for i in (8, 9))
        nbytes = n * k * 4
        if off_low + nbytes > len(blob):
            raise DatasetError(
                f"case {case_id}: truncated blob "
                f"(need bytes up to {off_low + nbytes}, blob has {len(blob)})"
            )
        high = np.frombuffer(blob, dtype="<f4", count=n * k, offset=off_high)
        low = np.frombuffer(blob, dtype="<f4", count=n * k, offset=off_low)
        high = high.astype(np.float64).reshape(n, k)
        low = low.astype(np.float64).reshape(n, k)
        if not (np.isfinite(high).all() and np.isfinite(low).all()):
            raise DatasetError(f"case {case_id}: non-finite feature values")
        markers = MarkerTuple(*labels)
        if glioma != derive_glioma_class(markers):
            raise DatasetError(
                f"case {case_id}: stored class {glioma} contradicts markers {labels}"
            )
        if n_patches is not None and n != n_patches:
            high = align_patch_count(high, n_patches)
            low = align_patch_count(low, n_patches)
        bags.append(
            PatchBag(case_id=case_id, feats_high=high, feats_low=low,
                     markers=markers, glioma_class=glioma)
        )
    return bags


# ---------------------------------------------------------------------------
# checkpoints

def write_checkpoint(out_dir, params, feat_dim: int, cooc: CooccurrenceMatrix,
                     train_cfg: TrainConfig) -> None:
    """Write named float64 parameters plus the run metadata needed to eval."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [_CHECKPOINT_MAGIC, f"meta feat_dim {feat_dim}"]
    a_flat = ",".join(repr(float(v)) for v in np.asarray(cooc.a).ravel())
    counts_flat = ",".join(str(int(v)) for v in np.asarray(cooc.counts).ravel())
    lines.append(f"meta cooccurrence {a_flat}")
    lines.append(f"meta cooccurrence_counts {counts_flat}")
    lines.append(f"meta cooccurrence_cases {cooc.n_cases}")
    for f in dataclasses.fields(train_cfg):
        value = getattr(train_cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"config {f.name} {value}")
    chunks = []
    offset = 0
    for name, tensor in params.items():
        # note: ascontiguousarray would promote 0-d scalars to 1-d
        arr = np.asarray(tensor.data, dtype="<f8", order="C")
        shape = "(" + ",".join(str(d) for d in arr.shape) + ")"
        lines.append(f"param {name} {shape} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    (out_dir / CHECKPOINT_MANIFEST).write_text("\n".join(lines) + "\n")
    (out_dir / CHECKPOINT_BLOB).write_bytes(b"".join(chunks))


def read_checkpoint(ckpt_dir):
    """Return (params: dict[str, ndarray], feat_dim, CooccurrenceMatrix, TrainConfig)."""
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / CHECKPOINT_MANIFEST
    blob_path = ckpt_dir / CHECKPOINT_BLOB
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"no checkpoint under {ckpt_dir}")
    lines = manifest_path.read_text().splitlines()
    if not lines or lines[0] != _CHECKPOINT_MAGIC:
        raise CheckpointError(f"{manifest_path}: not a {_CHECKPOINT_MAGIC} manifest")
    blob = blob_path.read_bytes()

    meta = {}
    config_raw = {}
    params = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = value
        elif kind == "config":
            key, _, value = rest.partition(" ")
            config_raw[key] = value
        elif kind == "param":
            name, shape_s, offset_s = rest.rsplit(" ", 2)
            dims = tuple(int(d) for d in shape_s.strip("()").split(",") if d)
            offset = int(offset_s)
            count = int(np.prod(dims, dtype=np.int64)) if dims else 1
            if offset + count * 8 > len(blob):
                raise CheckpointError(f"param {name}: truncated blob")
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            params[name] = arr.astype(np.float64).reshape(dims)
        else:
            raise CheckpointError(f"{manifest_path}: unknown line kind {kind!r}")

    try:
        feat_dim = int(meta["feat_dim"])
        a = np.array([float(v) for v in meta["cooccurrence"].split(",")]).reshape(3, 3)
        counts = np.array(
            [int(v) for v in meta["cooccurrence_counts"].split(",")], dtype=np.int64
        ).reshape(3, 3)
        n_cases = int(meta["cooccurrence_cases"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{manifest_path}: bad metadata: {exc}") from None
    cooc = CooccurrenceMatrix(a=a, counts=counts, n_cases=n_cases)

    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for key, value in config_raw.items():
        if key not in fields:
            raise CheckpointError(f"{manifest_path}: unknown config key {key!r}")
        ftype = fields[key].type
        if isinstance(ftype, str):
            ftype = {"int": int, "float": float, "tuple": tuple, "str": str}[ftype]
        if ftype is tuple:
            kwargs[key] = tuple(s for s in value.split(",") if s)
        else:
            kwargs[key] = ftype(value)
    return params, feat_dim, cooc, TrainConfig(**kwargs)
