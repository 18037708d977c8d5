"""Training loop: multi-term loss, modulated optimization, evaluation.

One step forwards a minibatch of bags, averages seven loss terms,
backpropagates, then (unless ablated) modulates one parameter group's
gradient against the other according to the batch's majority histology
finding, and finally applies an AdamW update.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ABLATION_FLAGS, TrainConfig
from .interaction import (
    CurriculumSchedule,
    cmg_modulate,
    curriculum_m,
    dcc_overlap,
    dcc_surrogate,
    majority_vote,
)
from .metrics import CasePrediction, MetricReport, compute_metrics
from .model import Model, ModelConfig
from .optim import AdamW
from .synth import CooccurrenceMatrix, estimate_cooccurrence

LOSS_TERMS = ("glioma", "idh", "codel", "cdkn", "nmp", "disent", "lc", "dcc")


class LossError(RuntimeError):
    """A loss term stopped being finite; training must not continue."""


@dataclass
class EpochRow:
    epoch: int
    losses: dict           # term name -> batch-averaged value, plus "total"
    dcc_overlap: float     # mean top-M agreement across training bags
    accuracies: dict       # task name -> held-out accuracy


@dataclass
class TrainResult:
    model: Model
    cooc: CooccurrenceMatrix
    rows: list
    report: MetricReport
    train_ids: list
    val_ids: list
    confidences: list      # (case_id, patch_index, conf_wt, conf_nmp) tuples
    seconds: float


def split_dataset(bags, val_fraction: float, seed: int):
    """Stratified case split; every class contributes ~val_fraction to eval."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))
    by_class: dict = {}
    for i, bag in enumerate(bags):
        by_class.setdefault(bag.glioma_class, []).append(i)
    train_idx, val_idx = [], []
    for cls in sorted(by_class):
        idxs = np.array(by_class[cls])
        rng.shuffle(idxs)
        n_val = int(round(val_fraction * idxs.size))
        n_val = min(n_val, idxs.size - 1) if idxs.size > 1 else 0
        val_idx.extend(idxs[:n_val].tolist())
        train_idx.extend(idxs[n_val:].tolist())
    if not val_idx and len(train_idx) > 1:
        val_idx.append(train_idx.pop())
    train_idx.sort()
    val_idx.sort()
    return [bags[i] for i in train_idx], [bags[i] for i in val_idx]


def batch_loss(forwards, bags, cfg: TrainConfig, top_m: int):
    """Weighted batch-mean loss and the per-term values that went into it."""
    n = len(bags)
    sums = {}

    def tally(name, tensor):
        sums[name] = tensor if name not in sums else ad.add(sums[name], tensor)

    for fwd, bag in zip(forwards, bags):
        m = bag.markers
        tally("glioma", ad.softmax_cross_entropy(fwd.glioma_logits, bag.glioma_class))
        tally("idh", ad.softmax_cross_entropy(fwd.mol.logits[0], m.idh_mut))
        tally("codel", ad.softmax_cross_entropy(fwd.mol.logits[1], m.codel_1p19q))
        tally("cdkn", ad.softmax_cross_entropy(fwd.mol.logits[2], m.cdkn_homdel))
        tally("nmp", ad.softmax_cross_entropy(fwd.his.logits, m.nmp))
        tally("disent", fwd.disent_loss)
        tally("lc", fwd.corr_loss)
        m_eff = min(top_m, fwd.conf_wt.values.size)
        tally("dcc", dcc_surrogate(fwd.conf_wt, fwd.conf_nmp, m_eff, cfg.dcc_temperature))

    means = {name: ad.scale(t, 1.0 / n) for name, t in sums.items()}
    values = {}
    for name, tensor in means.items():
        value = float(tensor.data)
        if not np.isfinite(value):
            raise LossError(f"loss term {name!r} is not finite ({value})")
        values[name] = value

    weights = {
        "glioma": cfg.w_glioma,
        "idh": cfg.w_molecular,
        "codel": cfg.w_molecular,
        "cdkn": cfg.w_molecular,
        "nmp": cfg.w_histology,
        "disent": 0.0 if "no_disent" in cfg.ablations else cfg.w_disent,
        "lc": 0.0 if "no_lc" in cfg.ablations else cfg.w_lc,
        "dcc": 0.0 if "no_dcc" in cfg.ablations else cfg.w_dcc,
    }
    total = None
    for name in LOSS_TERMS:
        if weights[name] == 0.0:
            continue
        term = ad.scale(means[name], weights[name])
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise LossError("every loss term is disabled; nothing to optimize")
    values["total"] = float(total.data)
    if not np.isfinite(values["total"]):
        raise LossError("loss term 'total' is not finite")
    return total, values


def evaluate(model: Model, bags, adjacency, ablations=()):
    """Forward every bag without recording; returns predictions + confidences."""
    predictions = []
    confidences = []
    with ad.no_grad():
        for bag in bags:
            fwd = model.forward(bag, adjacency, ablations)
            marker_probs = np.array([
                ad.softmax(fwd.mol.logits[0], axis=1).data.ravel()[1],
                ad.softmax(fwd.mol.logits[1], axis=1).data.ravel()[1],
                ad.softmax(fwd.mol.logits[2], axis=1).data.ravel()[1],
                ad.softmax(fwd.his.logits, axis=1).data.ravel()[1],
            ])
            glioma_probs = ad.softmax(fwd.glioma_logits, axis=1).data.ravel()
            predictions.append(
                CasePrediction(
                    case_id=bag.case_id,
                    marker_truth=bag.markers.as_array(),
                    glioma_truth=bag.glioma_class,
                    marker_probs=marker_probs,
                    glioma_probs=glioma_probs.copy(),
                )
            )
            for i in range(fwd.conf_wt.values.size):
                confidences.append(
                    (bag.case_id, i, float(fwd.conf_wt.values[i]), float(fwd.conf_nmp.values[i]))
                )
    return predictions, confidences


def train_epoch(model, train_bags, adjacency, cfg: TrainConfig, optimizer, epoch,
                order_rng, modulation_hook=None):
    """One pass over the training bags; returns (term means, mean overlap)."""
    schedule = CurriculumSchedule(cfg.dcc_top_m, cfg.dcc_decay, cfg.dcc_decay_every)
    order = order_rng.permutation(len(train_bags))
    term_sums = {name: 0.0 for name in LOSS_TERMS + ("total",)}
    overlap_sum = 0.0
    n_batches = 0
    for start in range(0, len(order), cfg.batch_size):
        batch = [train_bags[i] for i in order[start: start + cfg.batch_size]]
        model.zero_grads()
        forwards = [model.forward(bag, adjacency, cfg.ablations) for bag in batch]
        top_m = curriculum_m(epoch, schedule, max(b.feats_high.shape[0] for b in batch))
        loss, values = batch_loss(forwards, batch, cfg, top_m)
        ad.backward(loss)
        grads = model.gradient_set()
        if "no_cmg" not in cfg.ablations:
            vote = majority_vote([bag.markers.nmp for bag in batch])
            grads, record = cmg_modulate(
                grads,
                vote,
                guide="no_guide" not in cfg.ablations,
                apply_rescale="no_rescale" not in cfg.ablations,
            )
            if modulation_hook is not None:
                modulation_hook(epoch=epoch, step=n_batches, record=record, grads=grads)
        optimizer.step(model.apply_gradient_set(grads))
        for fwd, bag in zip(forwards, batch):
            m_eff = min(top_m, fwd.conf_wt.values.size)
            overlap_sum += dcc_overlap(fwd.conf_wt, fwd.conf_nmp, m_eff)
        for name, v in values.items():
            term_sums[name] += v
        n_batches += 1
    term_means = {name: v / n_batches for name, v in term_sums.items()}
    mean_overlap = overlap_sum / len(order)
    return term_means, mean_overlap


def train_model(bags, cfg: TrainConfig, modulation_hook=None, log=None) -> TrainResult:
    t0 = time.time()
    train_bags, val_bags = split_dataset(bags, cfg.val_fraction, cfg.seed)
    marker_rows = np.array(
        [[b.markers.idh_mut, b.markers.codel_1p19q, b.markers.cdkn_homdel] for b in train_bags]
    )
    cooc = estimate_cooccurrence(marker_rows)
    feat_dim = bags[0].feats_high.shape[1]
    model = Model(
        ModelConfig(feat_dim=feat_dim, graph_alpha=cfg.graph_alpha),
        np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(11,))),
    )
    optimizer = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(12,)))
    if log and "no_cmg" in cfg.ablations:
        log("gradient modulation: skipped (no_cmg)")
    rows = []
    for epoch in range(cfg.epochs):
        term_means, overlap = train_epoch(
            model, train_bags, cooc.a, cfg, optimizer, epoch, order_rng, modulation_hook
        )
        val_preds, _ = evaluate(model, val_bags, cooc.a, cfg.ablations)
        report = compute_metrics(val_preds)
        accuracies = {
            "idh": report.idh_mut.accuracy,
            "codel": report.codel_1p19q.accuracy,
            "cdkn": report.cdkn_homdel.accuracy,
            "nmp": report.nmp.accuracy,
            "glioma": report.glioma.accuracy,
        }
        rows.append(EpochRow(epoch=epoch, losses=term_means,
                             dcc_overlap=overlap, accuracies=accuracies))
        if log:
            log(
                f"epoch {epoch:3d}  loss {term_means['total']:.4f}  "
                f"overlap {overlap:.3f}  val glioma acc {accuracies['glioma']:.3f}"
            )
    val_preds, _ = evaluate(model, val_bags, cooc.a, cfg.ablations)
    report = compute_metrics(val_preds)
    _, confidences = evaluate(model, bags, cooc.a, cfg.ablations)
    return TrainResult(
        model=model,
        cooc=cooc,
        rows=rows,
        report=report,
        train_ids=[b.case_id for b in train_bags],
        val_ids=[b.case_id for b in val_bags],
        confidences=confidences,
        seconds=time.time() - t0,
    )


def run_ablation(bags, cfg: TrainConfig, flags=ABLATION_FLAGS, log=None):
    """Train the full model plus one single-flag variant per flag.

    Every variant shares the base config's seed (and therefore the same
    split and init stream). Returns [(variant_name, TrainResult), ...].
    """
    results = []
    full_cfg = cfg
    if log:
        log("variant: full")
    results.append(("full", train_model(bags, full_cfg)))
    for flag in flags:
        if log:
            log(f"variant: {flag}")
        variant_cfg = TrainConfig(**{
            **{f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
            "ablations": tuple(dict.fromkeys(cfg.ablations + (flag,))),
        })
        results.append((flag, train_model(bags, variant_cfg)))
    return results


# ---------------------------------------------------------------------------
# run artifacts

EPOCH_COLUMNS = (
    ["epoch", "loss_total"]
    + [f"loss_{name}" for name in LOSS_TERMS]
    + ["dcc_overlap", "acc_idh", "acc_codel", "acc_cdkn", "acc_nmp", "acc_glioma"]
)


def epochs_csv(rows) -> str:
    lines = [",".join(EPOCH_COLUMNS)]
    for row in rows:
        cells = [str(row.epoch), f"{row.losses['total']:.6f}"]
        cells += [f"{row.losses[name]:.6f}" for name in LOSS_TERMS]
        cells.append(f"{row.dcc_overlap:.6f}")
        cells += [f"{row.accuracies[k]:.6f}" for k in ("idh", "codel", "cdkn", "nmp", "glioma")]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def confidences_csv(confidences) -> str:
    lines = ["case_id,patch_index,conf_wt,conf_nmp"]
    for case_id, idx, wt, nmp in confidences:
        lines.append(f"{case_id},{idx},{wt:.6g},{nmp:.6g}")
    return "\n".join(lines) + "\n"


def ablation_csv(results) -> str:
    header = "variant,acc_idh,acc_codel,acc_cdkn,acc_nmp,acc_glioma,f1_glioma,auc_glioma"
    lines = [header]
    for name, result in results:
        r = result.report
        auc = "NA" if r.glioma.auc is None else f"{r.glioma.auc:.6f}"
        lines.append(
            f"{name},{r.idh_mut.accuracy:.6f},{r.codel_1p19q.accuracy:.6f},"
            f"{r.cdkn_homdel.accuracy:.6f},{r.nmp.accuracy:.6f},"
            f"{r.glioma.accuracy:.6f},{r.glioma.f1:.6f},{auc}"
        )
    return "\n".join(lines) + "\n"
