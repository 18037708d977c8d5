"""Command-line front end.

Subcommands: ``gen`` (synthesize a dataset), ``train``, ``eval``,
``gradcheck`` (finite-difference verification), ``ablate`` (full model plus
one variant per ablation flag), and ``report`` (render a run directory).
Exit codes: 0 success, 1 internal/check failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (
    ABLATION_FLAGS,
    ConfigError,
    GenConfig,
    TrainConfig,
    load_gen_config,
    load_train_config,
)
from .dataio import (
    CheckpointError,
    DatasetError,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)
from .metrics import compute_metrics, report_text
from .model import Model, ModelConfig
from .synth import CLASS_NAMES, estimate_cooccurrence, generate_dataset
from .trainer import (
    LossError,
    ablation_csv,
    confidences_csv,
    epochs_csv,
    evaluate,
    run_ablation,
    split_dataset,
    train_model,
)
from .verify import format_lines, run_suite

REPORT_FILE = "report.txt"
EPOCHS_FILE = "epochs.csv"
CONFIDENCES_FILE = "confidences.csv"
ABLATION_FILE = "ablation.csv"

_INPUT_ERRORS = (
    ConfigError,
    DatasetError,
    CheckpointError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
)


def _cmd_gen(args) -> int:
    cfg = load_gen_config(args.config) if args.config else GenConfig()
    bags = generate_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out, bags)
    marker_rows = np.array(
        [[b.markers.idh_mut, b.markers.codel_1p19q, b.markers.cdkn_homdel] for b in bags]
    )
    cooc = estimate_cooccurrence(marker_rows)
    print(f"wrote {len(bags)} cases to {out}")
    print("marker co-occurrence:")
    for row in cooc.a:
        print("  " + "  ".join(f"{v:.4f}" for v in row))
    counts = np.bincount([b.glioma_class for b in bags], minlength=len(CLASS_NAMES))
    print("class histogram:")
    for cls, (name, count) in enumerate(zip(CLASS_NAMES, counts)):
        print(f"  {cls} {name}: {count}")
    return 0


def _write_run(out: Path, result, cfg: TrainConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / EPOCHS_FILE).write_text(epochs_csv(result.rows))
    (out / REPORT_FILE).write_text(report_text(result.report, title="held-out metrics"))
    (out / CONFIDENCES_FILE).write_text(confidences_csv(result.confidences))
    write_checkpoint(out, result.model.params,
                     result.model.cfg.feat_dim, result.cooc, cfg)


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    if args.ablate:
        for flag in args.ablate:
            if flag not in ABLATION_FLAGS:
                raise ConfigError(f"unknown ablation flag {flag!r}")
        cfg = TrainConfig(**{
            **{f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
            "ablations": tuple(dict.fromkeys(cfg.ablations + tuple(args.ablate))),
        })
    bags = read_dataset(Path(args.data))
    result = train_model(bags, cfg, log=print)
    out = Path(args.out)
    _write_run(out, result, cfg)
    # timing goes to stderr so stdout stays byte-identical across reruns
    print(f"training time {result.seconds:.1f}s", file=sys.stderr)
    print(f"trained {cfg.epochs} epochs "
          f"({len(result.train_ids)} train / {len(result.val_ids)} eval cases)")
    print((out / REPORT_FILE).read_text())
    return 0


def _cmd_eval(args) -> int:
    params, feat_dim, cooc, cfg = read_checkpoint(Path(args.checkpoint))
    bags = read_dataset(Path(args.data))
    model = Model(ModelConfig(feat_dim=feat_dim, graph_alpha=cfg.graph_alpha),
                  np.random.default_rng(0))
    model.load_state(params)
    if args.split != "all":
        train_bags, val_bags = split_dataset(bags, cfg.val_fraction, cfg.seed)
        bags = train_bags if args.split == "train" else val_bags
    predictions, _ = evaluate(model, bags, cooc.a, cfg.ablations)
    report = compute_metrics(predictions)
    print(report_text(report, title=f"metrics on {args.split} cases ({len(bags)})"))
    return 0


def _cmd_gradcheck(args) -> int:
    ok, lines, secs = run_suite(trials=args.trials, model_seeds=args.model_seeds,
                                seed=args.seed)
    print(format_lines(lines))
    print(f"suite time {secs:.1f}s", file=sys.stderr)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_ablate(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    bags = read_dataset(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation(bags, cfg, log=print)
    for name, result in results:
        variant_cfg = cfg if name == "full" else TrainConfig(**{
            **{f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
            "ablations": tuple(dict.fromkeys(cfg.ablations + (name,))),
        })
        _write_run(out / name, result, variant_cfg)
    (out / ABLATION_FILE).write_text(ablation_csv(results))
    print((out / ABLATION_FILE).read_text())
    return 0


def _cmd_report(args) -> int:
    run = Path(args.run)
    ablation = run / ABLATION_FILE
    if ablation.exists():
        rows = [line.split(",") for line in ablation.read_text().strip().splitlines()]
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        for row in rows:
            print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
        return 0
    epochs = run / EPOCHS_FILE
    if not epochs.exists():
        raise FileNotFoundError(f"no {ABLATION_FILE} or {EPOCHS_FILE} in {run}")
    rows = [line.split(",") for line in epochs.read_text().strip().splitlines()]
    header = rows[0]
    keep = [header.index(c) for c in
            ("epoch", "loss_total", "loss_dcc", "dcc_overlap", "acc_idh", "acc_glioma")]
    for row in rows:
        print("  ".join(f"{row[i]:>12s}" for i in keep))
    report = run / REPORT_FILE
    if report.exists():
        print()
        print(report.read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gliomil",
        description="Multi-task MIL glioma typing on synthetic patch bags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize a dataset")
    p.add_argument("--config", help="generator config file (key = value lines)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="training config file")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--ablate", action="append", default=[],
                   help="ablation flag (repeatable): " + ", ".join(ABLATION_FLAGS))
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True, help="run directory with checkpoint files")
    p.add_argument("--split", choices=("val", "train", "all"), default="val",
                   help="which cases to score (default: the held-out split)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=100, help="trials per operation")
    p.add_argument("--model-seeds", type=int, default=3, help="full-model check seeds")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="train the full model plus every single-flag variant")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="training config file")
    p.add_argument("--out", required=True, help="output directory (one subdir per variant)")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="render a run or ablation directory as a table")
    p.add_argument("--run", required=True, help="directory written by train or ablate")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
