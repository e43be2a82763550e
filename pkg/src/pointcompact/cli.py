"""Command-line interface.

Subcommands: `synth` (generate labeled shape datasets), `pretrain`,
`classify`, `complete`, `count` (parameter/FLOP report), and `ablate`.
Configs are `key = value` text files (or the builtin names `reference`,
`toy`, `tiny`), with `--set key=value` overrides. Errors exit 1 with a
one-line reason on stderr; usage problems exit 2.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .ablation import VARIANTS, run_ablation
from .checkpoint import restore_pretrain, save_checkpoint
from .config import ModelConfig, load_config, reference_config, save_config, tiny_config, toy_config
from .costs import TARGETS, count_costs, transformer_baseline_report
from .downstream import CompletionRequest, complete, finetune_classify
from .geometry import PointCloud
from .io import FORMATS, parse_pointcloud, write_pointcloud
from .pretrain import pretrain_run
from .synth import parse_synth_spec, synth_dataset

_BUILTIN_CONFIGS = {"reference": reference_config, "ref": reference_config,
                    "toy": toy_config, "tiny": tiny_config}


def _resolve_config(spec: str, overrides) -> ModelConfig:
    if spec in _BUILTIN_CONFIGS:
        cfg = _BUILTIN_CONFIGS[spec]()
        if overrides:
            from .config import config_from_text, config_to_text
            cfg = config_from_text(config_to_text(cfg), overrides)
        return cfg
    return load_config(spec, overrides)


def _cloud_files(directory: str) -> list[str]:
    names = [n for n in sorted(os.listdir(directory))
             if os.path.splitext(n)[1].lstrip(".").lower() in FORMATS]
    if not names:
        raise FileNotFoundError(f"no point cloud files ({'/'.join(FORMATS)}) in {directory}")
    return names


def _read_clouds(directory: str) -> list[PointCloud]:
    return [parse_pointcloud(os.path.join(directory, n)) for n in _cloud_files(directory)]


def _read_labeled(directory: str) -> list[tuple[PointCloud, str]]:
    labels_path = os.path.join(directory, "labels.csv")
    if not os.path.exists(labels_path):
        raise FileNotFoundError(f"{directory} has no labels.csv (needed for classification)")
    labels = {}
    with open(labels_path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "filename":
                continue
            labels[row[0]] = row[1]
    out = []
    for name in _cloud_files(directory):
        if name not in labels:
            raise ValueError(f"{name} missing from labels.csv")
        out.append((parse_pointcloud(os.path.join(directory, name)), labels[name]))
    return out


# -- subcommands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = parse_synth_spec(args.spec)
    data = synth_dataset(spec["classes"], spec["per_class"], spec["n_points"],
                         spec["noise"], spec["seed"])
    os.makedirs(args.out, exist_ok=True)
    counters: dict = {}
    rows = []
    for cloud, label in data:
        i = counters.get(label, 0)
        counters[label] = i + 1
        name = f"{label}_{i:04d}.xyz"
        write_pointcloud(os.path.join(args.out, name), cloud)
        rows.append((name, label))
    with open(os.path.join(args.out, "labels.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "label"])
        w.writerows(rows)
    print(f"wrote {len(rows)} clouds ({', '.join(spec['classes'])}) to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args.config, args.set)
    clouds = _read_clouds(args.data)
    steps = args.steps if args.steps is not None else cfg.optimizer.total_steps
    state = pretrain_run(clouds, cfg, steps=steps, batch_size=args.batch_size,
                         decoder_kind=args.decoder, log_path=args.log,
                         progress_every=args.progress_every)
    save_checkpoint(args.out, state)
    print(f"pretrained {args.decoder} decoder for {steps} steps on {len(clouds)} clouds; "
          f"final loss {state.loss_history[-1]:.6f}; checkpoint: {args.out}")
    return 0


def cmd_classify(args) -> int:
    pretrained = None
    if args.ckpt:
        pretrained = restore_pretrain(args.ckpt).model
        cfg = pretrained.config
    else:
        cfg = _resolve_config(args.config, args.set)
    data = _read_labeled(args.data)
    rng = np.random.default_rng(args.split_seed)
    by_class: dict = {}
    for cloud, label in data:
        by_class.setdefault(label, []).append(cloud)
    train, val = [], []
    for label, clouds in sorted(by_class.items()):
        order = rng.permutation(len(clouds))
        n_val = max(1, int(round(args.val_frac * len(clouds))))
        val += [(clouds[i], label) for i in order[:n_val]]
        train += [(clouds[i], label) for i in order[n_val:]]
    report = finetune_classify(train, val, cfg, pretrained=pretrained,
                               epochs=args.epochs, batch_size=args.batch_size,
                               progress=args.progress)
    print(f"val accuracy: {report.accuracy:.4f} "
          f"({report.n_classes} classes, {len(train)} train / {len(val)} val clouds, "
          f"{args.epochs} epochs, init: {'pretrained' if pretrained else 'scratch'})")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_accuracy"])
            for e, (tl, va) in enumerate(zip(report.train_loss_history,
                                             report.val_accuracy_history), 1):
                w.writerow([e, repr(tl), repr(va)])
    return 0


def cmd_complete(args) -> int:
    state = restore_pretrain(args.ckpt)
    model = state.model
    partial = parse_pointcloud(args.infile)
    req = CompletionRequest(
        partial=partial,
        n_patches=args.patches or model.config.n_patches,
        patch_size=args.patch_size or model.config.patch_size,
        masked_slots=args.slots,
    )
    gt = parse_pointcloud(args.gt) if args.gt else None
    result = complete(req, model, ground_truth=gt)
    write_pointcloud(args.out, result.completed)
    print(f"completed {partial.n} -> {result.completed.n} points "
          f"({result.visible_count} visible patches, "
          f"{result.synthesized.shape[0]} synthesized points): {args.out}")
    if result.metrics:
        print(f"chamfer_l2 vs ground truth: completed {result.metrics['chamfer_l2_completed']:.6f}, "
              f"partial {result.metrics['chamfer_l2_partial']:.6f}")
        print(f"chamfer_l1 vs ground truth: completed {result.metrics['chamfer_l1_completed']:.6f}, "
              f"partial {result.metrics['chamfer_l1_partial']:.6f}")
    return 0


def cmd_count(args) -> int:
    if args.target == "transformer-baseline":
        report = transformer_baseline_report(classes=args.classes)
    else:
        cfg = _resolve_config(args.config, args.set)
        report = count_costs(cfg, args.target, classes=args.classes)
    print(report.table())
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args.config, args.set)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = run_ablation(cfg, variants=tuple(args.variants), seeds=seeds,
                          per_class=args.per_class, val_per_class=args.val_per_class,
                          noise=args.noise, pretrain_steps=args.pretrain_steps,
                          epochs=args.epochs, progress=args.progress)
    print(report.table())
    if args.out:
        report.to_csv(args.out)
        print(f"wrote {args.out}")
    if any(row.error for row in report.rows):
        return 1
    return 0


def cmd_config(args) -> int:
    cfg = _resolve_config(args.config, args.set)
    if args.out:
        save_config(cfg, args.out)
        print(f"wrote {args.out}")
    else:
        from .config import config_to_text
        print(config_to_text(cfg), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pointcompact",
        description="Masked-patch point cloud pretraining: compact encoder, "
                    "leakage-free masked-query decoder, dual reconstruction.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled shape dataset")
    p.add_argument("--spec", default="",
                   help="e.g. 'classes=sphere,cube;per_class=50;points=512;noise=0.01;seed=3'")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on a cloud directory")
    p.add_argument("--config", required=True, help="config file or builtin: reference/toy/tiny")
    p.add_argument("--data", required=True, help="directory of .xyz/.ply/.off files")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--steps", type=int, default=None, help="override optimizer.total_steps")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--decoder", choices=("partial", "vanilla", "vanilla_nopos"),
                   default="partial")
    p.add_argument("--log", default=None, help="per-step CSV loss log")
    p.add_argument("--progress-every", type=int, default=0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("classify", help="finetune + evaluate a shape classifier")
    p.add_argument("--ckpt", default=None, help="pretraining checkpoint (omit for scratch)")
    p.add_argument("--config", default="toy", help="config when no checkpoint is given")
    p.add_argument("--data", required=True, help="directory with clouds + labels.csv")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=25)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--progress", action="store_true")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("complete", help="complete a partial cloud with a pretrained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True, help="partial cloud file")
    p.add_argument("--out", required=True, help="completed cloud file")
    p.add_argument("--gt", default=None, help="ground truth cloud for metrics")
    p.add_argument("--slots", type=int, default=None, help="masked slots to synthesize")
    p.add_argument("--patches", type=int, default=None, help="target total patch count")
    p.add_argument("--patch-size", type=int, default=None)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("count", help="parameter and FLOP accounting")
    p.add_argument("--config", default="reference")
    p.add_argument("--target", choices=TARGETS + ("transformer-baseline",),
                   default="classifier")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("ablate", help="decoder-strategy ablation on synthetic shapes")
    p.add_argument("--config", default="toy")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--val-per-class", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--pretrain-steps", type=int, default=100)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--progress", action="store_true")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("config", help="print or materialize a config file")
    p.add_argument("--config", default="reference")
    p.add_argument("--out", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_config)

    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage error, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
