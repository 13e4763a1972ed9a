"""Command-line pipeline: synth, select, train, eval, diversity, report, sweep.

Exit codes: 0 on success, 2 on configuration errors, 1 on runtime failures.
The ALS_SEG_THREADS environment variable caps torch worker threads.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
import traceback
from pathlib import Path

import numpy as np
import torch

from .active_learner import read_manifest, run_active_selection, write_manifest, write_selection_log
from .config import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    merge_config,
    write_effective_config,
)
from .metrics import diversity_report, evaluate_predictions, miou, per_class_iou
from .pool import PixelMask, SegmentationDataset, split_train_val
from .s4gan import build_models, load_checkpoint, models_from_checkpoint, run_training
from .seeding import derive_seed
from .synth import SHAPE_KINDS, SynthSpec, generate_synthetic_dataset

REPORT_HEADER = "ratio,strategy,seed,miou,shannon,simpson"
REPORT_KEYS = ("ratio", "strategy", "seed", "miou", "shannon", "simpson")


# ---------------------------------------------------------------- metrics.txt

def _metrics_file(run_dir) -> Path:
    return Path(run_dir) / "metrics.txt"


def read_run_metrics(run_dir) -> dict[str, str]:
    path = _metrics_file(run_dir)
    values: dict[str, str] = {}
    if path.is_file():
        for line in path.read_text(encoding="utf-8").splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    return values


def update_run_metrics(run_dir, **kv) -> None:
    values = read_run_metrics(run_dir)
    values.update({k: str(v) for k, v in kv.items()})
    text = "\n".join(f"{k}={values[k]}" for k in sorted(values)) + "\n"
    _metrics_file(run_dir).write_text(text, encoding="utf-8")


# ------------------------------------------------------------ pipeline steps

def _load_dataset(cfg: ExperimentConfig) -> SegmentationDataset:
    if not cfg.dataset_path:
        raise ConfigError("dataset path is required")
    return SegmentationDataset.load(cfg.dataset_path)


def _split_ids(cfg: ExperimentConfig, dataset: SegmentationDataset):
    return split_train_val(
        dataset.ids, 1.0 - cfg.eval_split_fraction, derive_seed(cfg.seed, "split")
    )


def do_select(cfg: ExperimentConfig, dataset: SegmentationDataset):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ids, val_ids = _split_ids(cfg, dataset)
    result = run_active_selection(cfg.selection, dataset, pool_ids=train_ids)
    leak = set(result.labeled_ids) & set(val_ids)
    if leak:
        raise RuntimeError(f"selected ids leak into the validation split: {sorted(leak)}")
    write_effective_config(cfg, out)
    write_manifest(out / "manifest.tsv", result, config_hash(cfg), cfg.seed)
    write_selection_log(out / "selection_log.tsv", result.per_iteration_log)
    update_run_metrics(
        out,
        ratio=cfg.selection.labeled_ratio,
        strategy=cfg.selection.strategy,
        seed=cfg.seed,
    )
    return result, out / "manifest.tsv"


def do_train(cfg: ExperimentConfig, dataset: SegmentationDataset, manifest_ids, resume=None):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    unknown = [sid for sid in manifest_ids if sid not in set(dataset.ids)]
    if unknown:
        raise RuntimeError(f"manifest ids missing from the dataset: {unknown}")
    missing_masks = [sid for sid in manifest_ids if not dataset.has_mask(sid)]
    if missing_masks:
        raise RuntimeError(f"manifest ids without pixel masks: {missing_masks}")

    train_ids, val_ids = _split_ids(cfg, dataset)
    leak = set(manifest_ids) & set(val_ids)
    if leak:
        raise RuntimeError(f"manifest ids leak into the validation split: {sorted(leak)}")
    unlabeled = sorted(set(train_ids) - set(manifest_ids))

    cfg.gan.num_classes = dataset.num_classes
    in_channels = dataset.load_image(dataset.ids[0]).shape[2]
    resume_payload = None
    if resume is not None:
        resume_payload = load_checkpoint(resume)
        if resume_payload["num_classes"] != dataset.num_classes:
            raise RuntimeError(
                f"checkpoint expects {resume_payload['num_classes']} classes but the "
                f"dataset has {dataset.num_classes}"
            )
        seg, disc = models_from_checkpoint(resume_payload)
    else:
        seg, disc = build_models(cfg.gan, in_channels, cfg.seed)

    write_effective_config(cfg, out)
    seg, _ = run_training(
        seg,
        disc,
        manifest_ids,
        dataset,
        cfg.gan,
        cfg.seed,
        out,
        unlabeled_ids=unlabeled,
        resume_payload=resume_payload,
        config_hash=config_hash(cfg),
    )
    final = out / "checkpoints" / f"step_{cfg.gan.iterations:06d}.pt"
    return final


def _checkpoint_predictor(payload, dataset: SegmentationDataset):
    seg, _ = models_from_checkpoint(payload)
    seg.eval()

    def predict(sample_id: str) -> PixelMask:
        arr = dataset.load_image(sample_id).astype(np.float32)
        x = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
        with torch.no_grad():
            probs = seg(x)
        pred = probs.argmax(dim=1).squeeze(0).numpy().astype(np.int64)
        return PixelMask(pred, payload["num_classes"])

    return predict


def do_eval(cfg: ExperimentConfig, dataset, checkpoint, split: str, manifest_ids=None):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = load_checkpoint(checkpoint)
    if payload["num_classes"] != dataset.num_classes:
        raise RuntimeError(
            f"checkpoint was trained with {payload['num_classes']} classes but the "
            f"dataset has {dataset.num_classes}"
        )
    train_ids, val_ids = _split_ids(cfg, dataset)
    ids = val_ids if split == "val" else train_ids
    if manifest_ids is not None and split == "val":
        leak = set(manifest_ids) & set(val_ids)
        if leak:
            raise RuntimeError(
                f"manifest train ids appear in the validation split: {sorted(leak)}"
            )
    cm = evaluate_predictions(_checkpoint_predictor(payload, dataset), dataset, ids, dataset.num_classes)
    score = miou(cm)
    per_class = per_class_iou(cm)
    lines = [f"split={split}", f"miou={score}"]
    lines += [f"iou_class_{k}={v}" for k, v in enumerate(per_class)]
    (out / "eval.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    update_run_metrics(out, miou=score)
    return score, per_class


def do_diversity(cfg: ExperimentConfig, dataset, manifest_ids):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    shannon, simpson = diversity_report(manifest_ids, dataset)
    (out / "diversity.txt").write_text(
        f"shannon={shannon}\nsimpson={simpson}\n", encoding="utf-8"
    )
    update_run_metrics(out, shannon=shannon, simpson=simpson)
    return shannon, simpson


def collect_report(run_dirs) -> tuple[list[dict[str, str]], list[str]]:
    rows: list[dict[str, str]] = []
    warnings: list[str] = []
    for run_dir in run_dirs:
        values = read_run_metrics(run_dir)
        if not all(key in values for key in REPORT_KEYS):
            missing = [key for key in REPORT_KEYS if key not in values]
            warnings.append(f"skipping {run_dir}: missing metrics {missing}")
            continue
        rows.append({key: values[key] for key in REPORT_KEYS})
    rows.sort(key=lambda r: (float(r["ratio"]), r["strategy"], int(r["seed"])))
    return rows, warnings


def write_report(rows, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = out / "report.csv"
    lines = [REPORT_HEADER] + [",".join(row[key] for key in REPORT_KEYS) for row in rows]
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")

    groups: dict[tuple[str, str], list[dict[str, str]]] = {}
    for row in rows:
        groups.setdefault((row["ratio"], row["strategy"]), []).append(row)
    summary_lines = [
        "ratio,strategy,n,miou_mean,miou_std,shannon_mean,shannon_std,simpson_mean,simpson_std"
    ]
    for (ratio, strategy), members in sorted(groups.items(), key=lambda g: (float(g[0][0]), g[0][1])):
        parts = [ratio, strategy, str(len(members))]
        for key in ("miou", "shannon", "simpson"):
            values = np.asarray([float(m[key]) for m in members])
            parts += [str(values.mean()), str(values.std())]
        summary_lines.append(",".join(parts))
    summary = out / "summary.csv"
    summary.write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    return report, summary


# -------------------------------------------------------------------- parser

def _common_config_args(sub):
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--preset", help="named hyperparameter preset (e.g. paper)")
    sub.add_argument("--seed", type=int, help="root seed")
    sub.add_argument("--output-dir", required=True, help="run directory (all writes go here)")
    sub.add_argument("--eval-split-fraction", type=float, help="validation fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="als-seg",
        description="Active-learning sample selection + semi-supervised GAN segmentation",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--output-dir", required=True)
    synth.add_argument("--n-images", type=int, default=200)
    synth.add_argument("--image-size", type=int, nargs=2, default=[32, 32], metavar=("H", "W"))
    synth.add_argument("--num-classes", type=int, default=4)
    synth.add_argument("--class-prior", help="comma-separated simplex weights")
    synth.add_argument("--shapes", default=",".join(SHAPE_KINDS))
    synth.add_argument("--rare-class-rate", type=float, default=0.1)
    synth.add_argument("--seed", type=int, default=0)

    select = commands.add_parser("select", help="run the selection loop, write a manifest")
    _common_config_args(select)
    select.add_argument("--dataset", required=True)
    select.add_argument("--labeled-ratio", type=float)
    select.add_argument("--strategy", choices=("entropy", "margin", "random"))
    select.add_argument("--alpha-init", type=float)
    select.add_argument("--beta-q", type=float)
    select.add_argument("--learner-arch")
    select.add_argument("--epochs-per-teach", type=int)
    select.add_argument("--learner-batch-size", type=int)
    select.add_argument("--learner-lr", type=float)

    train = commands.add_parser("train", help="train the segmentation GAN from a manifest")
    _common_config_args(train)
    train.add_argument("--dataset", required=True)
    train.add_argument("--manifest", required=True)
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--iterations", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--tau", type=float)
    train.add_argument("--lambda-fm", type=float)
    train.add_argument("--lambda-st", type=float)
    train.add_argument("--gen-lr", type=float)
    train.add_argument("--disc-lr", type=float)
    train.add_argument("--seg-arch")
    train.add_argument("--disc-channels", type=int)
    train.add_argument("--disc-dropout", type=float)
    train.add_argument("--fm-norm", choices=("l1", "l2"))
    train.add_argument("--ephemeral-st", action="store_true", default=None)
    train.add_argument("--checkpoint-every", type=int)
    train.add_argument("--crop-size", help="H,W or - for native")

    ev = commands.add_parser("eval", help="score a checkpoint on a dataset split")
    _common_config_args(ev)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("train", "val"), default="val")
    ev.add_argument("--manifest", help="manifest to leakage-check against the split")

    div = commands.add_parser("diversity", help="diversity indices of a manifest")
    _common_config_args(div)
    div.add_argument("--dataset", required=True)
    div.add_argument("--manifest", required=True)

    report = commands.add_parser("report", help="merge run metrics into one table")
    report.add_argument("run_dirs", nargs="+")
    report.add_argument("--output-dir", required=True)

    sweep = commands.add_parser("sweep", help="grid sweep over selection knobs")
    _common_config_args(sweep)
    sweep.add_argument("--dataset", required=True)
    sweep.add_argument("--labeled-ratio", type=float)
    sweep.add_argument("--alpha-grid", default="0.1,0.5,0.9")
    sweep.add_argument("--beta-grid", default="0.1,0.5,0.9")
    sweep.add_argument("--strategy-grid", default="entropy,margin")
    sweep.add_argument("--learner-arch")
    sweep.add_argument("--epochs-per-teach", type=int)
    sweep.add_argument("--learner-batch-size", type=int)
    sweep.add_argument("--learner-lr", type=float)
    sweep.add_argument("--full", action="store_true", help="also train, eval and score diversity")
    sweep.add_argument("--iterations", type=int, help="GAN iterations for --full sweeps")

    return parser


def _overrides_from(args, mapping: dict[str, str]) -> dict[str, str]:
    overrides = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


_SELECT_FLAGS = {
    "labeled_ratio": "selection.labeled_ratio",
    "strategy": "selection.strategy",
    "alpha_init": "selection.alpha_init",
    "beta_q": "selection.beta_q",
    "learner_arch": "selection.learner.architecture",
    "epochs_per_teach": "selection.learner.epochs_per_teach",
    "learner_batch_size": "selection.learner.batch_size",
    "learner_lr": "selection.learner.base_lr",
}

_TRAIN_FLAGS = {
    "iterations": "gan.iterations",
    "batch_size": "gan.batch_size",
    "tau": "gan.tau",
    "lambda_fm": "gan.lambda_fm",
    "lambda_st": "gan.lambda_st",
    "gen_lr": "gan.gen_lr",
    "disc_lr": "gan.disc_lr",
    "seg_arch": "gan.seg_architecture",
    "disc_channels": "gan.disc_base_channels",
    "disc_dropout": "gan.disc_dropout",
    "fm_norm": "gan.fm_norm",
    "ephemeral_st": "gan.ephemeral_st",
    "checkpoint_every": "gan.checkpoint_every",
    "crop_size": "gan.crop_size",
}

_COMMON_FLAGS = {"seed": "seed", "eval_split_fraction": "eval_split_fraction"}


def _build_cfg(args, extra_mappings=()) -> ExperimentConfig:
    overrides = _overrides_from(args, _COMMON_FLAGS)
    for mapping in extra_mappings:
        overrides.update(_overrides_from(args, mapping))
    if getattr(args, "dataset", None):
        overrides["dataset_path"] = args.dataset
    overrides["output_dir"] = args.output_dir
    return merge_config(getattr(args, "config", None), getattr(args, "preset", None), overrides)


def _run_sweep(args) -> int:
    cfg = _build_cfg(args, [_SELECT_FLAGS])
    dataset = _load_dataset(cfg)
    alphas = [float(v) for v in args.alpha_grid.split(",") if v]
    betas = [float(v) for v in args.beta_grid.split(",") if v]
    strategies = [s for s in args.strategy_grid.split(",") if s]
    if not alphas or not betas or not strategies:
        raise ConfigError("sweep grids must be non-empty")

    base = Path(cfg.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    failures = []
    successes = 0
    with open(base / "sweep_log.txt", "a", encoding="utf-8") as log:
        for alpha, beta, strategy in itertools.product(alphas, betas, strategies):
            name = f"a{alpha:g}_b{beta:g}_{strategy}"
            point_dir = base / name
            point_seed = derive_seed(cfg.seed, "sweep", alpha, beta, strategy)
            try:
                point_cfg = merge_config(
                    getattr(args, "config", None),
                    getattr(args, "preset", None),
                    {
                        **_overrides_from(args, _SELECT_FLAGS),
                        "selection.alpha_init": str(alpha),
                        "selection.beta_q": str(beta),
                        "selection.strategy": strategy,
                        "dataset_path": cfg.dataset_path,
                        "output_dir": str(point_dir),
                        "seed": str(point_seed),
                        **(
                            {"gan.iterations": str(args.iterations)}
                            if args.iterations is not None
                            else {}
                        ),
                    },
                )
                result, manifest_path = do_select(point_cfg, dataset)
                if args.full:
                    ckpt = do_train(point_cfg, dataset, list(result.labeled_ids))
                    do_eval(point_cfg, dataset, ckpt, "val", manifest_ids=result.labeled_ids)
                    do_diversity(point_cfg, dataset, result.labeled_ids)
                log.write(f"{name}\tok\n")
                successes += 1
            except Exception as exc:  # noqa: BLE001 - record and continue the sweep
                log.write(f"{name}\tfailed\t{exc}\n")
                failures.append((name, exc))
                print(f"sweep point {name} failed: {exc}", file=sys.stderr)
    print(f"sweep finished: {successes} ok, {len(failures)} failed")
    return 0 if successes else 1


def run_command(args) -> int:
    if args.command == "synth":
        prior = None
        if args.class_prior:
            prior = tuple(float(v) for v in args.class_prior.split(","))
        spec = SynthSpec(
            n_images=args.n_images,
            image_size=(args.image_size[0], args.image_size[1]),
            num_classes=args.num_classes,
            class_prior=prior or (),
            shape_vocabulary=tuple(s for s in args.shapes.split(",") if s),
            rare_class_rate=args.rare_class_rate,
            seed=args.seed,
        )
        out = generate_synthetic_dataset(spec, args.output_dir)
        print(f"wrote {spec.n_images} samples to {out}")
        return 0

    if args.command == "select":
        cfg = _build_cfg(args, [_SELECT_FLAGS])
        dataset = _load_dataset(cfg)
        result, manifest_path = do_select(cfg, dataset)
        print(f"selected {len(result.labeled_ids)} samples -> {manifest_path}")
        return 0

    if args.command == "train":
        cfg = _build_cfg(args, [_TRAIN_FLAGS])
        dataset = _load_dataset(cfg)
        manifest_ids, _ = read_manifest(args.manifest)
        final = do_train(cfg, dataset, manifest_ids, resume=args.resume)
        print(f"final checkpoint: {final}")
        return 0

    if args.command == "eval":
        cfg = _build_cfg(args)
        dataset = _load_dataset(cfg)
        manifest_ids = read_manifest(args.manifest)[0] if args.manifest else None
        score, _ = do_eval(cfg, dataset, args.checkpoint, args.split, manifest_ids=manifest_ids)
        print(f"miou[{args.split}] = {score:.6f}")
        return 0

    if args.command == "diversity":
        cfg = _build_cfg(args)
        dataset = _load_dataset(cfg)
        manifest_ids, _ = read_manifest(args.manifest)
        shannon, simpson = do_diversity(cfg, dataset, manifest_ids)
        print(f"shannon = {shannon:.6f}, inverse simpson = {simpson:.6f}")
        return 0

    if args.command == "report":
        rows, warnings = collect_report(args.run_dirs)
        for warning in warnings:
            print(warning, file=sys.stderr)
        if not rows:
            print("no valid run directories", file=sys.stderr)
            return 1
        report, summary = write_report(rows, args.output_dir)
        print(f"wrote {report} ({len(rows)} rows) and {summary}")
        return 0

    if args.command == "sweep":
        return _run_sweep(args)

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    threads = os.environ.get("ALS_SEG_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run_command(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
