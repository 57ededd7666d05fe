"""Command-line pipeline: dataset generation, training, scoring, refinement,
evaluation, sensitivity maps and the built-in verification suite.

Every command is deterministic given ``--seed`` and the config; outputs
land only under the ``--out`` paths, with a plain-text ``run.manifest``
(seed, config hash, versions) written beside file outputs.  ``--jobs``
fans independent work items over threads without changing any result.

Exit codes: 0 success, 1 run-time failure (message on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, datagen, metrics
from .config import RunConfig, write_manifest
from .document import DocumentError, read_document, write_document
from .raster import save_png
from .refiner import GaConfig, RefinerError, refine_all, refine_text
from .scorer import (
    LossConfig,
    ScorerModel,
    TrainConfig,
    heat_colormap,
    rank_accuracy,
    sensitivity_map,
    train,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="designfit",
        description="Score and refine vector graphic designs.",
    )
    parser.add_argument("--version", action="version", version=f"designfit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset-gen", help="generate a synthetic good/bad pair dataset")
    p.add_argument("--n", type=int, required=True, help="number of documents")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--setting", choices=datagen.SETTINGS, default="biased")
    p.add_argument("--max-elems", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("train", help="train the scorer on a pair dataset")
    p.add_argument("--data", required=True, help="dataset root from dataset-gen")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--margin-mode", choices=("hard", "transform", "adaptive"))
    p.add_argument("--sim-mode", choices=("deviance", "exponential", "square"))
    p.add_argument("--input", choices=("both", "rendition", "layout"))
    p.add_argument(
        "--norm",
        choices=("group", "batch", "layer", "instance"),
        help="normalization layer (batch/layer/instance exist for the ablation)",
    )
    p.add_argument("--input-size", type=int)
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("score", help="print the scalar score of a document")
    p.add_argument("--model", required=True)
    p.add_argument("--doc", required=True)

    p = sub.add_parser("refine", help="refine a document with the genetic optimizer")
    p.add_argument("--model", required=True)
    p.add_argument("--doc", required=True)
    p.add_argument("--mode", choices=("text", "all"), default="all")
    p.add_argument("--target", type=int, help="text element index (mode=text)")
    p.add_argument("--pop", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--p", type=float, dest="p_take")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="refined document path")
    p.add_argument("--render", help="optional PNG of the refined design")
    p.add_argument("--trace", help="optional CSV of (generation, best score)")
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("eval", help="compare predicted documents against ground truth")
    p.add_argument("--gt", required=True, help="document file or directory")
    p.add_argument("--pred", required=True, help="document file or directory")
    p.add_argument("--targets", choices=("text", "foreground"), default="text")

    p = sub.add_parser("sensitivity", help="occlusion sensitivity map as a PNG")
    p.add_argument("--model", required=True)
    p.add_argument("--doc", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)

    sub.add_parser("selfcheck", help="gradient and oracle verification suite")
    return parser


def _config_from_args(args, overrides: list[tuple[str, str, str]]) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    for section, key, attr in overrides:
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, value)
    return cfg


def _cmd_dataset_gen(args) -> int:
    cfg = _config_from_args(
        args,
        [("data", "n", "n"), ("data", "seed", "seed"), ("data", "setting", "setting"),
         ("data", "max_elems", "max_elems")],
    )
    n = cfg.get("data", "n")
    seed = cfg.get("data", "seed")
    setting = cfg.get("data", "setting")
    docs = datagen.generate_synthetic(seed, n, cfg.get("data", "max_elems"))
    train_frac = cfg.get("data", "train_frac")
    val_frac = cfg.get("data", "val_frac")
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    splits = {
        "train": docs[:n_train],
        "val": docs[n_train : n_train + n_val],
        "test": docs[n_train + n_val :],
    }
    split_seeds = {name: seed + i for i, name in enumerate(("train", "val", "test"))}
    pairs = {
        name: datagen.build_pairs(split_docs, setting, split_seeds[name])
        for name, split_docs in splits.items()
        if split_docs
    }
    datagen.write_dataset(args.out, pairs, seed)
    write_manifest(args.out, "dataset-gen", seed, cfg, sorted(pairs))
    for name in ("train", "val", "test"):
        print(f"{name}: {len(pairs.get(name, ()))} pairs")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(
        args,
        [("train", "epochs", "epochs"), ("train", "batch_size", "batch_size"),
         ("train", "alpha", "alpha"), ("train", "beta", "beta"),
         ("train", "margin_mode", "margin_mode"), ("train", "sim_mode", "sim_mode"),
         ("model", "input_mode", "input"), ("model", "norm", "norm"),
         ("model", "input_size", "input_size")],
    )
    pairs_train = datagen.load_dataset(args.data, "train")
    pairs_val = datagen.load_dataset(args.data, "val")
    init_seed, shuffle_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(args.seed).spawn(2))
    model = ScorerModel(
        input_size=cfg.get("model", "input_size"),
        norm=cfg.get("model", "norm"),
        input_mode=cfg.get("model", "input_mode"),
        seed=init_seed,
    )
    margin_mode = {"hard": "hard", "transform": "transform", "adaptive": "adaptive"}[
        cfg.get("train", "margin_mode")
    ]
    loss_cfg = LossConfig(
        alpha=cfg.get("train", "alpha"),
        beta=cfg.get("train", "beta"),
        margin_mode=margin_mode,
        margin=cfg.get("train", "margin"),
        sim_mode=cfg.get("train", "sim_mode"),
        eps=cfg.get("train", "eps"),
    )
    train_cfg = TrainConfig(
        batch_size=cfg.get("train", "batch_size"),
        lr=cfg.get("train", "lr"),
        beta1=cfg.get("train", "beta1"),
        beta2=cfg.get("train", "beta2"),
        weight_decay=cfg.get("train", "weight_decay"),
        lr_halve_every=cfg.get("train", "lr_halve_every"),
        loss=loss_cfg,
    )
    report = train(
        model,
        pairs_train,
        pairs_val,
        epochs=cfg.get("train", "epochs"),
        seed=shuffle_seed,
        cfg=train_cfg,
        jobs=args.jobs,
        log=print,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    write_manifest(out.parent, "train", args.seed, cfg, [out.name])
    print(f"best epoch {report.best_epoch}: val-racc {report.best_val_racc:.4f}")
    return 0


def _cmd_score(args) -> int:
    model = ScorerModel.from_checkpoint(args.model)
    doc = read_document(args.doc)
    print(repr(model.score_doc(doc)))
    return 0


def _cmd_refine(args) -> int:
    cfg = _config_from_args(
        args,
        [("ga", "population_size", "pop"), ("ga", "n_trials", "trials"), ("ga", "p", "p_take")],
    )
    if args.mode == "text" and args.target is None:
        print("refine --mode text requires --target", file=sys.stderr)
        return 2
    model = ScorerModel.from_checkpoint(args.model)
    doc = read_document(args.doc)
    ga_cfg = GaConfig(
        population_size=cfg.get("ga", "population_size"),
        n_trials=cfg.get("ga", "n_trials"),
        p=cfg.get("ga", "p"),
        mutation_sigma=cfg.get("ga", "mutation_sigma"),
        mutation_rate=cfg.get("ga", "mutation_rate"),
        elitism=cfg.get("ga", "elitism"),
        seed=args.seed,
    )
    if args.mode == "text":
        result = refine_text(model, doc, args.target, ga_cfg)
    else:
        result = refine_all(model, doc, ga_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_document(result.refined, out)
    outputs = [out.name]
    if args.render:
        from .raster import render_rendition

        size = model.input_size
        save_png(render_rendition(result.refined, size, size), args.render)
        outputs.append(Path(args.render).name)
    if args.trace:
        lines = ["generation,best_score"]
        lines += [f"{i},{v!r}" for i, v in enumerate(result.trace)]
        Path(args.trace).write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append(Path(args.trace).name)
    write_manifest(out.parent, "refine", args.seed, cfg, outputs)
    print(f"refined score {result.trace[-1]!r} over {len(result.trace)} generations")
    return 0


def _doc_files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(path.glob("*.doc"))
    return [path]


def _cmd_eval(args) -> int:
    gt_files = _doc_files(Path(args.gt))
    pred_files = _doc_files(Path(args.pred))
    if len(gt_files) != len(pred_files):
        print(
            f"eval: {len(gt_files)} ground-truth vs {len(pred_files)} predicted documents",
            file=sys.stderr,
        )
        return 1
    records = [
        metrics.EvalRecord(read_document(g), read_document(p))
        for g, p in zip(gt_files, pred_files)
    ]
    if args.targets == "text":
        targets = [r.text_indices() for r in records]
    else:
        targets = [r.ground_truth.foreground_indices for r in records]
    miou = metrics.mean_iou(records, targets)
    mbde = metrics.mean_bde(records, targets)
    tmiou = metrics.type_mean_iou(records)
    print(f"miou={miou!r} mbde={mbde!r} tmiou={tmiou!r} n={len(records)}")
    return 0


def _cmd_sensitivity(args) -> int:
    cfg = _config_from_args(args, [("eval", "window", "window"), ("eval", "stride", "stride")])
    model = ScorerModel.from_checkpoint(args.model)
    doc = read_document(args.doc)
    heat = sensitivity_map(
        model,
        doc,
        window=cfg.get("eval", "window"),
        stride=cfg.get("eval", "stride"),
        jobs=args.jobs,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(heat_colormap(heat), out)
    write_manifest(out.parent, "sensitivity", 0, cfg, [out.name])
    return 0


def _cmd_selfcheck(_args) -> int:
    from .selfcheck import run_selfcheck

    with tempfile.TemporaryDirectory() as tmp:
        ok = run_selfcheck(tmp)
    return 0 if ok else 1


_COMMANDS = {
    "dataset-gen": _cmd_dataset_gen,
    "train": _cmd_train,
    "score": _cmd_score,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "sensitivity": _cmd_sensitivity,
    "selfcheck": _cmd_selfcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (DocumentError, RefinerError, datagen.DatagenError, metrics.MetricsError,
            ValueError, FileNotFoundError) as exc:
        print(f"designfit {args.command}: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:  # console-script shim
    sys.exit(main())
