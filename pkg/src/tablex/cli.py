"""Command-line pipeline: prepare, train, finetune, predict, extract,
evaluate, synth.

Configuration is a flat JSON file of dotted keys (e.g. "train.total_iterations");
command-line flags override file values. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import cv2
import numpy as np

from . import data as data_mod
from .core import DocumentSample, Rect, TableGrid
from .errors import ConfigError, ParseError, TablexError, ValidationError
from .extract import ExtractConfig, extract_tables, grid_to_csv
from .ingestion import (
    DatasetManifest,
    ManifestEntry,
    Split,
    load_sample,
    parse_word_boxes,
    serialize_annotations,
    serialize_word_boxes,
)
from .metrics import evaluate_detection, evaluate_extraction
from .network import NetworkSpec, build_network, load_checkpoint, predict_masks
from .preprocess import PreprocessConfig, prepare_input
from .synthgen import SynthSpec, generate
from .trainer import BatchSource, TrainConfig, finetune, pixel_f1, run_schedule

CONFIG_SECTIONS = {
    "preprocess": PreprocessConfig,
    "network": NetworkSpec,
    "train": TrainConfig,
    "extract": ExtractConfig,
}

_CONFIG_KEYS = {
    f"{section}.{f.name}"
    for section, cls in CONFIG_SECTIONS.items()
    for f in dataclasses.fields(cls)
    if f.name != "palette"
}


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Flat dotted-key config; unknown keys are rejected."""
    merged: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        merged.update(raw)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return merged


def section_config(cls, merged: dict, section: str, **extra):
    kwargs = {
        k.split(".", 1)[1]: v for k, v in merged.items() if k.startswith(section + ".")
    }
    kwargs.update({k: v for k, v in extra.items() if v is not None})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {section} config: {e}") from e


def _write_page_bundle(out: Path, stem: str, sample: DocumentSample, grids) -> dict:
    image_path = out / f"{stem}.png"
    words_path = out / f"{stem}.words.tsv"
    ann_path = out / f"{stem}.annotation.json"
    grid_path = out / f"{stem}.grids.json"
    cv2.imwrite(str(image_path), sample.image)
    words_path.write_text(serialize_word_boxes(sample.words))
    ann_path.write_text(
        serialize_annotations(sample.tables, sample.columns, (sample.width, sample.height))
    )
    grid_path.write_text(json.dumps([g.to_dict() for g in grids], indent=2))
    return {"image": str(image_path), "words": str(words_path), "annotation": str(ann_path)}


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.n):
        spec = SynthSpec(
            page_size=args.page_size,
            n_tables=args.tables,
            n_columns=args.columns,
            n_rows=args.rows,
            ruled=args.ruled,
            multi_line_cell_prob=args.multiline_prob,
            font_size=args.font_size,
            seed=args.seed + i,
        )
        sample, grids = generate(spec)
        paths = _write_page_bundle(out, f"page_{i:04d}", sample, grids)
        split = "train" if i % 5 != 4 else "val"
        entries.append({**paths, "split": split})
    (out / "manifest.json").write_text(json.dumps(entries, indent=2))
    print(f"wrote {args.n} page bundles to {out}")
    return 0


def cmd_prepare(args) -> int:
    root = Path(args.data)
    images = sorted(root.glob("*.png"))
    if not images:
        raise ValidationError(f"no .png pages found in {root}")
    entries = []
    for i, img in enumerate(images):
        stem = img.name[: -len(".png")]
        words = root / f"{stem}.words.tsv"
        ann = root / f"{stem}.annotation.json"
        for p in (words, ann):
            if not p.exists():
                raise ValidationError(f"missing sibling file: {p}")
        split = "train"
        if args.val_every and i % args.val_every == args.val_every - 1:
            split = "val"
        entries.append(
            {"image": str(img), "words": str(words), "annotation": str(ann), "split": split}
        )
    Path(args.out).write_text(json.dumps(entries, indent=2))
    print(f"manifest with {len(entries)} entries -> {args.out}")
    return 0


def _load_split_tensors(manifest: DatasetManifest, split: Split, input_size: int,
                        pre: PreprocessConfig, seed: int, positives: bool):
    samples = [load_sample(e) for e in manifest.split(split)]
    if positives:
        samples = data_mod.positives_only(samples)
    return [
        data_mod.sample_to_tensors(s, input_size, pre, seed=seed + i)
        for i, s in enumerate(samples)
    ]


def _make_validator(val_tuples, threshold: float):
    if not val_tuples:
        return None
    import torch

    def validate(net):
        net.eval()
        f1s_t, f1s_c = [], []
        with torch.no_grad():
            for img, tmask, cmask in val_tuples:
                t_out, c_out = net(img.unsqueeze(0))
                f1s_t.append(pixel_f1(t_out.prob[0, 1].numpy(), tmask.numpy(), threshold))
                f1s_c.append(pixel_f1(c_out.prob[0, 1].numpy(), cmask.numpy(), threshold))
        return float(np.mean(f1s_t)), float(np.mean(f1s_c))

    return validate


def cmd_train(args) -> int:
    merged = load_config(args.config, _train_overrides(args))
    net_spec = section_config(NetworkSpec, merged, "network")
    train_cfg = section_config(TrainConfig, merged, "train", seed=args.seed)
    pre_cfg = section_config(PreprocessConfig, merged, "preprocess",
                             target_size=net_spec.input_size)
    manifest = DatasetManifest.load(args.manifest)
    train_tuples = _load_split_tensors(
        manifest, Split.TRAIN, net_spec.input_size, pre_cfg, train_cfg.seed, positives=True
    )
    if not train_tuples:
        raise ConfigError("no positive training samples in manifest")
    val_tuples = _load_split_tensors(
        manifest, Split.VAL, net_spec.input_size, pre_cfg, train_cfg.seed, positives=False
    )
    net = build_network(net_spec, pretrained=args.pretrained)
    source = BatchSource(train_tuples, train_cfg.batch_size, train_cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = run_schedule(
        net,
        source,
        train_cfg,
        checkpoint_dir=out / "checkpoints",
        validate=_make_validator(val_tuples, train_cfg.pixel_threshold),
        log_path=out / "train_log.jsonl",
    )
    (out / "train_state.json").write_text(json.dumps(state.to_dict(), indent=2))
    print(f"trained {state.iteration} iterations; final checkpoint in {out}/checkpoints/final")
    return 0


def cmd_finetune(args) -> int:
    merged = load_config(args.config, _train_overrides(args))
    train_cfg = section_config(TrainConfig, merged, "train", seed=args.seed)
    net, sidecar = load_checkpoint(args.checkpoint)
    pre_cfg = section_config(PreprocessConfig, merged, "preprocess",
                             target_size=net.spec.input_size)
    manifest = DatasetManifest.load(args.manifest)
    tuples = _load_split_tensors(
        manifest, Split.TRAIN, net.spec.input_size, pre_cfg, train_cfg.seed, positives=True
    )
    if not tuples:
        raise ConfigError("no positive samples in manifest")
    source = BatchSource(tuples, train_cfg.batch_size, train_cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = finetune(
        net,
        source,
        train_cfg,
        checkpoint_dir=out / "checkpoints",
        parent_checkpoint=str(args.checkpoint),
        log_path=out / "finetune_log.jsonl",
    )
    (out / "train_state.json").write_text(json.dumps(state.to_dict(), indent=2))
    print(f"fine-tuned {state.iteration} iterations; checkpoint in {out}/checkpoints/final")
    return 0


def cmd_predict(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    pre_cfg = PreprocessConfig(target_size=net.spec.input_size, drop_prob=0.0)
    manifest = DatasetManifest.load(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        sample = load_sample(entry)
        prepared = prepare_input(sample, pre_cfg, seed=args.seed)
        masks = predict_masks(net, prepared.image)
        stem = Path(entry.image_path).stem
        np.savez_compressed(
            out / f"{stem}.masks.npz",
            table_prob=masks.table_prob.astype(np.float32),
            column_prob=masks.column_prob.astype(np.float32),
        )
    print(f"wrote {len(manifest.entries)} mask files to {out}")
    return 0


def cmd_extract(args) -> int:
    merged = load_config(args.config, {})
    ex_cfg = section_config(ExtractConfig, merged, "extract")
    masks = np.load(args.masks)
    words = parse_word_boxes(args.words)
    from .ingestion import load_image

    image = load_image(args.image)
    table_prob = masks["table_prob"]
    if image.shape[:2] != table_prob.shape:
        # words/image are in page coordinates; bring masks to page size
        table_prob = cv2.resize(table_prob, (image.shape[1], image.shape[0]))
        column_prob = cv2.resize(masks["column_prob"], (image.shape[1], image.shape[0]))
    else:
        column_prob = masks["column_prob"]
    grids = extract_tables(table_prob, column_prob, words, image, ex_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    (out / f"{stem}.grids.json").write_text(json.dumps([g.to_dict() for g in grids], indent=2))
    for i, g in enumerate(grids):
        (out / f"{stem}.table_{i}.csv").write_text(grid_to_csv(g))
    print(f"extracted {len(grids)} tables -> {out}")
    return 0


def _load_grid_docs(path: str) -> list[list[TableGrid]]:
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict) and "documents" in raw:
        docs = raw["documents"]
    elif isinstance(raw, list) and raw and isinstance(raw[0], dict) and "region" in raw[0]:
        docs = [raw]  # a single document's grid list
    else:
        docs = raw
    return [[TableGrid.from_dict(g) for g in doc] for doc in docs]


def cmd_evaluate(args) -> int:
    if args.task == "extraction":
        pred = _load_grid_docs(args.pred)
        truth = _load_grid_docs(args.truth)
        if len(pred) != len(truth):
            raise ValidationError("pred/truth document counts differ")
        report = evaluate_extraction(pred, truth)
    else:
        def load_regions(path):
            raw = json.loads(Path(path).read_text())
            docs = raw["documents"] if isinstance(raw, dict) else raw
            return [[Rect.from_list(r) for r in doc] for doc in docs]

        pred = load_regions(args.pred)
        truth = load_regions(args.truth)
        words_docs = [parse_word_boxes(p) for p in args.words]
        if not (len(pred) == len(truth) == len(words_docs)):
            raise ValidationError("pred/truth/words document counts differ")
        report = evaluate_detection(pred, truth, words_docs)
    out = json.dumps(report.as_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(out)
        Path(args.out).with_suffix(".csv").write_text(report.to_csv())
    print(out)
    return 0


def _train_overrides(args) -> dict:
    return {
        "train.total_iterations": getattr(args, "iterations", None),
        "train.finetune_iterations": getattr(args, "iterations", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.learning_rate": getattr(args, "learning_rate", None),
        "network.input_size": getattr(args, "input_size", None),
        "network.base_width": getattr(args, "base_width", None),
        "network.conv6_width": getattr(args, "conv6_width", None),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablex",
        description="Table detection and tabular data extraction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0, help="global RNG seed")
        p.add_argument("--config", default=None,
                       help=f"JSON config file; keys: {sorted(_CONFIG_KEYS)}")

    p = sub.add_parser("synth", help="generate synthetic page bundles")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--page-size", type=int, default=1024)
    p.add_argument("--tables", type=int, default=1)
    p.add_argument("--columns", type=int, default=3)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--ruled", action="store_true")
    p.add_argument("--multiline-prob", type=float, default=0.0)
    p.add_argument("--font-size", type=int, default=2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="build a dataset manifest from a directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-every", type=int, default=5,
                   help="every Nth page goes to the validation split")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run the 2:1 -> 1:1 training schedule")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pretrained", action="store_true",
                   help="load encoder weights from $TABLENET_CACHE")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.add_argument("--input-size", type=int, default=None, dest="input_size")
    p.add_argument("--base-width", type=int, default=None, dest="base_width")
    p.add_argument("--conv6-width", type=int, default=None, dest="conv6_width")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training 1:1 on a new dataset")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("predict", help="write table/column probability masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("extract", help="masks + word boxes -> table grids")
    p.add_argument("--masks", required=True, help=".masks.npz from predict")
    p.add_argument("--words", required=True, help="word-box TSV")
    p.add_argument("--image", required=True, help="original page image")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--task", choices=["extraction", "detection"], default="extraction")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--words", nargs="*", default=[],
                   help="word TSVs per document (detection task)")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return args.func(args)
    except (ConfigError, ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TablexError, OSError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
