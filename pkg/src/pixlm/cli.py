"""Batch entry points: gen-data, train, infer, eval, diag-pca.

All randomness flows from one manifest-recorded root seed per command, so any
command reruns byte-identically from its manifest. Exit codes: 0 success,
2 config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .colors import resolve_color
from .dataset import (DataError, GenConfig, generate_triplets, load_dataset,
                      load_png, read_manifest, save_png, write_dataset,
                      write_manifest)
from .grammar import lexicon
from .metrics import (MetricReport, edge_f1, mean_angle_error, miou, psnr,
                      rmse_depth, ssim)
from .metrics import embed_instructions, pca_top2
from .model import ModelConfig, init_params
from .sampler import SampleConfig, batch_infer, generate
from .seeding import mix_seed
from .synth import Triplet
from .tasks import Direction, TaskKind, format_task_direction, parse_task_direction
from .tokenizer import Vocab, build_text_vocab, dequantize_image, quantize_image
from .trainer import (TrainConfig, load_checkpoint, save_checkpoint, train,
                      write_metrics_csv)


class ConfigError(ValueError):
    pass


def _load_json(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad JSON in {path}: {e}") from None


def _parse_tasks(names: list[str]) -> tuple[TaskKind, ...]:
    tasks = []
    for name in names:
        try:
            tasks.append(TaskKind.from_name(name))
        except ValueError:
            raise ConfigError(f"unknown task name in config: {name!r}") from None
    return tuple(tasks)


def _parse_exclusions(entries: list[str]) -> frozenset:
    out = set()
    for entry in entries:
        try:
            out.add(parse_task_direction(entry))
        except ValueError as e:
            raise ConfigError(str(e)) from None
    return frozenset(out)


# --- gen-data ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    raw = _load_json(args.config)
    try:
        cfg = GenConfig(
            scenes=int(raw["scenes"]), tasks=_parse_tasks(raw["tasks"]),
            width=int(raw.get("width", 16)), height=int(raw.get("height", 16)),
            objects_per_scene=int(raw.get("objects_per_scene", 3)),
            seed=int(args.seed if args.seed is not None else raw.get("seed", 0)),
            grammar_family=str(raw.get("grammar_family", "a")))
    except KeyError as e:
        raise ConfigError(f"gen-data config missing key {e}") from None
    os.makedirs(args.out, exist_ok=True)
    pairs = generate_triplets(cfg)
    write_dataset(args.out, pairs, cfg)
    print(f"wrote {2 * len(pairs)} triplets to {args.out}")
    return 0


# --- train --------------------------------------------------------------------

def _model_config_from(raw_model: dict, vocab: Vocab) -> ModelConfig:
    try:
        return ModelConfig(
            vocab_size=vocab.total_size,
            d_model=int(raw_model["d_model"]), n_layers=int(raw_model["n_layers"]),
            n_heads=int(raw_model["n_heads"]), d_ff=int(raw_model["d_ff"]),
            max_seq_len=int(raw_model["max_seq_len"]),
            rope_base=float(raw_model.get("rope_base", 10000.0)),
            rmsnorm_eps=float(raw_model.get("rmsnorm_eps", 1e-5)),
            z_loss_weight=float(raw_model.get("z_loss_weight", 1e-5)))
    except KeyError as e:
        raise ConfigError(f"model config missing key {e}") from None


def cmd_train(args) -> int:
    raw = _load_json(args.config)
    dataset_dir = raw.get("dataset")
    if not dataset_dir or not os.path.isdir(dataset_dir):
        raise DataError(f"dataset directory not found: {dataset_dir}")
    triplets = load_dataset(dataset_dir)
    tok = raw.get("tokenizer", {})
    # The grammar lexicon rides along so held-out phrasings stay word-tokenized.
    corpus = [t.instruction for t in triplets] + list(lexicon())
    vocab = build_text_vocab(corpus,
                             max_size=int(tok.get("max_words", 512)),
                             levels_per_channel=int(tok.get("levels_per_channel", 8)),
                             max_dim=int(tok.get("max_dim", 64)))
    model_cfg = _model_config_from(raw.get("model", {}), vocab)
    tr = raw.get("train", {})
    excluded = _parse_exclusions(raw.get("excluded_tasks", []))
    train_cfg = TrainConfig(
        lr=float(tr.get("lr", 4e-5)), weight_decay=float(tr.get("weight_decay", 0.01)),
        beta1=float(tr.get("beta1", 0.9)), beta2=float(tr.get("beta2", 0.95)),
        adam_eps=float(tr.get("adam_eps", 1e-8)),
        batch_size=int(tr.get("batch_size", 8)), epochs=int(tr.get("epochs", 1)),
        bucket_width=int(tr.get("bucket_width", 64)),
        seed=int(tr.get("seed", 0)), excluded_tasks=excluded,
        grad_clip=tr.get("grad_clip"))

    os.makedirs(args.out, exist_ok=True)
    state = None
    start_epoch = 0
    if args.resume:
        params, state, _, extra = load_checkpoint(args.resume, expected_config=model_cfg)
        start_epoch = int(extra.get("epochs_done", 0))
    else:
        params = init_params(model_cfg, train_cfg.seed)
    params, state, records = train(params, model_cfg, train_cfg, triplets, vocab,
                                   state=state, start_epoch=start_epoch)

    exclusion_names = sorted(format_task_direction(t, d) for t, d in excluded)
    vocab.save(os.path.join(args.out, "vocab.json"))
    save_checkpoint(params, state, model_cfg, os.path.join(args.out, "ckpt.bin"),
                    epochs_done=train_cfg.epochs,
                    extra={"excluded_tasks": exclusion_names})
    write_metrics_csv(records, os.path.join(args.out, "metrics.csv"))
    write_manifest(args.out, "train", raw, train_cfg.seed,
                   inputs=[dataset_dir],
                   outputs=["ckpt.bin", "metrics.csv", "vocab.json"],
                   extra={"excluded_tasks": exclusion_names,
                          "lr": train_cfg.lr,
                          "lr_note": raw.get("lr_note", "")})
    last = records[-1] if records else None
    if last:
        print(f"finished at step {last.step}: ce={last.ce:.4f} total={last.total:.4f}")
    return 0


def _load_model(checkpoint_path):
    if not os.path.exists(checkpoint_path):
        raise DataError(f"checkpoint not found: {checkpoint_path}")
    params, state, cfg, extra = load_checkpoint(checkpoint_path)
    vocab_path = os.path.join(os.path.dirname(checkpoint_path) or ".", "vocab.json")
    if not os.path.exists(vocab_path):
        raise DataError(f"vocab.json not found next to checkpoint: {vocab_path}")
    return params, cfg, Vocab.load(vocab_path), extra


# --- infer --------------------------------------------------------------------

def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f"resolution must look like '16x16', got {text!r}") from None


def cmd_infer(args) -> int:
    params, cfg, vocab, _ = _load_model(args.checkpoint)
    if not os.path.exists(args.image):
        raise DataError(f"input image not found: {args.image}")
    img = load_png(args.image)
    if args.instruction_file:
        with open(args.instruction_file, encoding="utf-8") as f:
            instruction = f.read().strip()
    elif args.instruction is not None:
        instruction = args.instruction
    else:
        raise ConfigError("provide --instruction or --instruction-file")
    resolution = _parse_resolution(args.resolution)
    sample_cfg = SampleConfig(top_k_text=args.top_k_text, top_k_image=args.top_k_image,
                              temperature=args.temperature, seed=args.seed,
                              free_structure=args.free_structure)
    out_img = generate(params, cfg, vocab, img, instruction, resolution, sample_cfg)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    save_png(out_img, args.out)
    write_manifest(out_dir, "infer",
                   {"checkpoint": args.checkpoint, "image": args.image,
                    "instruction": instruction, "resolution": args.resolution,
                    "top_k_text": args.top_k_text, "top_k_image": args.top_k_image,
                    "temperature": args.temperature,
                    "free_structure": args.free_structure},
                   args.seed, inputs=[args.checkpoint, args.image],
                   outputs=[os.path.basename(args.out)])
    print(f"wrote {args.out}")
    return 0


# --- eval -----------------------------------------------------------------------

def _quantized_reference(vocab: Vocab, img):
    return dequantize_image(vocab, quantize_image(vocab, img))


def _binarize(img):
    out = np.zeros_like(img)
    out[img.mean(axis=-1) > 127] = 255
    return out


def _grayscale(img):
    g = np.round(img.astype(np.float64).mean(axis=-1)).astype(np.uint8)
    return np.stack([g, g, g], axis=-1)


def _pair_metrics(vocab: Vocab, task: TaskKind, direction: Direction,
                  gen, ref, meta: dict) -> dict[str, float]:
    ref_q = _quantized_reference(vocab, ref)
    if direction is Direction.FORWARD and task is TaskKind.EDGE:
        return {"f1": edge_f1(_binarize(gen), _binarize(ref_q))}
    if direction is Direction.FORWARD and task is TaskKind.DEPTH:
        return {"rmse": rmse_depth(_grayscale(gen), _grayscale(ref_q))}
    if direction is Direction.FORWARD and task is TaskKind.SURFACE_NORMAL:
        return {"mean_angle_error": mean_angle_error(gen, ref_q)}
    if direction is Direction.FORWARD and task in (TaskKind.SEGMENTATION, TaskKind.DETECTION):
        colors = {}
        for cat, value in meta["color_by_category"].items():
            rgb = np.array([[resolve_color(value)]], dtype=np.uint8)
            colors[cat] = tuple(int(v) for v in _quantized_reference(vocab, rgb)[0, 0])
        return {"miou": miou(gen, ref_q, colors)}
    return {"psnr": psnr(gen, ref_q), "ssim": ssim(gen, ref_q)}


def _regenerate(dataset_dir: str, family: str | None) -> tuple[list[Triplet], GenConfig]:
    manifest = read_manifest(dataset_dir)
    gen_cfg = GenConfig.from_json_dict(manifest["config"])
    pairs = generate_triplets(gen_cfg, family=family)
    flat: list[Triplet] = []
    for fwd, inv in pairs:
        flat.extend((fwd, inv))
    return flat, gen_cfg


def cmd_eval(args) -> int:
    params, cfg, vocab, _ = _load_model(args.checkpoint)
    if not os.path.isdir(args.dataset):
        raise DataError(f"dataset directory not found: {args.dataset}")
    stored_family = read_manifest(args.dataset)["config"].get("grammar_family", "a")

    if args.protocol == "seen":
        triplets, _ = _regenerate(args.dataset, stored_family)
    elif args.protocol == "unseen-instruction":
        other = "b" if stored_family == "a" else "a"
        triplets, _ = _regenerate(args.dataset, other)
        seen_triplets, _ = _regenerate(args.dataset, stored_family)
        overlap = {t.instruction for t in triplets} & {t.instruction for t in seen_triplets}
        if overlap:
            raise DataError(f"instruction families overlap on {len(overlap)} strings")
    elif args.protocol == "unseen-task":
        manifest_path = args.train_manifest or os.path.join(
            os.path.dirname(args.checkpoint) or ".", "manifest.json")
        train_manifest = read_manifest(manifest_path)
        names = train_manifest.get("excluded_tasks")
        if not names:
            raise ConfigError("training manifest lacks an exclusion list; "
                              "unseen-task protocol refuses to run")
        held_out = _parse_exclusions(names)
        triplets, _ = _regenerate(args.dataset, stored_family)
        triplets = [t for t in triplets if (t.task, t.direction) in held_out]
    else:  # pragma: no cover - argparse choices guard this
        raise ConfigError(f"unknown protocol {args.protocol!r}")

    if args.limit is not None:
        triplets = triplets[:args.limit]
    if not triplets:
        raise DataError("no triplets to evaluate under this protocol")

    sample_cfg = SampleConfig(top_k_image=args.top_k_image,
                              temperature=args.temperature, seed=args.seed)
    results = batch_infer(params, cfg, vocab, triplets, sample_cfg)

    report = MetricReport(protocol=args.protocol)
    grouped: dict[str, list[dict[str, float]]] = {}
    for t, (gen, ref, _) in zip(triplets, results):
        key = format_task_direction(t.task, t.direction)
        grouped.setdefault(key, []).append(
            _pair_metrics(vocab, t.task, t.direction, gen, ref, t.meta))
    for key, rows in grouped.items():
        merged: dict[str, float] = {}
        for name in rows[0]:
            merged[name] = float(np.mean([r[name] for r in rows]))
        report.add(key, merged, len(rows))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as f:
        json.dump(report.to_json_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report.render_table())
    write_manifest(args.out, "eval",
                   {"checkpoint": args.checkpoint, "dataset": args.dataset,
                    "protocol": args.protocol, "limit": args.limit,
                    "top_k_image": args.top_k_image, "temperature": args.temperature},
                   args.seed, inputs=[args.checkpoint, args.dataset],
                   outputs=["report.json", "report.txt"])
    print(report.render_table())
    return 0


# --- diag-pca --------------------------------------------------------------------

def cmd_diag_pca(args) -> int:
    triplets = load_dataset(args.dataset)
    by_task: dict[str, list[str]] = {}
    for t in triplets:
        by_task.setdefault(t.task.value, []).append(t.instruction)
    rng = np.random.default_rng(mix_seed(args.seed, "diag-pca"))
    labels: list[str] = []
    texts: list[str] = []
    for task in sorted(by_task):
        pool = by_task[task]
        if len(pool) < args.samples_per_task:
            print(f"warning: task {task} has only {len(pool)} instructions "
                  f"(wanted {args.samples_per_task}); using all", file=sys.stderr)
            chosen = list(pool)
        else:
            idx = rng.choice(len(pool), size=args.samples_per_task, replace=False)
            chosen = [pool[i] for i in sorted(idx)]
        labels.extend([task] * len(chosen))
        texts.extend(chosen)
    points = pca_top2(embed_instructions(texts))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "points.csv"), "w", encoding="utf-8") as f:
        f.write("task,x,y\n")
        for label, (x, y) in zip(labels, points):
            f.write(f"{label},{x!r},{y!r}\n")
    scatter: dict[str, list[list[float]]] = {}
    for label, (x, y) in zip(labels, points):
        scatter.setdefault(label, []).append([float(x), float(y)])
    with open(os.path.join(args.out, "scatter.json"), "w", encoding="utf-8") as f:
        json.dump(scatter, f, sort_keys=True)
        f.write("\n")
    write_manifest(args.out, "diag-pca",
                   {"dataset": args.dataset, "samples_per_task": args.samples_per_task},
                   args.seed, inputs=[args.dataset],
                   outputs=["points.csv", "scatter.json"])
    print(f"wrote {len(labels)} projected points to {args.out}")
    return 0


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixlm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a triplet dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run supervised fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="generate one output image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--instruction", default=None)
    p.add_argument("--instruction-file", default=None)
    p.add_argument("--resolution", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k-text", type=int, default=5)
    p.add_argument("--top-k-image", type=int, default=2048)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--free-structure", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="run a metric report over a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--protocol", required=True,
                   choices=("seen", "unseen-instruction", "unseen-task"))
    p.add_argument("--out", required=True)
    p.add_argument("--train-manifest", default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--top-k-image", type=int, default=2048)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diag-pca", help="2-D instruction embedding diagnostic")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-task", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diag_pca)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
