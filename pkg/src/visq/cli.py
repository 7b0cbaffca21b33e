"""Command-line pipeline driver.

Subcommands follow the pipeline order: gen-data writes scenes and truth
artifacts, fit-codecs fits the patch codebook and BPE from them (emitting an
initial checkpoint carrying the codecs plus the tokenized dataset manifest),
train optimizes from that checkpoint, and evaluate / infer / ablate consume
trained checkpoints. Every command is deterministic given (config, seed):
rerunning one produces byte-identical primary outputs.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .boxes import BoxError
from .bpe import BpeError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .data import (
    Codecs,
    DataError,
    fit_codecs,
    read_manifest,
    read_scene_records,
    tokenize_scene_record,
    write_manifest,
    write_scene_records,
)
from .evaluate import (
    EvalReport,
    build_eval_records,
    calibration_stats,
    config_digest,
    evaluate_records,
    n_sweep,
    paraphrase_generalization,
    write_sweep_csv,
)
from .imageio import ImageFormatError, read_ppm, write_pgm, write_ppm
from .inference import DecodeError, run_task
from .instructions import (
    ExpansionConfig,
    ExpansionError,
    InstructionError,
    expand_paraphrases,
    load_corpus,
)
from .metrics import MetricError
from .model import GradientError, ModelError, init_parameters
from .palette import encode_labels
from .scenes import SceneError, generate_scene
from .trainer import ScenePoolSource, TrainError, train_loop
from .vocab import LayoutError
from .vq import CodebookError

VALIDATION_ERRORS = (
    ConfigError, LayoutError, InstructionError, DataError, BoxError, BpeError,
    ModelError, TrainError, DecodeError, MetricError, ImageFormatError,
    CodebookError, argparse.ArgumentTypeError,
)
RUNTIME_ERRORS = (
    CheckpointError, ExpansionError, GradientError, SceneError, OSError,
)


def _say(args, *message) -> None:
    if not getattr(args, "quiet", False):
        print(*message)


def _load_corpus(config: RunConfig):
    return load_corpus(config.paths.corpus)


def _bounded_threads(n: int | None) -> None:
    if n is None:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:  # pragma: no cover
        pass


# --- subcommand implementations ----------------------------------------------


def cmd_gen_data(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    corpus = _load_corpus(config)
    out = Path(args.out)
    path = write_scene_records(
        n=args.count or config.data.num_samples,
        seed=config.seed,
        out_dir=out,
        corpus=corpus,
        ratios=config.data.ratios,
        split=args.split,
        max_objects=config.data.max_objects,
    )
    _say(args, f"wrote {path}")
    return 0


def cmd_fit_codecs(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    corpus = _load_corpus(config)
    data_dir = Path(args.data)
    records = read_scene_records(data_dir / "scenes.jsonl")
    scene_pool = [generate_scene(r["scene_seed"]) for r in records[: config.codec.fit_scenes]]
    codecs = fit_codecs(
        scene_pool, corpus, config.vocab,
        iters=config.codec.kmeans_iters, seed=config.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = init_parameters(config.model, seed=config.seed)
    save_checkpoint(params, codecs.codebook, codecs.bpe, out / "init.ckpt",
                    meta={"stage": "init"})
    samples = [tokenize_scene_record(r, data_dir, codecs) for r in records]
    manifest = write_manifest(samples, out / "manifest.jsonl", config.vocab)
    _say(args, f"wrote {out / 'init.ckpt'} and {manifest}")
    return 0


def _codecs_from_checkpoint(path, layout) -> tuple:
    params, codebook, bpe, meta = load_checkpoint(path, expect_layout=layout)
    if codebook is None or bpe is None:
        raise CheckpointError(f"{path}: checkpoint carries no codecs")
    return params, Codecs(layout=params.config.layout, codebook=codebook, bpe=bpe), meta


def cmd_train(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    params, codecs, _ = _codecs_from_checkpoint(args.codecs, config.vocab)
    corpus = _load_corpus(config)
    if args.template_only:
        corpus = corpus.template_only()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data)
    records = read_scene_records(data_dir / "scenes.jsonl")
    scenes = [generate_scene(r["scene_seed"]) for r in records]
    source = ScenePoolSource(scenes, codecs, corpus, split=config.train.instruction_split)

    def checkpoint_fn(step, p):
        save_checkpoint(p, codecs.codebook, codecs.bpe, out / "model.ckpt",
                        meta={"stage": "trained", "steps": step})

    train_loop(params, source, codecs, config.train,
               log_path=out / "train_log.csv", checkpoint_fn=checkpoint_fn)
    _say(args, f"wrote {out / 'model.ckpt'} and {out / 'train_log.csv'}")
    return 0


def cmd_infer(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    params, codecs, _ = _codecs_from_checkpoint(args.checkpoint, config.vocab)
    corpus = _load_corpus(config)
    image = read_ppm(args.image)
    decode = replace(config.decode, seed=config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_task(params, image, args.instruction, args.task, codecs,
                      config=decode, corpus=corpus)
    stem = args.task
    index = {"task": args.task, "instruction": args.instruction, "outputs": {}}
    if result.label_map is not None:
        write_ppm(out / f"{stem}_labels.ppm", encode_labels(result.label_map, codecs.palette))
        index["outputs"]["label_map"] = f"{stem}_labels.ppm"
    if result.mask is not None:
        write_pgm(out / f"{stem}_mask.pgm", result.mask.astype(np.uint8) * 255)
        index["outputs"]["mask"] = f"{stem}_mask.pgm"
    if result.confidence is not None:
        write_pgm(out / f"{stem}_confidence.pgm",
                  np.clip(np.rint(result.confidence * 255), 0, 255).astype(np.uint8))
        index["outputs"]["confidence"] = f"{stem}_confidence.pgm"
    if result.box is not None:
        (out / f"{stem}_box.jsonl").write_text(
            json.dumps({"box": list(result.box.coords())}) + "\n", "utf-8")
        index["outputs"]["box"] = f"{stem}_box.jsonl"
    if result.caption is not None:
        (out / f"{stem}_caption.jsonl").write_text(
            json.dumps({"caption": result.caption}) + "\n", "utf-8")
        index["outputs"]["caption"] = f"{stem}_caption.jsonl"
    index["skipped_samples"] = result.skipped
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True), "utf-8")
    _say(args, f"wrote outputs to {out}")
    if result.skipped and result.label_map is None and result.mask is None \
            and result.box is None and result.caption is None:
        _say(args, "warning: every sample was skipped; no output produced")
    return 0


def cmd_evaluate(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    params, codecs, _ = _codecs_from_checkpoint(args.checkpoint, config.vocab)
    corpus = _load_corpus(config)
    records = read_manifest(args.manifest, codecs)
    if args.limit:
        records = records[: args.limit]
    decode = replace(config.decode, seed=config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_dir = out / "records" if args.dump else None
    report = evaluate_records(params, codecs, records, decode, corpus, dump_dir=dump_dir)
    report.write_json(out / "eval_report.json")
    report.write_csv(out / "eval_report.csv")
    _say(args, f"wrote {out / 'eval_report.json'}")
    for name in sorted(report.metrics):
        _say(args, f"  {name} = {report.metrics[name]:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    corpus = _load_corpus(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    decode = replace(config.decode, seed=config.seed)
    scenes = [generate_scene(10_000_000 + i) for i in range(config.eval.num_scenes)]

    if args.experiment == "n-sweep":
        params, codecs, _ = _codecs_from_checkpoint(args.checkpoint, config.vocab)
        n_values = [int(x) for x in args.n.split(",")]
        records = build_eval_records(scenes, codecs, corpus, ("semseg", "rec"),
                                     seed=config.seed, split=config.eval.split)
        rows = n_sweep(params, codecs, records, n_values, decode)
        write_sweep_csv(rows, out / "n_sweep.csv")
        _say(args, f"wrote {out / 'n_sweep.csv'}")
        return 0

    if args.experiment == "paraphrase":
        if not args.template_checkpoint:
            raise ConfigError("ablate paraphrase requires --template-checkpoint")
        params_full, codecs, _ = _codecs_from_checkpoint(args.checkpoint, config.vocab)
        params_template, _, _ = _codecs_from_checkpoint(args.template_checkpoint, config.vocab)
        cells = paraphrase_generalization(
            params_full, params_template, codecs, corpus, scenes, decode, seed=config.seed
        )
        (out / "paraphrase.json").write_text(json.dumps(cells, indent=2, sort_keys=True), "utf-8")
        _say(args, f"wrote {out / 'paraphrase.json'}")
        for k in sorted(cells):
            _say(args, f"  {k} = {cells[k]:.4f}")
        return 0

    if args.experiment == "confidence":
        params, codecs, _ = _codecs_from_checkpoint(args.checkpoint, config.vocab)
        records = build_eval_records(scenes, codecs, corpus, ("semseg",),
                                     seed=config.seed, split=config.eval.split)
        stats = calibration_stats(params, codecs, records, decode)
        doc = {
            "mean_correct": stats.mean_correct,
            "mean_incorrect": stats.mean_incorrect,
            "n_correct": stats.n_correct,
            "n_incorrect": stats.n_incorrect,
        }
        (out / "confidence.json").write_text(json.dumps(doc, indent=2, sort_keys=True), "utf-8")
        _say(args, f"wrote {out / 'confidence.json'}")
        return 0

    if args.experiment == "image-only":
        # mixed vs image-output-only training from the same initialization
        if not args.data:
            raise ConfigError("ablate image-only requires --data")
        data_dir = Path(args.data)
        records = read_scene_records(data_dir / "scenes.jsonl")
        pool = [generate_scene(r["scene_seed"]) for r in records]
        results = {}
        for mode in ("all", "image-only"):
            params, codecs, _ = _codecs_from_checkpoint(args.checkpoint, config.vocab)
            train_cfg = replace(config.train, output_mode=mode)
            source = ScenePoolSource(pool, codecs, corpus, split=config.train.instruction_split)
            train_loop(params, source, codecs, train_cfg)
            eval_records = build_eval_records(scenes, codecs, corpus, ("semseg", "res"),
                                              seed=config.seed, split=config.eval.split)
            report = evaluate_records(params, codecs, eval_records, decode, corpus)
            results[mode] = report.metrics
        (out / "image_only.json").write_text(
            json.dumps(results, indent=2, sort_keys=True), "utf-8")
        _say(args, f"wrote {out / 'image_only.json'}")
        for mode, metrics in results.items():
            for name in sorted(metrics):
                _say(args, f"  {mode}: {name} = {metrics[name]:.4f}")
        return 0

    raise ConfigError(f"unknown ablate experiment {args.experiment!r}")


def cmd_expand_instructions(args) -> int:
    config = load_run_config(args.config, {"seed": args.seed})
    corpus = _load_corpus(config)
    expansion = ExpansionConfig(url=config.paths.expansion_url,
                                api_key_env=config.paths.api_key_env)
    template = corpus.template_for_task(args.task)
    accepted = expand_paraphrases(expansion, corpus, template, args.n,
                                  corpus_path=args.corpus_out)
    _say(args, f"accepted {len(accepted)} paraphrases")
    return 0


def cmd_inspect_checkpoint(args) -> int:
    params, codebook, bpe, meta = load_checkpoint(args.checkpoint)
    doc = {
        "config": params.config.to_dict(),
        "layout": params.config.layout.to_dict(),
        "tensors": {n: list(params[n].shape) for n in params.names()},
        "parameters": int(sum(int(np.prod(params[n].shape)) for n in params.names())),
        "codebook": None if codebook is None else {
            "patch_size": codebook.patch_size, "entries": codebook.size},
        "bpe_vocab": None if bpe is None else bpe.vocab_size,
        "meta": meta,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visq",
        description="instruction-conditioned multi-task vision as sequence prediction",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="run config JSON")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--threads", type=int, default=None,
                        help="bound worker/BLAS parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate scenes + manifest")
    p.add_argument("--count", type=int, default=None, help="override data.num_samples")
    p.add_argument("--split", default="train", help="record id prefix")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("fit-codecs", parents=[common],
                       help="fit patch codebook + BPE; writes init.ckpt + manifest")
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.set_defaults(fn=cmd_fit_codecs)

    p = sub.add_parser("train", parents=[common], help="train from an init checkpoint")
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.add_argument("--codecs", required=True, help="init.ckpt from fit-codecs")
    p.add_argument("--template-only", action="store_true",
                   help="train with one fixed instruction template per task")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="run one image + instruction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PPM P6 input image")
    p.add_argument("--instruction", required=True)
    p.add_argument("--task", required=True, choices=("semseg", "res", "rec", "caption"))
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], help="manifest + checkpoint -> report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--dump", action="store_true",
                   help="write per-record pred/gt artifacts under OUT/records/")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common],
                       help="paraphrase / n-sweep / confidence / image-only")
    p.add_argument("experiment", choices=("paraphrase", "n-sweep", "confidence", "image-only"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--template-checkpoint", default=None,
                   help="template-only checkpoint (paraphrase experiment)")
    p.add_argument("--n", default="1,4,6,8,10", help="sampling counts for n-sweep")
    p.add_argument("--data", default=None,
                   help="gen-data directory (image-only experiment trains from it)")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("expand-instructions", parents=[common],
                       help="grow the paraphrase corpus over HTTP")
    p.add_argument("--task", required=True, choices=("semseg", "res", "rec", "caption"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--corpus-out", required=True)
    p.set_defaults(fn=cmd_expand_instructions)

    p = sub.add_parser("inspect-checkpoint", parents=[common], help="print header summary")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_inspect_checkpoint)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    _bounded_threads(args.threads)
    try:
        return args.fn(args)
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
