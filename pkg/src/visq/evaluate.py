"""Evaluation drivers: per-task reports, the N sweep, confidence calibration,
and the paraphrase-generalization experiment.

A failed decode (all N samples illegal) is scored honestly: an all-background
label map for segmentation, an empty mask for referring segmentation, and a
miss for boxes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import box_iou
from .data import Codecs, Sample
from .inference import DecodeConfig, result_grid, run_task
from .instructions import NAMED_COLORS, InstructionCorpus, render, sample_instruction
from .metrics import ap50, bleu4, mean_iou, overall_iou, pixel_accuracy
from .model import Parameters
from .palette import decode_labels
from .scenes import NUM_CLASSES, Scene, referring_expression
from .vq import vq_decode


@dataclass
class EvalReport:
    metrics: dict[str, float]
    counts: dict[str, int]
    config_digest: str
    num_samples: int
    instruction_split: str
    skipped: int = 0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "counts": self.counts,
            "config_digest": self.config_digest,
            "num_samples": self.num_samples,
            "instruction_split": self.instruction_split,
            "skipped": self.skipped,
            "extras": self.extras,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), "utf-8")

    def write_csv(self, path: str | Path) -> None:
        lines = ["metric,value,count"]
        for name in sorted(self.metrics):
            task = name.split("_", 1)[0]
            lines.append(f"{name},{self.metrics[name]:.6f},{self.counts.get(task, 0)}")
        Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


class _RecordDumper:
    """Per-record diagnostics writer used by evaluate_records."""

    def __init__(self, out_dir: str | Path, codecs: Codecs):
        from .imageio import write_pgm, write_ppm
        from .palette import encode_labels

        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.codecs = codecs
        self.index: dict[str, dict] = {}
        self.box_lines: list[str] = []
        self.caption_lines: list[str] = []
        self._write_pgm = write_pgm
        self._write_ppm = write_ppm
        self._encode_labels = encode_labels

    def _conf(self, rec_id: str, out, entry: dict) -> None:
        if out.confidence is not None:
            name = f"{rec_id}_conf.pgm"
            data = np.clip(np.rint(out.confidence * 255), 0, 255).astype(np.uint8)
            self._write_pgm(self.dir / name, data)
            entry["confidence"] = name

    def dump(self, rec_id: str, rec: Sample, out) -> None:
        entry: dict = {"task": rec.task, "instruction": rec.instruction}
        palette = self.codecs.palette
        if rec.task == "semseg":
            pred = out.label_map if out.label_map is not None else np.zeros_like(rec.truth)
            self._write_ppm(self.dir / f"{rec_id}_pred.ppm", self._encode_labels(pred, palette))
            self._write_ppm(self.dir / f"{rec_id}_gt.ppm",
                            self._encode_labels(np.asarray(rec.truth), palette))
            entry["pred"] = f"{rec_id}_pred.ppm"
            entry["gt"] = f"{rec_id}_gt.ppm"
            self._conf(rec_id, out, entry)
        elif rec.task == "res":
            pred = out.mask if out.mask is not None else np.zeros_like(rec.truth, dtype=bool)
            self._write_pgm(self.dir / f"{rec_id}_pred.pgm", pred.astype(np.uint8) * 255)
            self._write_pgm(self.dir / f"{rec_id}_gt.pgm",
                            np.asarray(rec.truth).astype(np.uint8) * 255)
            entry["pred"] = f"{rec_id}_pred.pgm"
            entry["gt"] = f"{rec_id}_gt.pgm"
            self._conf(rec_id, out, entry)
        elif rec.task == "rec":
            record = {"id": rec_id,
                      "pred": None if out.box is None else list(out.box.coords()),
                      "gt": list(rec.truth.coords())}
            self.box_lines.append(json.dumps(record, sort_keys=True))
            entry["in"] = "boxes.jsonl"
        else:
            record = {"id": rec_id, "pred": out.caption or "", "gt": rec.truth}
            self.caption_lines.append(json.dumps(record, sort_keys=True))
            entry["in"] = "captions.jsonl"
        self.index[rec_id] = entry

    def finish(self) -> None:
        if self.box_lines:
            (self.dir / "boxes.jsonl").write_text("\n".join(self.box_lines) + "\n", "utf-8")
        if self.caption_lines:
            (self.dir / "captions.jsonl").write_text("\n".join(self.caption_lines) + "\n", "utf-8")
        (self.dir / "index.json").write_text(
            json.dumps(self.index, indent=2, sort_keys=True), "utf-8")


def evaluate_records(
    params: Parameters,
    codecs: Codecs,
    records: list[Sample],
    decode: DecodeConfig | None = None,
    corpus: InstructionCorpus | None = None,
    dump_dir: str | Path | None = None,
) -> EvalReport:
    """Run every record through run_task and score per-task metrics.

    dump_dir, when given, receives per-record diagnostics: predicted and
    ground-truth label maps as palette PPM, masks as PGM, confidence maps as
    PGM, boxes and captions as JSON lines, and an index.json keyed by record
    id.
    """
    cfg = decode or DecodeConfig()
    dumper = _RecordDumper(dump_dir, codecs) if dump_dir is not None else None
    seg_preds, seg_gts = [], []
    res_preds, res_gts = [], []
    box_preds, box_gts = [], []
    captions, refs = [], []
    counts: dict[str, int] = {}
    skipped = 0
    for i, rec in enumerate(records):
        counts[rec.task] = counts.get(rec.task, 0) + 1
        per_record = DecodeConfig(**{**cfg.__dict__, "seed": cfg.seed * 1_000_003 + i})
        out = run_task(
            params, rec.image, rec.instruction, rec.task, codecs,
            config=per_record, res_color=rec.meta.get("color"), corpus=corpus,
        )
        skipped += out.skipped
        if dumper is not None:
            dumper.dump(rec.meta.get("id", f"rec-{i:06d}"), rec, out)
        if rec.task == "semseg":
            pred = out.label_map if out.label_map is not None else np.zeros_like(rec.truth)
            seg_preds.append(pred)
            seg_gts.append(rec.truth)
        elif rec.task == "res":
            pred = out.mask if out.mask is not None else np.zeros_like(rec.truth, dtype=bool)
            res_preds.append(pred)
            res_gts.append(rec.truth)
        elif rec.task == "rec":
            box_gts.append(rec.truth)
            box_preds.append(out.box)
        else:
            captions.append(out.caption or "")
            refs.append(rec.truth)
    if dumper is not None:
        dumper.finish()
    metrics: dict[str, float] = {}
    if seg_preds:
        metrics["semseg_miou"] = mean_iou(seg_preds, seg_gts, NUM_CLASSES)
        metrics["semseg_pixel_acc"] = pixel_accuracy(seg_preds, seg_gts)
    if res_preds:
        metrics["res_oiou"] = overall_iou(res_preds, res_gts)
    if box_gts:
        hits = sum(
            1 for p, g in zip(box_preds, box_gts) if p is not None and box_iou(p, g) >= 0.5
        )
        metrics["rec_ap50"] = hits / len(box_gts)
    if captions:
        metrics["caption_bleu4"] = bleu4(captions, refs)
    return EvalReport(
        metrics=metrics,
        counts=counts,
        config_digest=config_digest(cfg.__dict__),
        num_samples=cfg.num_samples,
        instruction_split="as-recorded",
        skipped=skipped,
    )


def build_eval_records(
    scenes: list[Scene],
    codecs: Codecs,
    corpus: InstructionCorpus,
    tasks: tuple[str, ...],
    seed: int,
    split: str = "train",
) -> list[Sample]:
    """One record per (scene, task) with instructions drawn from the split."""
    from .data import build_target

    records = []
    for i, scene in enumerate(scenes):
        for j, task in enumerate(tasks):
            rng = np.random.default_rng(np.random.SeedSequence([0xE7A1, seed, i, j]))
            records.append(build_target(task, scene, rng, codecs, corpus, split))
    return records


# --- confidence calibration ---------------------------------------------------


def cell_classes(grid: np.ndarray, codecs: Codecs) -> np.ndarray:
    """Majority pixel class of each decoded patch cell."""
    img = vq_decode(grid, codecs.codebook)
    labels = decode_labels(img, codecs.palette)
    p = codecs.codebook.patch_size
    gh, gw = grid.shape
    cells = labels.reshape(gh, p, gw, p).transpose(0, 2, 1, 3).reshape(gh, gw, p * p)
    out = np.empty((gh, gw), dtype=np.int64)
    for y in range(gh):
        for x in range(gw):
            out[y, x] = np.bincount(cells[y, x], minlength=NUM_CLASSES).argmax()
    return out


def truth_cell_classes(label_map: np.ndarray, patch_size: int) -> np.ndarray:
    h, w = label_map.shape
    gh, gw = h // patch_size, w // patch_size
    cells = label_map.reshape(gh, patch_size, gw, patch_size).transpose(0, 2, 1, 3)
    cells = cells.reshape(gh, gw, patch_size * patch_size)
    out = np.empty((gh, gw), dtype=np.int64)
    for y in range(gh):
        for x in range(gw):
            out[y, x] = np.bincount(cells[y, x], minlength=NUM_CLASSES).argmax()
    return out


@dataclass
class CalibrationStats:
    mean_correct: float
    mean_incorrect: float
    n_correct: int
    n_incorrect: int


def calibration_stats(
    params: Parameters,
    codecs: Codecs,
    records: list[Sample],
    decode: DecodeConfig | None = None,
) -> CalibrationStats:
    """Token probabilities on correctly vs incorrectly decoded grid cells.

    Runs the dense records through sampling and buckets every sampled
    token's probability by whether its decoded patch class matches the
    ground-truth patch class.
    """
    cfg = decode or DecodeConfig()
    correct: list[float] = []
    incorrect: list[float] = []
    for i, rec in enumerate(records):
        if rec.task != "semseg":
            continue
        per_record = DecodeConfig(**{**cfg.__dict__, "seed": cfg.seed * 1_000_003 + i})
        out = run_task(params, rec.image, rec.instruction, rec.task, codecs, config=per_record)
        truth_cells = truth_cell_classes(np.asarray(rec.truth), codecs.codebook.patch_size)
        for result in out.results:
            grid = result_grid(result, codecs.layout)
            pred_cells = cell_classes(grid, codecs)
            probs = np.array(result.probs).reshape(result.grid_shape)
            match = pred_cells == truth_cells
            correct.extend(probs[match].tolist())
            incorrect.extend(probs[~match].tolist())
    return CalibrationStats(
        mean_correct=float(np.mean(correct)) if correct else float("nan"),
        mean_incorrect=float(np.mean(incorrect)) if incorrect else float("nan"),
        n_correct=len(correct),
        n_incorrect=len(incorrect),
    )


# --- N sweep (sampling-count ablation) -----------------------------------------


def n_sweep(
    params: Parameters,
    codecs: Codecs,
    records: list[Sample],
    n_values: list[int],
    decode: DecodeConfig | None = None,
) -> list[dict]:
    """Evaluate the same records at several sampling counts N."""
    cfg = decode or DecodeConfig()
    rows = []
    for n in n_values:
        per_n = DecodeConfig(**{**cfg.__dict__, "num_samples": n})
        report = evaluate_records(params, codecs, records, per_n)
        rows.append({"n": n, **report.metrics})
    return rows


def write_sweep_csv(rows: list[dict], path: str | Path) -> None:
    keys = ["n"] + sorted({k for r in rows for k in r if k != "n"})
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(_cell(r.get(k)) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# --- paraphrase generalization --------------------------------------------------


def res_oiou_on_scenes(
    params: Parameters,
    codecs: Codecs,
    corpus: InstructionCorpus,
    scenes: list[Scene],
    split: str,
    decode: DecodeConfig | None = None,
    seed: int = 0,
) -> float:
    """RES oIoU over scenes with instructions drawn from the given split."""
    cfg = decode or DecodeConfig()
    preds, gts = [], []
    for i, scene in enumerate(scenes):
        rng = np.random.default_rng(np.random.SeedSequence([0x9E5, seed, i]))
        variant = sample_instruction(corpus, "res", rng, split)
        idx = int(rng.integers(len(scene.objects)))
        color = list(NAMED_COLORS)[int(rng.integers(len(NAMED_COLORS)))]
        expr = referring_expression(scene, idx, rng)
        instruction = render(variant.text, {"object": expr, "color": color})
        per_record = DecodeConfig(**{**cfg.__dict__, "seed": cfg.seed * 1_000_003 + i})
        out = run_task(
            params, scene.image, instruction, "res", codecs,
            config=per_record, res_color=color,
        )
        mask = out.mask if out.mask is not None else np.zeros_like(scene.masks[idx])
        preds.append(mask)
        gts.append(scene.masks[idx])
    return overall_iou(preds, gts)


def paraphrase_generalization(
    params_full: Parameters,
    params_template: Parameters,
    codecs: Codecs,
    corpus: InstructionCorpus,
    scenes: list[Scene],
    decode: DecodeConfig | None = None,
    seed: int = 0,
) -> dict:
    """Seen vs heldout RES oIoU for the full-corpus and template-only models.

    The template-only model's "seen" set is its single fixed template; the
    heldout paraphrase split is novel to both models. Returns the four oIoU
    cells plus the two seen-minus-heldout degradation deltas.
    """
    template_corpus = corpus.template_only()
    if not corpus.variants_for("res", "heldout"):
        raise ValueError("corpus has no heldout split")
    cells = {
        "full_seen": res_oiou_on_scenes(params_full, codecs, corpus, scenes, "train", decode, seed),
        "full_heldout": res_oiou_on_scenes(params_full, codecs, corpus, scenes, "heldout", decode, seed),
        "template_seen": res_oiou_on_scenes(
            params_template, codecs, template_corpus, scenes, "train", decode, seed
        ),
        "template_heldout": res_oiou_on_scenes(
            params_template, codecs, corpus, scenes, "heldout", decode, seed
        ),
    }
    cells["full_delta"] = cells["full_seen"] - cells["full_heldout"]
    cells["template_delta"] = cells["template_seen"] - cells["template_heldout"]
    return cells
