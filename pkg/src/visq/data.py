"""Dataset assembly: task sampling, target token sequences, manifests.

Targets are framed BOS ... EOS and use only the token kind their task
declares: visual tokens for dense outputs (semantic and referring
segmentation), positional tokens for boxes, text tokens for captions.
PAD fills batches out to a common length; the loss masks it.

The on-disk story has two stages matching the pipeline ordering. `gen-data`
emits a scene manifest (images, truths, rendered dense targets, instructions
-- no tokens, since the codecs are not fitted yet). After `fit-codecs`, every
record can be tokenized into the dataset manifest this module reads and
writes, which is also the format external datasets can supply directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import Box, box_encode
from .bpe import BpeModel, bpe_encode, bpe_train
from .imageio import read_pgm, read_ppm, write_pgm, write_ppm
from .instructions import (
    NAMED_COLORS,
    InstructionCorpus,
    placeholders_of,
    render,
    sample_instruction,
)
from .palette import encode_labels, palette_for_classes
from .scenes import NUM_CLASSES, Scene, generate_scene, referring_expression
from .vocab import BOS, EOS, VocabLayout, to_global
from .vq import PatchCodebook, fit_patch_codebook, vq_encode

TASK_TOKEN_KIND = {"semseg": "visual", "res": "visual", "rec": "positional", "caption": "text"}
DENSE_TASKS = ("semseg", "res")
IMAGE_OUTPUT_TASKS = ("semseg", "res")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TaskRatios:
    semseg: float = 0.45
    res: float = 0.25
    rec: float = 0.15
    caption: float = 0.15

    def normalized(self) -> dict[str, float]:
        weights = {
            "semseg": self.semseg,
            "res": self.res,
            "rec": self.rec,
            "caption": self.caption,
        }
        if any(w < 0 for w in weights.values()):
            raise DataError(f"negative task weight in {weights}")
        total = sum(weights.values())
        if total <= 0:
            raise DataError("all task weights are zero")
        return {k: w / total for k, w in weights.items()}


def sample_task(rng: np.random.Generator, ratios: TaskRatios) -> str:
    weights = ratios.normalized()
    names = list(weights)
    return names[int(rng.choice(len(names), p=[weights[n] for n in names]))]


@dataclass
class Codecs:
    """Everything needed to turn ground truth into token sequences and back."""

    layout: VocabLayout
    codebook: PatchCodebook
    bpe: BpeModel

    @property
    def palette(self) -> np.ndarray:
        return palette_for_classes(NUM_CLASSES)

    @property
    def bins(self) -> int:
        return self.layout.n_positional


def fit_codecs(
    scenes: list[Scene],
    corpus: InstructionCorpus,
    layout: VocabLayout,
    iters: int = 40,
    seed: int = 0,
) -> Codecs:
    """Fit the patch codebook and the BPE model from generated scenes.

    The codebook sees every dense target the tasks can produce: the palette
    image of each scene plus the referring target of every (object, color)
    pair, so no target pattern is rare at fit time. The BPE corpus is the
    scene captions plus instruction variants rendered with representative
    bindings.
    """
    palette = palette_for_classes(NUM_CLASSES)
    targets = []
    for scene in scenes:
        targets.append(encode_labels(scene.label_map, palette))
        for mask in scene.masks:
            for color in NAMED_COLORS:
                targets.append(res_target_image(mask, color))
    codebook = fit_patch_codebook(
        targets, n_entries=layout.n_visual, patch_size=4, iters=iters, seed=seed, restarts=3
    )

    from .scenes import SHAPES, SIZES

    expressions = [f"{c} {s}" for c in NAMED_COLORS for s in SHAPES]
    expressions += [f"{z} {c} {s}" for z in SIZES for c in list(NAMED_COLORS)[:3] for s in SHAPES]
    expressions += [f"{c} {s} on the left" for c in list(NAMED_COLORS)[:4] for s in SHAPES]
    expressions += [f"{c} {s} on the right" for c in list(NAMED_COLORS)[4:] for s in SHAPES]
    texts = [scene.caption for scene in scenes]
    rng = np.random.default_rng(np.random.SeedSequence([0xB9E, seed]))
    for variant in corpus.variants:
        slots = placeholders_of(variant.text)
        if not slots:
            texts.append(variant.text)
            continue
        for expr in [expressions[int(i)] for i in rng.integers(len(expressions), size=6)]:
            bindings = {}
            if "object" in slots:
                bindings["object"] = expr
            if "color" in slots:
                bindings["color"] = list(NAMED_COLORS)[int(rng.integers(len(NAMED_COLORS)))]
            texts.append(render(variant.text, bindings))
    bpe = bpe_train(texts, vocab_size=layout.n_text) if layout.n_text >= 256 else BpeModel()
    return Codecs(layout=layout, codebook=codebook, bpe=bpe)


@dataclass
class Sample:
    image: np.ndarray  # (32, 32, 3) uint8 input image
    task: str
    instruction: str
    target_tokens: list[int]  # global ids, BOS ... EOS
    truth: object  # label map | bool mask | Box | caption string
    meta: dict = field(default_factory=dict)


def _frame(layout: VocabLayout, kind: str, local_ids) -> list[int]:
    body = [to_global(layout, kind, int(i)) for i in local_ids]
    return [BOS] + body + [EOS]


def res_target_image(mask: np.ndarray, color_name: str) -> np.ndarray:
    img = np.zeros((*mask.shape, 3), dtype=np.uint8)
    img[mask] = NAMED_COLORS[color_name]
    return img


def build_target(
    task: str,
    scene: Scene,
    rng: np.random.Generator,
    codecs: Codecs,
    corpus: InstructionCorpus,
    split: str = "train",
) -> Sample:
    """Draw an instruction and build the (instruction, target tokens, truth) triple."""
    layout = codecs.layout
    variant = sample_instruction(corpus, task, rng, split)
    if task == "semseg":
        target_img = encode_labels(scene.label_map, codecs.palette)
        grid = vq_encode(target_img, codecs.codebook)
        return Sample(
            image=scene.image,
            task=task,
            instruction=variant.text,
            target_tokens=_frame(layout, "visual", grid.reshape(-1)),
            truth=scene.label_map,
            meta={"grid_shape": grid.shape},
        )
    if task == "res":
        idx = int(rng.integers(len(scene.objects)))
        color_name = list(NAMED_COLORS)[int(rng.integers(len(NAMED_COLORS)))]
        expr = referring_expression(scene, idx, rng)
        instruction = render(variant.text, {"object": expr, "color": color_name})
        mask = scene.masks[idx]
        grid = vq_encode(res_target_image(mask, color_name), codecs.codebook)
        return Sample(
            image=scene.image,
            task=task,
            instruction=instruction,
            target_tokens=_frame(layout, "visual", grid.reshape(-1)),
            truth=mask,
            meta={"grid_shape": grid.shape, "color": color_name, "object_index": idx},
        )
    if task == "rec":
        idx = int(rng.integers(len(scene.objects)))
        expr = referring_expression(scene, idx, rng)
        instruction = render(variant.text, {"object": expr})
        box = scene.boxes[idx]
        return Sample(
            image=scene.image,
            task=task,
            instruction=instruction,
            target_tokens=_frame(layout, "positional", box_encode(box, codecs.bins)),
            truth=box,
            meta={"object_index": idx},
        )
    if task == "caption":
        ids = bpe_encode(codecs.bpe, scene.caption)
        if codecs.bpe.vocab_size > layout.n_text:
            raise DataError(
                f"BPE vocab {codecs.bpe.vocab_size} exceeds layout n_text {layout.n_text}"
            )
        return Sample(
            image=scene.image,
            task=task,
            instruction=variant.text,
            target_tokens=_frame(layout, "text", ids),
            truth=scene.caption,
        )
    raise DataError(f"unknown task {task!r}")


# --- scene manifest (gen-data output, pre-tokenization) --------------------


def write_scene_records(
    n: int,
    seed: int,
    out_dir: str | Path,
    corpus: InstructionCorpus,
    ratios: TaskRatios,
    split: str = "train",
    max_objects: int = 3,
) -> Path:
    """Generate n scenes with task assignments and write scenes.jsonl + images.

    Dense target images (palette-coded label map for semseg, color-on-black
    mask for res) are rendered here so the codec fit can consume them; token
    sequences are not built yet.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    palette = palette_for_classes(NUM_CLASSES)
    lines = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        scene = generate_scene(int(rng.integers(2**32)), max_objects=max_objects)
        task = sample_task(rng, ratios)
        rec_id = f"{split}-{i:06d}"
        write_ppm(img_dir / f"{rec_id}.ppm", scene.image)
        record: dict = {
            "id": rec_id,
            "image": f"images/{rec_id}.ppm",
            "task": task,
            "scene_seed": scene.seed,
        }
        variant = sample_instruction(corpus, task, rng, split="train")
        if task == "semseg":
            record["instruction"] = variant.text
            target_img = encode_labels(scene.label_map, palette)
            write_ppm(img_dir / f"{rec_id}_target.ppm", target_img)
            write_pgm(img_dir / f"{rec_id}_labels.pgm", scene.label_map.astype(np.uint8))
            record["target_image"] = f"images/{rec_id}_target.ppm"
            record["truth"] = {"label_map": f"images/{rec_id}_labels.pgm"}
        elif task == "res":
            idx = int(rng.integers(len(scene.objects)))
            color = list(NAMED_COLORS)[int(rng.integers(len(NAMED_COLORS)))]
            expr = referring_expression(scene, idx, rng)
            record["instruction"] = render(variant.text, {"object": expr, "color": color})
            mask = scene.masks[idx]
            write_ppm(img_dir / f"{rec_id}_target.ppm", res_target_image(mask, color))
            write_pgm(img_dir / f"{rec_id}_mask.pgm", mask.astype(np.uint8) * 255)
            record["target_image"] = f"images/{rec_id}_target.ppm"
            record["truth"] = {"mask": f"images/{rec_id}_mask.pgm", "color": color}
        elif task == "rec":
            idx = int(rng.integers(len(scene.objects)))
            expr = referring_expression(scene, idx, rng)
            record["instruction"] = render(variant.text, {"object": expr})
            record["truth"] = {"box": list(scene.boxes[idx].coords())}
        else:
            record["instruction"] = variant.text
            record["truth"] = {"caption": scene.caption}
        lines.append(json.dumps(record, sort_keys=True))
    path = out_dir / "scenes.jsonl"
    path.write_text("\n".join(lines) + "\n", "utf-8")
    return path


def read_scene_records(path: str | Path) -> list[dict]:
    records = []
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{lineno}: malformed JSON ({e})") from None
        for key in ("id", "image", "task", "instruction", "truth"):
            if key not in rec:
                raise DataError(f"{path}:{lineno}: missing key {key!r}")
        if not (base / rec["image"]).exists():
            raise DataError(f"{path}:{lineno}: image file {rec['image']!r} not found")
        records.append(rec)
    return records


# --- tokenized dataset manifest ([OP] write_manifest / read_manifest) ------


def tokenize_scene_record(record: dict, base: Path, codecs: Codecs) -> Sample:
    """Build the Sample (with target tokens) for one scene-manifest record."""
    image = read_ppm(base / record["image"])
    task = record["task"]
    layout = codecs.layout
    truth = record["truth"]
    if task == "semseg":
        label_map = read_pgm(base / truth["label_map"]).astype(np.int64)
        target_img = read_ppm(base / record["target_image"])
        grid = vq_encode(target_img, codecs.codebook)
        return Sample(image, task, record["instruction"],
                      _frame(layout, "visual", grid.reshape(-1)), label_map,
                      meta={"grid_shape": grid.shape, "id": record["id"]})
    if task == "res":
        mask = read_pgm(base / truth["mask"]) > 127
        target_img = read_ppm(base / record["target_image"])
        grid = vq_encode(target_img, codecs.codebook)
        return Sample(image, task, record["instruction"],
                      _frame(layout, "visual", grid.reshape(-1)), mask,
                      meta={"grid_shape": grid.shape, "color": truth["color"],
                            "id": record["id"]})
    if task == "rec":
        box = Box(*truth["box"])
        return Sample(image, task, record["instruction"],
                      _frame(layout, "positional", box_encode(box, codecs.bins)), box,
                      meta={"id": record["id"]})
    if task == "caption":
        ids = bpe_encode(codecs.bpe, truth["caption"])
        return Sample(image, task, record["instruction"],
                      _frame(layout, "text", ids), truth["caption"],
                      meta={"id": record["id"]})
    raise DataError(f"unknown task {task!r}")


def write_manifest(samples: list[Sample], path: str | Path, layout: VocabLayout) -> Path:
    """Write tokenized records as JSON lines; images referenced by relative path.

    Sample.meta["id"] names each record; images (and truth artifacts) are
    written next to the manifest under images/ unless the sample already
    carries paths in meta.
    """
    path = Path(path)
    base = path.parent
    img_dir = base / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        rec_id = s.meta.get("id", f"rec-{i:06d}")
        image_rel = s.meta.get("image_path")
        if image_rel is None:
            image_rel = f"images/{rec_id}.ppm"
            write_ppm(base / image_rel, s.image)
        kind = TASK_TOKEN_KIND[s.task]
        start, _ = layout.kind_range(kind)
        local_ids = [t - start for t in s.target_tokens[1:-1]]
        record: dict = {
            "id": rec_id,
            "image": image_rel,
            "task": s.task,
            "instruction": s.instruction,
            "target": {"kind": kind, "payload": local_ids},
        }
        if s.task == "semseg":
            rel = f"images/{rec_id}_labels.pgm"
            write_pgm(base / rel, np.asarray(s.truth).astype(np.uint8))
            record["truth"] = {"label_map": rel}
        elif s.task == "res":
            rel = f"images/{rec_id}_mask.pgm"
            write_pgm(base / rel, np.asarray(s.truth).astype(np.uint8) * 255)
            record["truth"] = {"mask": rel, "color": s.meta["color"]}
        elif s.task == "rec":
            record["truth"] = {"box": list(s.truth.coords())}
        else:
            record["truth"] = {"caption": s.truth}
        lines.append(json.dumps(record, sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")
    return path


def read_manifest(path: str | Path, codecs: Codecs) -> list[Sample]:
    """Read tokenized records, validating every token against the layout."""
    layout = codecs.layout
    base = Path(path).parent
    samples = []
    text = Path(path).read_text("utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{lineno}: malformed JSON ({e})") from None
        try:
            task = rec["task"]
            kind = rec["target"]["kind"]
            payload = rec["target"]["payload"]
            instruction = rec["instruction"]
            image_rel = rec["image"]
            truth = rec["truth"]
        except (KeyError, TypeError) as e:
            raise DataError(f"{path}:{lineno}: missing field ({e})") from None
        if task not in TASK_TOKEN_KIND:
            raise DataError(f"{path}:{lineno}: unknown task {task!r}")
        if kind != TASK_TOKEN_KIND[task]:
            raise DataError(
                f"{path}:{lineno}: kind {kind!r} illegal for task {task!r}"
            )
        n = layout.count(kind)
        bad = [t for t in payload if not 0 <= int(t) < n]
        if bad:
            raise DataError(
                f"{path}:{lineno}: {kind} id {bad[0]} outside [0, {n})"
            )
        if kind == "visual" and len(payload) != 64:
            raise DataError(
                f"{path}:{lineno}: dense target must have 64 tokens, got {len(payload)}"
            )
        if kind == "positional" and len(payload) != 4:
            raise DataError(
                f"{path}:{lineno}: box target must have 4 tokens, got {len(payload)}"
            )
        img_path = base / image_rel
        if not img_path.exists():
            raise DataError(f"{path}:{lineno}: image file {image_rel!r} not found")
        image = read_ppm(img_path)
        meta: dict = {"id": rec["id"], "image_path": image_rel}
        truth_obj: object
        if task == "semseg":
            truth_obj = read_pgm(base / truth["label_map"]).astype(np.int64)
            meta["grid_shape"] = (8, 8)
        elif task == "res":
            truth_obj = read_pgm(base / truth["mask"]) > 127
            meta["grid_shape"] = (8, 8)
            meta["color"] = truth["color"]
        elif task == "rec":
            truth_obj = Box(*truth["box"])
        else:
            truth_obj = truth["caption"]
        samples.append(
            Sample(image, task, instruction, _frame(layout, kind, payload), truth_obj, meta)
        )
    return samples
