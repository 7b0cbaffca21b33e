"""Decoding and sampling-based prediction.

Dense tasks and boxes are decoded by temperature sampling: N sequences are
drawn per input, then reduced -- per-pixel majority vote for semantic
segmentation, highest mean mutual IoU for referring masks and boxes.
Captions use length-normalized beam search instead. The per-token sampling
probabilities of a dense decode double as a spatial confidence map.

PAD and BOS are always unsampleable. With vocab_mask on, sampling is further
restricted to the task's legal token kind and dense/box outputs run to their
structural length; with it off (the default) the model may wander into an
illegal kind, in which case that sample is skipped and counted.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box, box_decode, box_iou
from .bpe import BpeModel, bpe_decode, bpe_encode
from .data import Codecs
from .instructions import NAMED_COLORS, InstructionCorpus, placeholders_of
from .model import CachedDecoder, ModelError, Parameters
from .palette import decode_labels
from .vocab import BOS, EOS, PAD, VocabLayout, to_local
from .vq import vq_decode

logger = logging.getLogger("visq")

TASK_KIND = {"semseg": "visual", "res": "visual", "rec": "positional", "caption": "text"}
FIXED_LEN = {"semseg": 64, "res": 64, "rec": 4}


class DecodeError(ValueError):
    pass


@dataclass
class DecodeConfig:
    temperature: float = 0.9
    num_samples: int = 10
    beam_size: int = 6
    vocab_mask: bool = False
    max_caption_len: int = 24
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.temperature <= 2.0:
            raise DecodeError(f"temperature {self.temperature} outside (0, 2]")
        if self.num_samples < 1:
            raise DecodeError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.beam_size < 1:
            raise DecodeError(f"beam_size must be >= 1, got {self.beam_size}")


@dataclass
class DecodeResult:
    tokens: list[int]  # emitted global ids (EOS-terminated or length-capped)
    probs: list[float]  # sampling probability of each emitted token
    grid_shape: tuple[int, int] | None = None  # set for dense tasks

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.probs):
            raise DecodeError("tokens and probs lengths differ")


def _legal_token_mask(layout: VocabLayout, task: str, vocab_mask: bool) -> np.ndarray:
    """Additive -inf mask over the vocabulary; PAD and BOS always excluded."""
    mask = np.zeros(layout.total, dtype=np.float32)
    if vocab_mask:
        mask[:] = -np.inf
        start, end = layout.kind_range(TASK_KIND[task])
        mask[start:end] = 0.0
        if task == "caption":
            mask[EOS] = 0.0  # captions keep their stop token
    mask[PAD] = -np.inf
    mask[BOS] = -np.inf
    return mask


def sample_sequence(
    decoder: CachedDecoder,
    layout: VocabLayout,
    task: str,
    config: DecodeConfig,
    rng: np.random.Generator,
    greedy: bool = False,
) -> DecodeResult:
    """Draw one output sequence for a prepared prefix decoder.

    The decoder must be fresh (no output steps taken); fork() one per sample.
    """
    config.validate()
    mask = _legal_token_mask(layout, task, config.vocab_mask)
    fixed = FIXED_LEN.get(task)
    max_len = fixed if fixed is not None else config.max_caption_len
    # EOS can stop a fixed-length task only in free-vocabulary mode
    honor_eos = task == "caption" or not config.vocab_mask
    tokens: list[int] = []
    probs: list[float] = []
    prev = BOS
    for _ in range(max_len):
        logits = decoder.step(prev).astype(np.float64)
        z = logits / config.temperature + mask
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        tok = int(np.argmax(p)) if greedy else int(rng.choice(layout.total, p=p))
        tokens.append(tok)
        probs.append(float(p[tok]))
        if honor_eos and tok == EOS:
            break
        prev = tok
    grid = None
    if task in ("semseg", "res") and len(tokens) == 64 and all(
        to_local(layout, t)[0] == "visual" for t in tokens
    ):
        grid = (8, 8)
    return DecodeResult(tokens=tokens, probs=probs, grid_shape=grid)


def greedy_decode(
    decoder: CachedDecoder, layout: VocabLayout, task: str, config: DecodeConfig | None = None
) -> DecodeResult:
    """Temperature-zero limit of sample_sequence (argmax every step)."""
    cfg = config or DecodeConfig()
    return sample_sequence(decoder, layout, task, cfg, np.random.default_rng(0), greedy=True)


def greedy_matches_target(params: Parameters, sample, codecs: Codecs) -> bool:
    """Whether free-vocabulary greedy decoding reproduces a sample's target."""
    decoder = CachedDecoder(params, sample.image, bpe_encode(codecs.bpe, sample.instruction))
    result = greedy_decode(decoder, codecs.layout, sample.task, DecodeConfig(vocab_mask=False))
    tokens = result.tokens
    if tokens and tokens[-1] == EOS:
        tokens = tokens[:-1]
    return tokens == sample.target_tokens[1:-1]


def beam_search(
    decoder: CachedDecoder,
    layout: VocabLayout,
    beam_size: int,
    max_len: int = 24,
) -> list[int]:
    """Length-normalized beam over text tokens plus EOS; deterministic.

    Returns emitted global ids, EOS-terminated unless length-capped. Ties in
    candidate ranking break to the lower token id.
    """
    if beam_size < 1:
        raise DecodeError(f"beam_size must be >= 1, got {beam_size}")
    start, end = layout.kind_range("text")
    allowed = np.concatenate([[EOS], np.arange(start, end)])

    def log_probs(logits: np.ndarray) -> np.ndarray:
        z = logits.astype(np.float64)[allowed]
        z -= z.max()
        return z - np.log(np.exp(z).sum())

    first = decoder.fork()
    beams = [([], 0.0, first, log_probs(first.step(BOS)))]  # tokens, cum lp, dec, next lps
    finished: list[tuple[float, list[int]]] = []  # (normalized score, tokens)
    slots = beam_size
    for _ in range(max_len):
        step_slots = slots
        candidates = []  # (new_cum, token, beam_index)
        for bi, (toks, cum, _, lps) in enumerate(beams):
            order = np.argsort(-lps, kind="stable")[:step_slots]
            for oi in order:
                candidates.append((cum + float(lps[oi]), int(allowed[oi]), bi))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_beams = []
        for cum, tok, bi in candidates[:step_slots]:
            toks, _, dec, _ = beams[bi]
            new_toks = toks + [tok]
            if tok == EOS:
                # a finished hypothesis retires its slot (makes beam 1 == greedy)
                finished.append((cum / len(new_toks), new_toks))
                slots -= 1
                continue
            child = dec.fork()
            next_beams.append((new_toks, cum, child, log_probs(child.step(tok))))
        beams = next_beams
        if not beams or slots <= 0:
            break
    for toks, cum, _, _ in beams:  # length-capped leftovers compete too
        if toks:
            finished.append((cum / len(toks), toks))
    if not finished:
        return []
    finished.sort(key=lambda f: (-f[0], f[1]))
    return finished[0][1]


# --- aggregation ------------------------------------------------------------


def result_grid(result: DecodeResult, layout: VocabLayout) -> np.ndarray:
    """Local visual ids of a dense result as its 2D grid."""
    if result.grid_shape is None:
        raise DecodeError("result is not dense")
    locals_ = [to_local(layout, t)[1] for t in result.tokens]
    return np.array(locals_, dtype=np.int64).reshape(result.grid_shape)


def aggregate_segmentation(
    results: list[DecodeResult], codecs: Codecs
) -> np.ndarray:
    """Per-pixel majority vote over N decoded label maps; ties to lowest class."""
    if not results:
        raise DecodeError("no results to aggregate")
    shapes = {r.grid_shape for r in results}
    if len(shapes) != 1 or None in shapes:
        raise DecodeError(f"inconsistent grid shapes {shapes}")
    palette = codecs.palette
    maps = np.stack(
        [
            decode_labels(vq_decode(result_grid(r, codecs.layout), codecs.codebook), palette)
            for r in results
        ]
    )
    k = len(palette)
    counts = np.zeros((k, *maps.shape[1:]), dtype=np.int64)
    for c in range(k):
        counts[c] = (maps == c).sum(axis=0)
    return np.argmax(counts, axis=0)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Binary mask IoU; two empty masks count as IoU 1."""
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(inter) / float(union)


def _mutual_iou_argmax(n: int, iou) -> int:
    if n == 1:
        return 0
    means = []
    for i in range(n):
        vals = [iou(i, j) for j in range(n) if j != i]
        means.append(sum(vals) / len(vals))
    return int(np.argmax(means))


def select_mask(masks: list[np.ndarray]) -> np.ndarray:
    """Mask with the highest mean IoU against the other samples."""
    if not masks:
        raise DecodeError("no masks to select from")
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise DecodeError(f"mask shapes differ: {shapes}")
    idx = _mutual_iou_argmax(len(masks), lambda i, j: mask_iou(masks[i], masks[j]))
    return masks[idx]


def select_box(boxes: list[Box]) -> Box:
    """Box with the highest mean rectangle IoU against the other samples."""
    if not boxes:
        raise DecodeError("no boxes to select from")
    idx = _mutual_iou_argmax(len(boxes), lambda i, j: box_iou(boxes[i], boxes[j]))
    return boxes[idx]


def confidence_map(result: DecodeResult, upscale: int) -> np.ndarray:
    """Token probabilities arranged on the output grid, NN-upsampled to pixels."""
    if result.grid_shape is None:
        raise DecodeError("confidence map requires a dense result")
    grid = np.array(result.probs, dtype=np.float64).reshape(result.grid_shape)
    return np.kron(grid, np.ones((upscale, upscale)))


# --- end-to-end task runner ---------------------------------------------------


@dataclass
class TaskOutput:
    task: str
    label_map: np.ndarray | None = None
    mask: np.ndarray | None = None
    box: Box | None = None
    caption: str | None = None
    confidence: np.ndarray | None = None
    skipped: int = 0  # samples dropped for illegal token kinds / early stops
    results: list[DecodeResult] = field(default_factory=list)


def res_mask_from_grid(
    grid: np.ndarray, codecs: Codecs, color_name: str
) -> np.ndarray:
    """Threshold a decoded referring target against {instructed color, black}."""
    img = vq_decode(grid, codecs.codebook).astype(np.int64)
    color = np.array(NAMED_COLORS[color_name], dtype=np.int64)
    d_color = ((img - color) ** 2).sum(axis=-1)
    d_black = (img**2).sum(axis=-1)
    # ties go to background, keeping recovered masks conservative
    return d_color < d_black


def extract_res_color(instruction: str, corpus: InstructionCorpus | None = None) -> str:
    """Find the fill color named by a referring-segmentation instruction.

    Tries to match the instruction against known corpus variants first; falls
    back to the first color word not immediately followed by a shape word
    (which would be part of the object description).
    """
    import re

    if corpus is not None:
        color_alt = "|".join(NAMED_COLORS)
        for variant in corpus.variants_for("res", "all"):
            pattern = re.escape(variant.text)
            pattern = pattern.replace(re.escape("{object}"), ".+?")
            pattern = pattern.replace(re.escape("{color}"), f"(?P<color>{color_alt})")
            m = re.fullmatch(pattern, instruction)
            if m:
                return m.group("color")
    words = re.findall(r"[a-zA-Z]+", instruction.lower())
    shapes = {"circle", "square", "triangle"}
    for i, w in enumerate(words):
        if w in NAMED_COLORS and (i + 1 >= len(words) or words[i + 1] not in shapes):
            return w
    raise DecodeError(f"no fill color found in instruction {instruction!r}")


def _decode_box(result: DecodeResult, layout: VocabLayout, bins: int) -> Box | None:
    if len(result.tokens) != 4:
        return None
    kinds_locals = [to_local(layout, t) for t in result.tokens]
    if any(k != "positional" for k, _ in kinds_locals):
        return None
    box, _ = box_decode([loc for _, loc in kinds_locals], bins)
    return box


def run_task(
    params: Parameters,
    image: np.ndarray,
    instruction: str,
    task: str,
    codecs: Codecs,
    config: DecodeConfig | None = None,
    res_color: str | None = None,
    corpus: InstructionCorpus | None = None,
) -> TaskOutput:
    """Dispatch one (image, instruction, task) to its decoded output."""
    cfg = config or DecodeConfig()
    cfg.validate()
    if task not in TASK_KIND:
        raise DecodeError(f"unknown task {task!r}")
    layout = codecs.layout
    instr_ids = bpe_encode(codecs.bpe, instruction)
    base = CachedDecoder(params, image, instr_ids)
    rng = np.random.default_rng(np.random.SeedSequence([0xDECD, cfg.seed]))

    if task == "caption":
        tokens = beam_search(base, layout, cfg.beam_size, cfg.max_caption_len)
        text_ids = [to_local(layout, t)[1] for t in tokens if t != EOS]
        return TaskOutput(task=task, caption=bpe_decode(codecs.bpe, text_ids))

    results = [
        sample_sequence(base.fork(), layout, task, cfg, rng) for _ in range(cfg.num_samples)
    ]

    if task in ("semseg", "res"):
        dense = [r for r in results if r.grid_shape is not None]
        skipped = len(results) - len(dense)
        if skipped:
            logger.warning("%s: skipped %d/%d samples with illegal tokens", task, skipped, len(results))
        if not dense:
            return TaskOutput(task=task, skipped=skipped)
        conf = confidence_map(dense[0], codecs.codebook.patch_size)
        if task == "semseg":
            label_map = aggregate_segmentation(dense, codecs)
            return TaskOutput(task=task, label_map=label_map, confidence=conf,
                              skipped=skipped, results=dense)
        color = res_color or extract_res_color(instruction, corpus)
        masks = [res_mask_from_grid(result_grid(r, layout), codecs, color) for r in dense]
        return TaskOutput(task=task, mask=select_mask(masks), confidence=conf,
                          skipped=skipped, results=dense)

    boxes = []
    kept = []
    for r in results:
        box = _decode_box(r, layout, codecs.bins)
        if box is not None:
            boxes.append(box)
            kept.append(r)
    skipped = len(results) - len(boxes)
    if skipped:
        logger.warning("rec: skipped %d/%d samples with illegal tokens", skipped, len(results))
    if not boxes:
        return TaskOutput(task=task, skipped=skipped)
    return TaskOutput(task=task, box=select_box(boxes), skipped=skipped, results=kept)
