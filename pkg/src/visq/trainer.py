"""Multi-task training loop.

Each step draws a task under the configured ratios, assembles a homogeneous
batch for it (one task per batch keeps target lengths uniform; PAD-masking
still supports ragged captions), and applies one Adam update with global
gradient-norm clipping under a linear-warmup/cosine-decay schedule. The
whole loop is a deterministic function of (config, seed): a single master
generator drives task draws, sample picks, and instruction draws in
sequence.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bpe import bpe_encode
from .data import Codecs, Sample, TaskRatios, build_target, sample_task
from .instructions import InstructionCorpus
from .model import GradientError, Parameters, compute_gradients, forward, sequence_loss
from .scenes import Scene
from .vocab import PAD

TASKS_ALL = ("semseg", "res", "rec", "caption")
TASKS_IMAGE_ONLY = ("semseg", "res")


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    lr: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    seed: int = 0
    ratios: TaskRatios = field(default_factory=TaskRatios)
    freeze_instruction_encoder: bool = True
    freeze_visual_encoder: bool = False
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    output_mode: str = "all"  # "all" | "image-only" (drops rec and caption)
    instruction_split: str = "train"

    def validate(self) -> None:
        if self.steps <= 0:
            raise TrainError(f"steps must be > 0, got {self.steps}")
        if self.lr < 0:
            raise TrainError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise TrainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.output_mode not in ("all", "image-only"):
            raise TrainError(f"unknown output_mode {self.output_mode!r}")

    def active_ratios(self) -> TaskRatios:
        if self.output_mode == "image-only":
            return TaskRatios(semseg=self.ratios.semseg, res=self.ratios.res, rec=0.0, caption=0.0)
        return self.ratios


@dataclass
class Batch:
    task: str
    images: np.ndarray
    instr_ids: np.ndarray
    instr_lens: np.ndarray
    input_tokens: np.ndarray
    target_tokens: np.ndarray
    pad_mask: np.ndarray


def make_batch(samples: list[Sample], codecs: Codecs) -> Batch:
    """Pad instructions and targets to batch length; PAD is masked in the loss."""
    task = samples[0].task
    images = np.stack([s.image for s in samples])
    instr = [bpe_encode(codecs.bpe, s.instruction) for s in samples]
    t_i = max(len(ids) for ids in instr)
    instr_ids = np.zeros((len(samples), t_i), dtype=np.int64)
    instr_lens = np.array([len(ids) for ids in instr], dtype=np.int64)
    for i, ids in enumerate(instr):
        instr_ids[i, : len(ids)] = ids
    t_out = max(len(s.target_tokens) - 1 for s in samples)
    inputs = np.full((len(samples), t_out), PAD, dtype=np.int64)
    targets = np.full((len(samples), t_out), PAD, dtype=np.int64)
    for i, s in enumerate(samples):
        toks = s.target_tokens
        inputs[i, : len(toks) - 1] = toks[:-1]
        targets[i, : len(toks) - 1] = toks[1:]
    return Batch(
        task=task,
        images=images,
        instr_ids=instr_ids,
        instr_lens=instr_lens,
        input_tokens=inputs,
        target_tokens=targets,
        pad_mask=(targets != PAD).astype(np.float32),
    )


# --- optimizer ---------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-8


class AdamState:
    def __init__(self, params: Parameters):
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.step = 0


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup to config.lr, then cosine decay to zero at config.steps."""
    if config.warmup_steps > 0 and step < config.warmup_steps:
        return config.lr * (step + 1) / config.warmup_steps
    span = max(config.steps - config.warmup_steps, 1)
    progress = min((step - config.warmup_steps) / span, 1.0)
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def adam_update(
    params: Parameters, grads: dict[str, np.ndarray], state: AdamState, lr: float,
    weight_decay: float = 0.0,
) -> None:
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for name in params.names():
        tensor = params[name]
        if not tensor.requires_grad:
            continue
        g = grads[name]
        if weight_decay > 0.0 and tensor.data.ndim >= 2:
            tensor.data -= np.float32(lr * weight_decay) * tensor.data
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        tensor.data -= np.float32(lr) * update.astype(np.float32)


def train_step(
    params: Parameters,
    batch: Batch,
    state: AdamState,
    config: TrainConfig,
    step: int,
) -> float:
    dropout_rng = None
    if params.config.dropout > 0.0:
        dropout_rng = np.random.default_rng(np.random.SeedSequence([0xD80, config.seed, step]))
    logits = forward(params, batch.images, batch.instr_ids, batch.instr_lens,
                     batch.input_tokens, dropout_rng=dropout_rng)
    loss = sequence_loss(logits, batch.target_tokens, batch.pad_mask)
    loss_value = float(loss.data)
    if not math.isfinite(loss_value):
        raise TrainError(f"non-finite loss {loss_value} at step {step} (task {batch.task})")
    grads = compute_gradients(loss, params)
    trainable = {n: grads[n] for n in params.trainable_names()}
    clip_gradients(trainable, config.grad_clip)
    adam_update(params, trainable, state, lr_at(step, config), config.weight_decay)
    return loss_value


# --- sample sources ----------------------------------------------------------


class ScenePoolSource:
    """Draws scenes from a fixed pool and builds fresh targets per draw.

    Instructions are re-sampled from the configured split on every draw, so
    the model sees the whole paraphrase corpus over training.
    """

    def __init__(
        self,
        scenes: list[Scene],
        codecs: Codecs,
        corpus: InstructionCorpus,
        split: str = "train",
    ):
        if not scenes:
            raise TrainError("empty scene pool")
        self.scenes = scenes
        self.codecs = codecs
        self.corpus = corpus
        self.split = split

    def draw(self, task: str, n: int, rng: np.random.Generator) -> list[Sample]:
        picks = rng.integers(len(self.scenes), size=n)
        return [
            build_target(task, self.scenes[int(i)], rng, self.codecs, self.corpus, self.split)
            for i in picks
        ]


class ManifestSource:
    """Serves pre-tokenized manifest records grouped by task."""

    def __init__(self, samples: list[Sample]):
        self.by_task: dict[str, list[Sample]] = {}
        for s in samples:
            self.by_task.setdefault(s.task, []).append(s)

    def draw(self, task: str, n: int, rng: np.random.Generator) -> list[Sample]:
        pool = self.by_task.get(task)
        if not pool:
            raise TrainError(
                f"manifest has no {task!r} records; regenerate data or use a scene pool"
            )
        picks = rng.integers(len(pool), size=n)
        return [pool[int(i)] for i in picks]


@dataclass
class TrainResult:
    params: Parameters
    state: AdamState
    log_rows: list[dict]
    task_counts: dict[str, int]


def train_loop(
    params: Parameters,
    source,
    codecs: Codecs,
    config: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_fn=None,
) -> TrainResult:
    """Run config.steps optimizer steps; returns params, log and task counts.

    checkpoint_fn(step, params), when given, is invoked every
    config.checkpoint_every steps and once after the final step.
    """
    config.validate()
    params.set_frozen(config.freeze_instruction_encoder, config.freeze_visual_encoder)
    state = AdamState(params)
    rng = np.random.default_rng(np.random.SeedSequence([0x7EA1, config.seed]))
    ratios = config.active_ratios()
    last_loss: dict[str, float] = {}
    task_counts: dict[str, int] = {t: 0 for t in TASKS_ALL}
    rows: list[dict] = []
    for step in range(config.steps):
        task = sample_task(rng, ratios)
        task_counts[task] += 1
        samples = source.draw(task, config.batch_size, rng)
        batch = make_batch(samples, codecs)
        loss = train_step(params, batch, state, config, step)
        last_loss[task] = loss
        rows.append(
            {
                "step": step,
                "total_loss": loss,
                **{f"{t}_loss": last_loss.get(t, float("nan")) for t in TASKS_ALL},
            }
        )
        if checkpoint_fn and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            checkpoint_fn(step + 1, params)
    if checkpoint_fn:
        checkpoint_fn(config.steps, params)
    if log_path is not None:
        write_metrics_csv(rows, log_path)
    return TrainResult(params=params, state=state, log_rows=rows, task_counts=task_counts)


def overfit(
    params: Parameters,
    samples: list[Sample],
    codecs: Codecs,
    max_steps: int,
    lr: float = 1e-3,
    warmup_steps: int = 50,
    stop_loss: float = 0.04,
    check_every: int = 25,
    seed: int = 0,
    verify_fn=None,
) -> tuple[int, float]:
    """Drive a fixed sample set to near-zero loss with round-robin task batches.

    Returns (steps used, final mean loss), where the mean is over the
    per-task batches. Stops early once the mean drops below stop_loss and
    verify_fn (e.g. a greedy-decode exactness check), when given, passes.
    """
    by_task: dict[str, list[Sample]] = {}
    for s in samples:
        by_task.setdefault(s.task, []).append(s)
    batches = [make_batch(group, codecs) for group in by_task.values()]
    config = TrainConfig(steps=max_steps, lr=lr, warmup_steps=warmup_steps, seed=seed,
                         batch_size=max(len(g) for g in by_task.values()))
    params.set_frozen(config.freeze_instruction_encoder, config.freeze_visual_encoder)
    state = AdamState(params)

    def mean_loss() -> float:
        total = 0.0
        for b in batches:
            logits = forward(params, b.images, b.instr_ids, b.instr_lens, b.input_tokens)
            total += float(sequence_loss(logits, b.target_tokens, b.pad_mask).data)
        return total / len(batches)

    for step in range(max_steps):
        batch = batches[step % len(batches)]
        train_step(params, batch, state, config, step)
        if (step + 1) % check_every == 0 and mean_loss() < stop_loss:
            if verify_fn is None or verify_fn(params):
                return step + 1, mean_loss()
    return max_steps, mean_loss()


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    fields = ["step", "total_loss"] + [f"{t}_loss" for t in TASKS_ALL]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fields})


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)
