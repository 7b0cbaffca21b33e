"""Instruction templates, paraphrase corpus, and the optional expansion client.

Each task owns one canonical template with zero or more placeholders
({object}, {color}); the bundled corpus adds paraphrase variants partitioned
into a train split (what the model sees) and a heldout split (novel phrasings
used to probe generalization). An external paraphrase service can grow the
train split offline through a small JSON-over-HTTP client.
"""
from __future__ import annotations

import json
import logging
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

logger = logging.getLogger("visq")

TASKS = ("semseg", "res", "rec", "caption")

# placeholder sets each task's instructions must carry, exactly
TASK_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "semseg": frozenset(),
    "res": frozenset({"object", "color"}),
    "rec": frozenset({"object"}),
    "caption": frozenset(),
}

# named fill colors offered for {color}; the RES target must be renderable
NAMED_COLORS: dict[str, tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "magenta": (255, 0, 255),
    "cyan": (0, 255, 255),
    "white": (255, 255, 255),
}

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


class InstructionError(ValueError):
    pass


class ExpansionError(RuntimeError):
    pass


def placeholders_of(text: str) -> frozenset[str]:
    return frozenset(_PLACEHOLDER_RE.findall(text))


@dataclass(frozen=True)
class InstructionTemplate:
    id: str
    task: str
    text: str

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise InstructionError(f"unknown task {self.task!r}")
        if placeholders_of(self.text) != TASK_PLACEHOLDERS[self.task]:
            raise InstructionError(
                f"template {self.id!r} placeholders {set(placeholders_of(self.text))} "
                f"do not match task {self.task!r}"
            )


@dataclass(frozen=True)
class Variant:
    template_id: str
    text: str
    split: str  # train | heldout


@dataclass
class InstructionCorpus:
    templates: dict[str, InstructionTemplate] = field(default_factory=dict)
    variants: list[Variant] = field(default_factory=list)

    def validate(self) -> None:
        """Placeholder preservation and train/heldout disjointness per template."""
        for v in self.variants:
            tpl = self.templates.get(v.template_id)
            if tpl is None:
                raise InstructionError(f"variant references unknown template {v.template_id!r}")
            if v.split not in ("train", "heldout"):
                raise InstructionError(f"bad split {v.split!r}")
            if placeholders_of(v.text) != placeholders_of(tpl.text):
                raise InstructionError(
                    f"variant {v.text!r} placeholder set differs from template {tpl.id!r}"
                )
        for tpl_id in self.templates:
            train = {v.text for v in self.variants if v.template_id == tpl_id and v.split == "train"}
            held = {v.text for v in self.variants if v.template_id == tpl_id and v.split == "heldout"}
            if train & held:
                raise InstructionError(f"train/heldout overlap for {tpl_id!r}: {train & held}")

    def template_for_task(self, task: str) -> InstructionTemplate:
        for tpl in self.templates.values():
            if tpl.task == task:
                return tpl
        raise InstructionError(f"no template for task {task!r}")

    def variants_for(self, task: str, split: str = "all") -> list[Variant]:
        if split not in ("train", "heldout", "all"):
            raise InstructionError(f"bad split {split!r}")
        out = []
        for v in self.variants:
            tpl = self.templates[v.template_id]
            if tpl.task == task and (split == "all" or v.split == split):
                out.append(v)
        return out

    def template_only(self) -> "InstructionCorpus":
        """Corpus restricted to exactly the canonical template text per task."""
        variants = [
            Variant(tpl.id, tpl.text, "train") for tpl in self.templates.values()
        ] + [v for v in self.variants if v.split == "heldout"]
        return InstructionCorpus(templates=dict(self.templates), variants=variants)

    def to_dict(self) -> dict:
        return {
            "templates": [
                {"id": t.id, "task": t.task, "text": t.text} for t in self.templates.values()
            ],
            "variants": [
                {"template_id": v.template_id, "text": v.text, "split": v.split}
                for v in self.variants
            ],
        }


def corpus_from_dict(d: dict) -> InstructionCorpus:
    corpus = InstructionCorpus()
    for t in d["templates"]:
        tpl = InstructionTemplate(id=t["id"], task=t["task"], text=t["text"])
        corpus.templates[tpl.id] = tpl
    for v in d["variants"]:
        corpus.variants.append(Variant(v["template_id"], v["text"], v["split"]))
    corpus.validate()
    return corpus


def load_corpus(path: str | Path | None = None) -> InstructionCorpus:
    """Load a corpus file; defaults to the bundled one."""
    if path is None:
        raw = resources.files("visq").joinpath("corpus/instructions.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    return corpus_from_dict(json.loads(raw))


def render(text: str, bindings: dict[str, str]) -> str:
    """Literal placeholder substitution; bindings must cover exactly the placeholders."""
    slots = placeholders_of(text)
    missing = slots - bindings.keys()
    if missing:
        raise InstructionError(f"missing bindings for {sorted(missing)}")
    unknown = bindings.keys() - slots
    if unknown:
        raise InstructionError(f"bindings for unknown placeholders {sorted(unknown)}")
    return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], text)


def sample_instruction(
    corpus: InstructionCorpus, task: str, rng: np.random.Generator, split: str = "train"
) -> Variant:
    """Uniform draw among the task's variants of the requested split."""
    options = corpus.variants_for(task, split)
    if not options:
        raise InstructionError(f"no {split!r} variants for task {task!r}")
    return options[int(rng.integers(len(options)))]


# --- optional paraphrase expansion over HTTP -------------------------------

Transport = Callable[[str, dict[str, str], bytes], bytes]


@dataclass
class ExpansionConfig:
    url: str = ""
    api_key_env: str = "VISQ_EXPANSION_API_KEY"
    timeout: float = 30.0

    @property
    def enabled(self) -> bool:
        return bool(self.url)


def _urllib_transport(url: str, headers: dict[str, str], body: bytes) -> bytes:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.read()
    except (urllib.error.URLError, OSError) as e:
        raise ExpansionError(f"expansion request failed: {e}") from e


def expand_paraphrases(
    config: ExpansionConfig,
    corpus: InstructionCorpus,
    template: InstructionTemplate,
    n: int,
    corpus_path: str | Path | None = None,
    transport: Transport | None = None,
) -> list[str]:
    """Request n paraphrases of a template and fold valid ones into the corpus.

    Candidates must preserve the template's placeholder set verbatim; invalid
    ones are dropped. Accepted texts are appended as train-split variants and,
    when corpus_path is given, persisted. Nothing is written on transport or
    decode failure.
    """
    if n < 0:
        raise InstructionError(f"n must be >= 0, got {n}")
    if n == 0:
        return []
    if not config.enabled:
        raise ExpansionError("expansion endpoint not configured (offline mode)")
    transport = transport or _urllib_transport
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(config.api_key_env, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    body = json.dumps(
        {
            "template": template.text,
            "placeholders": sorted(placeholders_of(template.text)),
            "n": n,
        }
    ).encode("utf-8")
    raw = transport(config.url, headers, body)
    try:
        candidates = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ExpansionError(f"malformed expansion response: {e}") from e
    if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
        raise ExpansionError("expansion response is not a JSON array of strings")

    existing = {v.text for v in corpus.variants if v.template_id == template.id}
    accepted: list[str] = []
    for text in candidates:
        if placeholders_of(text) != placeholders_of(template.text):
            logger.warning("rejected paraphrase with wrong placeholders: %r", text)
            continue
        if text in existing:
            continue
        accepted.append(text)
        existing.add(text)
    if not accepted:
        logger.warning("expansion returned no valid paraphrases for %s", template.id)
        return []
    for text in accepted:
        corpus.variants.append(Variant(template.id, text, "train"))
    corpus.validate()
    if corpus_path is not None:
        Path(corpus_path).write_text(
            json.dumps(corpus.to_dict(), indent=2, sort_keys=True), "utf-8"
        )
    return accepted
