"""Run configuration: one JSON document, strictly validated.

Sections mirror the pipeline stages; unknown keys anywhere are rejected so a
typo cannot silently fall back to a default. Validation happens before any
command does work, which is what keeps failed runs from leaving partial
output behind.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import TaskRatios
from .inference import DecodeConfig
from .model import ModelConfig
from .trainer import TrainConfig
from .vocab import VocabLayout, build_layout


class ConfigError(ValueError):
    pass


@dataclass
class CodecSection:
    patch_size: int = 4
    kmeans_iters: int = 40
    kmeans_restarts: int = 3
    fit_scenes: int = 200


@dataclass
class DataSection:
    num_samples: int = 2000
    max_objects: int = 3
    ratios: TaskRatios = field(default_factory=TaskRatios)


@dataclass
class EvalSection:
    num_scenes: int = 50
    split: str = "train"
    tasks: tuple[str, ...] = ("semseg", "res", "rec", "caption")


@dataclass
class PathsSection:
    corpus: str | None = None  # None -> bundled corpus
    expansion_url: str = ""
    api_key_env: str = "VISQ_EXPANSION_API_KEY"


@dataclass
class RunConfig:
    seed: int = 0
    vocab: VocabLayout = field(default_factory=VocabLayout)
    codec: CodecSection = field(default_factory=CodecSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.decode.validate()
        self.data.ratios.normalized()
        if self.data.num_samples < 1:
            raise ConfigError(f"data.num_samples must be >= 1, got {self.data.num_samples}")
        if self.eval.split not in ("train", "heldout", "all"):
            raise ConfigError(f"eval.split must be train/heldout/all, got {self.eval.split!r}")
        for t in self.eval.tasks:
            if t not in ("semseg", "res", "rec", "caption"):
                raise ConfigError(f"unknown eval task {t!r}")


def _build(cls, raw: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {where!r}")
    return raw


def load_run_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config file; missing sections take defaults."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")

    known_sections = {
        "seed", "vocab", "codec", "data", "model", "train", "decode", "eval", "paths",
    }
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    vocab_raw = _build(VocabLayout, raw.get("vocab", {}), "vocab")
    layout = build_layout(
        vocab_raw.get("n_special", 3),
        vocab_raw.get("n_visual", 128),
        vocab_raw.get("n_positional", 100),
        vocab_raw.get("n_text", 512),
    )

    codec = CodecSection(**_build(CodecSection, raw.get("codec", {}), "codec"))

    data_raw = dict(_build(DataSection, raw.get("data", {}), "data"))
    if "ratios" in data_raw:
        ratios_raw = _build(TaskRatios, data_raw["ratios"], "data.ratios")
        data_raw["ratios"] = TaskRatios(**ratios_raw)
    data = DataSection(**data_raw)

    model_raw = dict(_build(ModelConfig, raw.get("model", {}), "model"))
    model_raw.pop("layout", None)
    model = ModelConfig(layout=layout, **model_raw)

    train_raw = dict(_build(TrainConfig, raw.get("train", {}), "train"))
    if "ratios" in train_raw:
        train_raw["ratios"] = TaskRatios(**_build(TaskRatios, train_raw["ratios"], "train.ratios"))
    else:
        train_raw["ratios"] = data.ratios
    train = TrainConfig(**train_raw)

    decode = DecodeConfig(**_build(DecodeConfig, raw.get("decode", {}), "decode"))

    eval_raw = dict(_build(EvalSection, raw.get("eval", {}), "eval"))
    if "tasks" in eval_raw:
        eval_raw["tasks"] = tuple(eval_raw["tasks"])
    eval_section = EvalSection(**eval_raw)

    paths = PathsSection(**_build(PathsSection, raw.get("paths", {}), "paths"))

    config = RunConfig(
        seed=seed, vocab=layout, codec=codec, data=data, model=model,
        train=train, decode=decode, eval=eval_section, paths=paths,
    )
    if overrides and overrides.get("seed") is not None:
        config.seed = int(overrides["seed"])
        config.train = replace(config.train, seed=config.seed)
        config.decode = replace(config.decode, seed=config.seed)
    config.validate()
    return config


def dump_run_config(config: RunConfig) -> str:
    doc = {
        "seed": config.seed,
        "vocab": config.vocab.to_dict(),
        "codec": asdict(config.codec),
        "data": asdict(config.data),
        "model": config.model.to_dict(),
        "train": {k: v for k, v in asdict(config.train).items()},
        "decode": asdict(config.decode),
        "eval": {**asdict(config.eval), "tasks": list(config.eval.tasks)},
        "paths": asdict(config.paths),
    }
    return json.dumps(doc, indent=2, sort_keys=True)
