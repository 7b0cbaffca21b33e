import json

import pytest

from visq.config import ConfigError, dump_run_config, load_run_config


def write(tmp_path, doc):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(doc))
    return p


def test_defaults_without_file():
    config = load_run_config(None)
    assert config.vocab.total == 743
    assert config.model.embed_dim == 128
    assert config.decode.num_samples == 10
    assert config.train.freeze_instruction_encoder is True


def test_sections_parse(tmp_path):
    p = write(tmp_path, {
        "seed": 9,
        "vocab": {"n_visual": 64},
        "model": {"embed_dim": 32, "layers": 2},
        "train": {"steps": 10, "ratios": {"semseg": 1, "res": 0, "rec": 0, "caption": 0}},
        "decode": {"temperature": 1.0},
        "data": {"num_samples": 5},
    })
    config = load_run_config(p)
    assert config.seed == 9
    assert config.vocab.n_visual == 64
    assert config.model.layout.n_visual == 64
    assert config.train.ratios.semseg == 1
    assert config.data.num_samples == 5


def test_unknown_top_level_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown top-level"):
        load_run_config(write(tmp_path, {"sed": 1}))


def test_unknown_section_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="model"):
        load_run_config(write(tmp_path, {"model": {"embed_dims": 8}}))


def test_invalid_values_rejected(tmp_path):
    with pytest.raises(Exception):
        load_run_config(write(tmp_path, {"model": {"embed_dim": 10, "heads": 3}}))
    with pytest.raises(Exception):
        load_run_config(write(tmp_path, {"decode": {"temperature": 3.0}}))
    with pytest.raises(Exception):
        load_run_config(write(tmp_path, {"train": {"steps": 0}}))


def test_seed_override_propagates(tmp_path):
    p = write(tmp_path, {"seed": 1})
    config = load_run_config(p, {"seed": 77})
    assert config.seed == 77
    assert config.train.seed == 77
    assert config.decode.seed == 77


def test_train_ratios_default_to_data_ratios(tmp_path):
    p = write(tmp_path, {"data": {"ratios": {"semseg": 0, "res": 1, "rec": 0, "caption": 0}}})
    config = load_run_config(p)
    assert config.train.ratios.res == 1


def test_dump_reloads_identically(tmp_path):
    config = load_run_config(None)
    p = tmp_path / "dumped.json"
    p.write_text(dump_run_config(config))
    again = load_run_config(p)
    assert again == config
