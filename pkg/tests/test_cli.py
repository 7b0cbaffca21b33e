import json
from pathlib import Path

import pytest

from visq.cli import main

TINY = {
    "seed": 5,
    "codec": {"kmeans_iters": 12, "kmeans_restarts": 1, "fit_scenes": 30},
    "data": {"num_samples": 30},
    "model": {"embed_dim": 16, "layers": 1, "heads": 2, "ffn_mult": 2, "instr_layers": 1},
    "train": {"steps": 4, "batch_size": 2, "lr": 0.001, "warmup_steps": 1},
    "decode": {"num_samples": 2, "vocab_mask": True, "beam_size": 2, "max_caption_len": 8},
    "eval": {"num_scenes": 3},
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data + fit-codecs + train, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY))
    assert main(["gen-data", "--config", str(config), "--out", str(root / "data"), "--quiet"]) == 0
    assert main(["fit-codecs", "--config", str(config), "--data", str(root / "data"),
                 "--out", str(root / "run"), "--quiet"]) == 0
    assert main(["train", "--config", str(config), "--data", str(root / "data"),
                 "--codecs", str(root / "run" / "init.ckpt"),
                 "--out", str(root / "run"), "--quiet"]) == 0
    return root, config


def test_pipeline_artifacts_exist(pipeline):
    root, _ = pipeline
    assert (root / "data" / "scenes.jsonl").exists()
    assert (root / "run" / "init.ckpt").exists()
    assert (root / "run" / "manifest.jsonl").exists()
    assert (root / "run" / "model.ckpt").exists()
    assert (root / "run" / "train_log.csv").exists()


def test_gen_data_deterministic(pipeline):
    root, config = pipeline
    assert main(["gen-data", "--config", str(config), "--out", str(root / "data_b"), "--quiet"]) == 0
    a = (root / "data" / "scenes.jsonl").read_bytes()
    b = (root / "data_b" / "scenes.jsonl").read_bytes()
    assert a == b
    img = "images/train-000003.ppm"
    assert (root / "data" / img).read_bytes() == (root / "data_b" / img).read_bytes()


def test_train_deterministic(pipeline):
    root, config = pipeline
    assert main(["train", "--config", str(config), "--data", str(root / "data"),
                 "--codecs", str(root / "run" / "init.ckpt"),
                 "--out", str(root / "run_b"), "--quiet"]) == 0
    assert (root / "run" / "model.ckpt").read_bytes() == (root / "run_b" / "model.ckpt").read_bytes()
    assert (root / "run" / "train_log.csv").read_bytes() == (root / "run_b" / "train_log.csv").read_bytes()


def test_evaluate_deterministic(pipeline):
    root, config = pipeline
    for name in ("eval_a", "eval_b"):
        assert main(["evaluate", "--config", str(config),
                     "--checkpoint", str(root / "run" / "model.ckpt"),
                     "--manifest", str(root / "run" / "manifest.jsonl"),
                     "--limit", "4", "--out", str(root / name), "--quiet"]) == 0
    assert (root / "eval_a" / "eval_report.json").read_bytes() == \
        (root / "eval_b" / "eval_report.json").read_bytes()
    assert (root / "eval_a" / "eval_report.csv").read_bytes() == \
        (root / "eval_b" / "eval_report.csv").read_bytes()


def test_infer_writes_outputs(pipeline):
    root, config = pipeline
    image = next((root / "data" / "images").glob("*-000001.ppm"))
    assert main(["infer", "--config", str(config),
                 "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--image", str(image),
                 "--instruction", "Please fill green into the shape of the red circle.",
                 "--task", "res", "--out", str(root / "infer"), "--quiet"]) == 0
    index = json.loads((root / "infer" / "index.json").read_text())
    assert index["task"] == "res"
    assert (root / "infer" / "res_mask.pgm").exists()
    assert (root / "infer" / "res_confidence.pgm").exists()


def test_ablate_n_sweep_csv(pipeline):
    root, config = pipeline
    assert main(["ablate", "n-sweep", "--config", str(config),
                 "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--n", "1,2", "--out", str(root / "sweep"), "--quiet"]) == 0
    lines = (root / "sweep" / "n_sweep.csv").read_text().splitlines()
    assert lines[0].startswith("n,")
    assert len(lines) == 3


def test_evaluate_dump_writes_per_record_artifacts(pipeline, tmp_path):
    root, config = pipeline
    assert main(["evaluate", "--config", str(config),
                 "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--manifest", str(root / "run" / "manifest.jsonl"),
                 "--limit", "8", "--dump", "--out", str(tmp_path / "ev"), "--quiet"]) == 0
    index = json.loads((tmp_path / "ev" / "records" / "index.json").read_text())
    assert len(index) == 8
    for rec_id, entry in index.items():
        if "pred" in entry:
            assert (tmp_path / "ev" / "records" / entry["pred"]).exists()


def test_ablate_image_only(pipeline, tmp_path):
    root, config = pipeline
    assert main(["ablate", "image-only", "--config", str(config),
                 "--checkpoint", str(root / "run" / "init.ckpt"),
                 "--data", str(root / "data"),
                 "--out", str(tmp_path / "io"), "--quiet"]) == 0
    doc = json.loads((tmp_path / "io" / "image_only.json").read_text())
    assert set(doc) == {"all", "image-only"}
    assert "semseg_miou" in doc["all"] and "res_oiou" in doc["image-only"]


def test_inspect_checkpoint(pipeline, capsys):
    root, _ = pipeline
    assert main(["inspect-checkpoint", "--checkpoint", str(root / "run" / "model.ckpt")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["layout"]["n_visual"] == 128
    assert doc["codebook"]["entries"] == 128


def test_unknown_subcommand_exits_one(capsys):
    assert main(["frobnicate"]) == 1


def test_bad_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"no_such_field": 1}}))
    code = main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 1
    assert not (tmp_path / "o").exists()  # no partial output on validation failure


def test_missing_checkpoint_exits_two(tmp_path):
    code = main(["inspect-checkpoint", "--checkpoint", str(tmp_path / "nope.ckpt")])
    assert code == 2


def test_wrong_layout_checkpoint_exits_two(pipeline, tmp_path):
    root, _ = pipeline
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**TINY, "vocab": {"n_visual": 64}}))
    code = main(["evaluate", "--config", str(other),
                 "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--manifest", str(root / "run" / "manifest.jsonl"),
                 "--out", str(tmp_path / "e"), "--quiet"])
    assert code == 2
