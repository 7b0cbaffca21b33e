import numpy as np
import pytest

from helpers import tiny_config
from visq.bpe import bpe_train
from visq.checkpoint import (
    CheckpointLayoutError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    load_checkpoint,
    save_checkpoint,
)
from visq.model import init_parameters
from visq.vocab import build_layout
from visq.vq import PatchCodebook


@pytest.fixture()
def saved(tmp_path):
    config = tiny_config()
    params = init_parameters(config, seed=42)
    rng = np.random.default_rng(0)
    codebook = PatchCodebook(patch_size=4, entries=rng.random((4, 48)).astype(np.float32))
    bpe = bpe_train(["aaaa bbbb aaaa"], 260)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, codebook, bpe, path, meta={"note": "fixture"})
    return params, codebook, bpe, path


def test_roundtrip_bit_exact(saved):
    params, codebook, bpe, path = saved
    loaded, cb, loaded_bpe, meta = load_checkpoint(path)
    assert loaded.names() == params.names()
    for name in params.names():
        assert np.array_equal(loaded[name].data, params[name].data)
    assert np.array_equal(cb.entries, codebook.entries)
    assert cb.patch_size == codebook.patch_size
    assert loaded_bpe.merges == bpe.merges
    assert meta == {"note": "fixture"}
    assert loaded.config == params.config


def test_save_is_deterministic(saved, tmp_path):
    params, codebook, bpe, path = saved
    other = tmp_path / "again.ckpt"
    save_checkpoint(params, codebook, bpe, other, meta={"note": "fixture"})
    assert other.read_bytes() == path.read_bytes()


def test_wrong_magic_rejected(saved):
    *_, path = saved
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTMAGIC"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointMagicError):
        load_checkpoint(path)


def test_truncated_file_rejected(saved):
    *_, path = saved
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)


def test_truncated_header_rejected(saved):
    *_, path = saved
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)


def test_layout_mismatch_rejected(saved):
    *_, path = saved
    with pytest.raises(CheckpointLayoutError):
        load_checkpoint(path, expect_layout=build_layout(3, 64, 4, 8))


def test_layout_match_accepted(saved):
    *_, path = saved
    loaded, *_ = load_checkpoint(path, expect_layout=build_layout(3, 4, 4, 8))
    assert loaded.config.layout.n_visual == 4


def test_distinct_error_types(saved):
    # the three failure modes are distinguishable by exception class
    assert not issubclass(CheckpointMagicError, CheckpointTruncatedError)
    assert not issubclass(CheckpointTruncatedError, CheckpointLayoutError)
    assert not issubclass(CheckpointLayoutError, CheckpointMagicError)
