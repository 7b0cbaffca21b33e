"""Single-file checkpoint container.

Layout: 8-byte magic "ISQCKPT1", little-endian u32 header length, JSON
header (model config, vocab layout, tensor table with byte offsets, codec
payload descriptors), then one contiguous little-endian float32 payload
holding every tensor plus the patch codebook entries. The BPE merge list is
small and lives in the header itself. Loading is bit-exact.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .bpe import BpeModel
from .model import ModelConfig, Parameters
from .vocab import VocabLayout
from .vq import PatchCodebook

MAGIC = b"ISQCKPT1"


class CheckpointError(RuntimeError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointLayoutError(CheckpointError):
    pass


def save_checkpoint(
    params: Parameters,
    codebook: PatchCodebook | None,
    bpe: BpeModel | None,
    path: str | Path,
    meta: dict | None = None,
) -> None:
    chunks: list[bytes] = []
    offset = 0
    table = []
    for name in params.names():
        data = np.ascontiguousarray(params[name].data, dtype="<f4")
        table.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header: dict = {
        "config": params.config.to_dict(),
        "layout": params.config.layout.to_dict(),
        "tensors": table,
        "codebook": None,
        "bpe": bpe.to_dict() if bpe is not None else None,
        "meta": meta or {},
    }
    if codebook is not None:
        entries = np.ascontiguousarray(codebook.entries, dtype="<f4")
        header["codebook"] = {
            "patch_size": codebook.patch_size,
            "shape": list(entries.shape),
            "offset": offset,
        }
        chunks.append(entries.tobytes())
        offset += entries.nbytes
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for c in chunks:
            f.write(c)


def load_checkpoint(
    path: str | Path, expect_layout: VocabLayout | None = None
) -> tuple[Parameters, PatchCodebook | None, BpeModel | None, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise CheckpointTruncatedError(f"{path}: file shorter than fixed header")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    (header_len,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    header_end = len(MAGIC) + 4 + header_len
    if len(raw) < header_end:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(raw[len(MAGIC) + 4 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unparseable header ({e})") from None
    payload = raw[header_end:]

    layout = VocabLayout.from_dict(header["layout"])
    if expect_layout is not None and layout != expect_layout:
        raise CheckpointLayoutError(
            f"{path}: checkpoint layout {layout.to_dict()} does not match "
            f"configured layout {expect_layout.to_dict()}"
        )
    config = ModelConfig.from_dict(header["config"], layout)

    def read_block(offset: int, shape: list[int]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(payload):
            raise CheckpointTruncatedError(f"{path}: payload truncated at offset {offset}")
        return np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape).copy()

    tensors = {
        entry["name"]: Tensor(read_block(entry["offset"], entry["shape"]), requires_grad=True)
        for entry in header["tensors"]
    }
    params = Parameters(tensors, config)

    codebook = None
    if header.get("codebook"):
        cb = header["codebook"]
        codebook = PatchCodebook(
            patch_size=int(cb["patch_size"]),
            entries=read_block(cb["offset"], cb["shape"]),
        )
    bpe = BpeModel.from_dict(header["bpe"]) if header.get("bpe") else None
    return params, codebook, bpe, header.get("meta", {})
