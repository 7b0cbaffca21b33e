"""Unified output token id space.

The model emits tokens from one flat integer range that is partitioned into
four contiguous kinds: special control tokens (PAD/BOS/EOS), visual tokens
(patch-codebook indices), positional tokens (coordinate bins) and text tokens
(byte-pair ids). Everything downstream speaks global ids; the codecs speak
local per-kind ids, and this module is the bridge between the two.
"""
from __future__ import annotations

from dataclasses import dataclass

PAD = 0
BOS = 1
EOS = 2

KINDS = ("special", "visual", "positional", "text")

# Hard cap on the total model vocabulary; build_layout rejects anything larger.
MAX_TOTAL_VOCAB = 65536


class LayoutError(ValueError):
    """Raised for invalid token counts or out-of-range ids."""


@dataclass(frozen=True)
class VocabLayout:
    """Partition of the global id space, fixed order special|visual|positional|text."""

    n_special: int = 3
    n_visual: int = 128
    n_positional: int = 100
    n_text: int = 512

    @property
    def total(self) -> int:
        return self.n_special + self.n_visual + self.n_positional + self.n_text

    @property
    def offsets(self) -> dict[str, int]:
        return {
            "special": 0,
            "visual": self.n_special,
            "positional": self.n_special + self.n_visual,
            "text": self.n_special + self.n_visual + self.n_positional,
        }

    def count(self, kind: str) -> int:
        if kind not in KINDS:
            raise LayoutError(f"unknown token kind {kind!r}")
        return getattr(self, f"n_{kind}")

    def kind_range(self, kind: str) -> tuple[int, int]:
        """Half-open [start, end) global-id range of a kind."""
        start = self.offsets[kind]
        return start, start + self.count(kind)

    def to_dict(self) -> dict[str, int]:
        return {
            "n_special": self.n_special,
            "n_visual": self.n_visual,
            "n_positional": self.n_positional,
            "n_text": self.n_text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, int]) -> "VocabLayout":
        return build_layout(d["n_special"], d["n_visual"], d["n_positional"], d["n_text"])


def build_layout(n_special: int, n_visual: int, n_positional: int, n_text: int) -> VocabLayout:
    """Validate the four counts and return the layout.

    n_text may be 0 (text-free ablation); the other counts must be >= 1, and
    n_special must cover PAD/BOS/EOS.
    """
    counts = (n_special, n_visual, n_positional, n_text)
    if any(c < 0 for c in counts):
        raise LayoutError(f"negative token count in {counts}")
    if n_special < 3:
        raise LayoutError(f"n_special={n_special} must be >= 3 (PAD, BOS, EOS)")
    if n_visual < 1 or n_positional < 1:
        raise LayoutError("n_visual and n_positional must be >= 1")
    total = sum(counts)
    if total > MAX_TOTAL_VOCAB:
        raise LayoutError(f"total vocab {total} exceeds maximum {MAX_TOTAL_VOCAB}")
    return VocabLayout(n_special, n_visual, n_positional, n_text)


def token_kind(layout: VocabLayout, global_id: int) -> str:
    if not 0 <= global_id < layout.total:
        raise LayoutError(f"global id {global_id} outside [0, {layout.total})")
    for kind in reversed(KINDS):
        if global_id >= layout.offsets[kind] and layout.count(kind) > 0:
            return kind
    raise LayoutError(f"global id {global_id} not covered by any range")  # pragma: no cover


def to_global(layout: VocabLayout, kind: str, local_id: int) -> int:
    n = layout.count(kind)
    if not 0 <= local_id < n:
        raise LayoutError(f"local id {local_id} outside [0, {n}) for kind {kind!r}")
    return layout.offsets[kind] + local_id


def to_local(layout: VocabLayout, global_id: int) -> tuple[str, int]:
    kind = token_kind(layout, global_id)
    return kind, global_id - layout.offsets[kind]
