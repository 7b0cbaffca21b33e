"""Byte-level byte-pair encoding.

The base alphabet is the 256 raw bytes, so any UTF-8 string encodes and
decodes losslessly regardless of what the merges were trained on. Training
greedily merges the most frequent adjacent token pair; frequency ties break
to the lexicographically smallest pair compared by the byte strings of its
two halves, which keeps training deterministic across corpus orderings.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field


class BpeError(ValueError):
    pass


@dataclass
class BpeModel:
    """Ordered merge list over a 256-byte base alphabet.

    merges[i] = (left_id, right_id) produces token id 256 + i. vocab maps
    every token id to its byte string.
    """

    merges: list[tuple[int, int]] = field(default_factory=list)
    vocab: dict[int, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.vocab:
            self.vocab = {i: bytes([i]) for i in range(256)}
            for i, (a, b) in enumerate(self.merges):
                self.vocab[256 + i] = self.vocab[a] + self.vocab[b]

    @property
    def vocab_size(self) -> int:
        return 256 + len(self.merges)

    def to_dict(self) -> dict:
        return {"merges": [list(m) for m in self.merges]}

    @classmethod
    def from_dict(cls, d: dict) -> "BpeModel":
        return cls(merges=[(int(a), int(b)) for a, b in d["merges"]])


def _merge_sequence(ids: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out: list[int] = []
    i = 0
    n = len(ids)
    while i < n:
        if i + 1 < n and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def bpe_train(corpus: list[str], vocab_size: int) -> BpeModel:
    """Learn merges until vocab_size is reached or no adjacent pair repeats."""
    if vocab_size < 256:
        raise BpeError(f"vocab_size {vocab_size} below byte alphabet size 256")
    sequences = [list(s.encode("utf-8")) for s in corpus]
    vocab = {i: bytes([i]) for i in range(256)}
    merges: list[tuple[int, int]] = []
    while 256 + len(merges) < vocab_size:
        counts: Counter[tuple[int, int]] = Counter()
        for seq in sequences:
            counts.update(zip(seq, seq[1:]))
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        best = min(
            (p for p, c in counts.items() if c == best_count),
            key=lambda p: (vocab[p[0]], vocab[p[1]]),
        )
        new_id = 256 + len(merges)
        merges.append(best)
        vocab[new_id] = vocab[best[0]] + vocab[best[1]]
        sequences = [_merge_sequence(seq, best, new_id) for seq in sequences]
    return BpeModel(merges=merges)


def bpe_encode(model: BpeModel, text: str) -> list[int]:
    """Byte-split then replay the merges in training order."""
    ids = list(text.encode("utf-8"))
    for i, pair in enumerate(model.merges):
        if len(ids) < 2:
            break
        ids = _merge_sequence(ids, pair, 256 + i)
    return ids


def bpe_decode(model: BpeModel, ids: list[int]) -> str:
    try:
        raw = b"".join(model.vocab[i] for i in ids)
    except KeyError as e:
        raise BpeError(f"id {e.args[0]} outside vocab of size {model.vocab_size}") from None
    return raw.decode("utf-8", errors="replace")
