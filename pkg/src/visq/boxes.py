"""Bounding boxes as positional tokens.

A box is four normalized coordinates [x1, y1, x2, y2] (top-left /
bottom-right corners). Encoding discretizes each coordinate into one of B
bins shared by both axes; decoding returns bin centers, so the roundtrip
error per coordinate is at most 1/(2B).
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for c in (self.x1, self.y1, self.x2, self.y2):
            if not 0.0 <= c <= 1.0:
                raise BoxError(f"coordinate {c} outside [0, 1]")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise BoxError(f"inverted box {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def coords(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


def box_encode(box: Box, bins: int) -> list[int]:
    """Quantize to 4 local positional ids, order x1, y1, x2, y2."""
    if bins < 1:
        raise BoxError(f"bin count {bins} must be >= 1")
    return [min(math.floor(c * bins), bins - 1) for c in box.coords()]


def box_decode(ids: list[int], bins: int) -> tuple[Box, bool]:
    """Decode 4 positional ids to a box of bin centers.

    A model sampling freely can emit x2 < x1 (or y2 < y1); such corners are
    swapped to restore the invariant and the second return value flags that
    the record was repaired.
    """
    if len(ids) != 4:
        raise BoxError(f"expected 4 positional ids, got {len(ids)}")
    if any(not 0 <= i < bins for i in ids):
        raise BoxError(f"positional id out of range [0, {bins}) in {ids}")
    x1, y1, x2, y2 = ((i + 0.5) / bins for i in ids)
    swapped = False
    if x1 > x2:
        x1, x2 = x2, x1
        swapped = True
    if y1 > y2:
        y1, y2 = y2, y1
        swapped = True
    return Box(x1, y1, x2, y2), swapped


def box_iou(a: Box, b: Box) -> float:
    """Rectangle intersection-over-union.

    Zero union (both boxes degenerate) is defined as IoU 1, which covers the
    zero-area-box-vs-itself convention used by sample selection.
    """
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 1.0
    return inter / union
