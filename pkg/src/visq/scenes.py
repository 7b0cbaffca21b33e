"""Procedural "shapes world" scenes.

Each scene is a 32x32 canvas holding 1..3 non-overlapping solid shapes
(circle, square, triangle) in distinct named colors on a dark background.
The generator is a pure function of the seed and returns every annotation
the four tasks need: the rendered image, a per-pixel label map over
{background, circle, square, triangle}, per-object masks, tight normalized
bounding boxes, and a deterministic left-to-right caption.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box
from .instructions import NAMED_COLORS

CANVAS = 32
SHAPES = ("circle", "square", "triangle")
# class ids for the label map: background 0, then shapes in SHAPES order
SHAPE_CLASS = {name: i + 1 for i, name in enumerate(SHAPES)}
NUM_CLASSES = 1 + len(SHAPES)

SIZES = {"small": 4, "large": 5}  # half-extent in pixels
BACKGROUNDS = ((0, 0, 0), (28, 28, 28), (56, 56, 56))

MAX_PLACEMENT_ATTEMPTS = 1000


class SceneError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str  # named color
    size: str  # small | large
    cx: int
    cy: int

    @property
    def half_extent(self) -> int:
        return SIZES[self.size]


@dataclass
class Scene:
    seed: int
    background: tuple[int, int, int]
    objects: list[SceneObject]
    image: np.ndarray  # (32, 32, 3) uint8
    label_map: np.ndarray  # (32, 32) int, values < NUM_CLASSES
    masks: list[np.ndarray] = field(default_factory=list)  # per-object bool
    boxes: list[Box] = field(default_factory=list)
    caption: str = ""


def _shape_mask(shape: str, cx: int, cy: int, e: int) -> np.ndarray:
    ys, xs = np.mgrid[0:CANVAS, 0:CANVAS]
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= e * e
    if shape == "square":
        return (np.abs(xs - cx) <= e) & (np.abs(ys - cy) <= e)
    if shape == "triangle":
        # apex up: row dy below the apex spans integer half-width dy*e // (2e)
        dy = ys - (cy - e)
        hw = (dy * e) // (2 * e)
        return (dy >= 0) & (dy <= 2 * e) & (np.abs(xs - cx) <= hw)
    raise SceneError(f"unknown shape {shape!r}")


def _mask_box(mask: np.ndarray) -> Box:
    ys, xs = np.nonzero(mask)
    return Box(
        x1=float(xs.min()) / CANVAS,
        y1=float(ys.min()) / CANVAS,
        x2=float(xs.max() + 1) / CANVAS,
        y2=float(ys.max() + 1) / CANVAS,
    )


def generate_scene(seed: int, max_objects: int = 3) -> Scene:
    """Deterministic scene build; rejection-samples non-overlapping placements."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5CE4E, seed]))
    n_objects = int(rng.integers(1, max_objects + 1))
    background = BACKGROUNDS[int(rng.integers(len(BACKGROUNDS)))]
    color_names = list(NAMED_COLORS)
    color_pick = rng.permutation(len(color_names))[:n_objects]

    objects: list[SceneObject] = []
    masks: list[np.ndarray] = []
    occupied = np.zeros((CANVAS, CANVAS), dtype=bool)
    attempts = 0
    while len(objects) < n_objects:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise SceneError(f"placement rejection exceeded {MAX_PLACEMENT_ATTEMPTS} attempts")
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        size = "small" if rng.random() < 0.5 else "large"
        e = SIZES[size]
        # centers snap to the 4px patch grid: dense targets then draw from a
        # small family of boundary patch patterns, which the default
        # 128-entry codebook can represent without degrading masks
        lo = -(-e // 4)  # ceil(e / 4)
        hi = (CANVAS - 1 - e) // 4 + 1
        cx = 4 * int(rng.integers(lo, hi))
        cy = 4 * int(rng.integers(lo, hi))
        mask = _shape_mask(shape, cx, cy, e)
        if (mask & occupied).any():
            continue
        color = color_names[int(color_pick[len(objects)])]
        objects.append(SceneObject(shape, color, size, cx, cy))
        masks.append(mask)
        occupied |= mask

    image = np.empty((CANVAS, CANVAS, 3), dtype=np.uint8)
    image[:] = background
    label_map = np.zeros((CANVAS, CANVAS), dtype=np.int64)
    for obj, mask in zip(objects, masks):
        image[mask] = NAMED_COLORS[obj.color]
        label_map[mask] = SHAPE_CLASS[obj.shape]

    # caption in left-to-right order
    order = sorted(range(n_objects), key=lambda i: (objects[i].cx, objects[i].cy, i))
    caption = " and ".join(f"a {objects[i].color} {objects[i].shape}" for i in order)

    return Scene(
        seed=seed,
        background=background,
        objects=objects,
        image=image,
        label_map=label_map,
        masks=masks,
        boxes=[_mask_box(m) for m in masks],
        caption=caption,
    )


def referring_expression(scene: Scene, index: int, rng: np.random.Generator) -> str:
    """Article-free unique description of one object.

    Colors are unique per scene, so "{color} {shape}" always identifies the
    object; size and side qualifiers are added at random for phrasing variety.
    """
    obj = scene.objects[index]
    parts = []
    if rng.random() < 0.3:
        parts.append(obj.size)
    parts.append(obj.color)
    parts.append(obj.shape)
    expr = " ".join(parts)
    if rng.random() < 0.2:
        expr += " on the left" if obj.cx < CANVAS // 2 else " on the right"
    return expr
