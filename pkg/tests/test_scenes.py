import numpy as np
import pytest

from visq.instructions import NAMED_COLORS
from visq.scenes import (
    CANVAS,
    NUM_CLASSES,
    SHAPE_CLASS,
    SIZES,
    generate_scene,
    referring_expression,
)


def test_same_seed_is_byte_identical():
    a = generate_scene(17)
    b = generate_scene(17)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.label_map, b.label_map)
    assert a.objects == b.objects
    assert a.caption == b.caption
    assert [m.tobytes() for m in a.masks] == [m.tobytes() for m in b.masks]


def test_objects_do_not_overlap_and_fit_canvas():
    for seed in range(80):
        scene = generate_scene(seed)
        occupied = np.zeros((CANVAS, CANVAS), dtype=int)
        for m in scene.masks:
            occupied += m.astype(int)
            assert m.any()
        assert occupied.max() <= 1


def test_colors_unique_per_scene():
    for seed in range(80):
        scene = generate_scene(seed)
        colors = [o.color for o in scene.objects]
        assert len(set(colors)) == len(colors)


def test_square_box_matches_analytic_extent():
    found = False
    for seed in range(200):
        scene = generate_scene(seed)
        for obj, box in zip(scene.objects, scene.boxes):
            if obj.shape != "square":
                continue
            found = True
            e = SIZES[obj.size]
            assert box.x1 == (obj.cx - e) / CANVAS
            assert box.x2 == (obj.cx + e + 1) / CANVAS
            assert box.y1 == (obj.cy - e) / CANVAS
            assert box.y2 == (obj.cy + e + 1) / CANVAS
    assert found


def test_boxes_are_tight_mask_bounds():
    for seed in range(50):
        scene = generate_scene(seed)
        for mask, box in zip(scene.masks, scene.boxes):
            ys, xs = np.nonzero(mask)
            assert box.x1 * CANVAS == xs.min()
            assert box.x2 * CANVAS == xs.max() + 1
            assert box.y1 * CANVAS == ys.min()
            assert box.y2 * CANVAS == ys.max() + 1


def test_single_object_caption_realization():
    found = False
    for seed in range(200):
        scene = generate_scene(seed)
        if len(scene.objects) == 1:
            found = True
            obj = scene.objects[0]
            assert scene.caption == f"a {obj.color} {obj.shape}"
    assert found


def test_caption_order_left_to_right():
    for seed in range(100):
        scene = generate_scene(seed)
        order = sorted(range(len(scene.objects)), key=lambda i: (scene.objects[i].cx, scene.objects[i].cy, i))
        parts = scene.caption.split(" and ")
        assert len(parts) == len(scene.objects)
        for part, i in zip(parts, order):
            assert part == f"a {scene.objects[i].color} {scene.objects[i].shape}"


def test_label_map_matches_masks_and_classes():
    for seed in range(50):
        scene = generate_scene(seed)
        expected = np.zeros((CANVAS, CANVAS), dtype=np.int64)
        for obj, mask in zip(scene.objects, scene.masks):
            expected[mask] = SHAPE_CLASS[obj.shape]
        assert np.array_equal(scene.label_map, expected)
        assert scene.label_map.max() < NUM_CLASSES


def test_image_pixels_follow_object_colors():
    scene = generate_scene(3)
    for obj, mask in zip(scene.objects, scene.masks):
        assert np.all(scene.image[mask] == NAMED_COLORS[obj.color])
    background = ~np.logical_or.reduce(scene.masks)
    assert np.all(scene.image[background] == scene.background)


def test_referring_expression_contains_color_and_shape():
    rng = np.random.default_rng(0)
    for seed in range(30):
        scene = generate_scene(seed)
        for i, obj in enumerate(scene.objects):
            expr = referring_expression(scene, i, rng)
            assert obj.color in expr
            assert obj.shape in expr
            assert not expr.startswith("the ")
