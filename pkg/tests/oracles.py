"""Brute-force reference implementations of the evaluation metrics.

Written independently of visq.metrics (plain loops, no shared helpers) so
the production implementations can be checked against them on randomized
instances.
"""
import math


def oracle_mean_iou(preds, gts, num_classes):
    inter = [0] * num_classes
    union = [0] * num_classes
    for p, g in zip(preds, gts):
        h = len(p)
        w = len(p[0])
        for c in range(num_classes):
            for y in range(h):
                for x in range(w):
                    a = p[y][x] == c
                    b = g[y][x] == c
                    if a and b:
                        inter[c] += 1
                    if a or b:
                        union[c] += 1
    ratios = [inter[c] / union[c] for c in range(num_classes) if union[c] > 0]
    return sum(ratios) / len(ratios)


def oracle_overall_iou(pred_masks, gt_masks):
    inter = 0
    union = 0
    for p, g in zip(pred_masks, gt_masks):
        for y in range(len(p)):
            for x in range(len(p[0])):
                if p[y][x] and g[y][x]:
                    inter += 1
                if p[y][x] or g[y][x]:
                    union += 1
    return inter / union


def oracle_rect_iou(a, b):
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    ix1, iy1 = max(ax1, bx1), max(ay1, by1)
    ix2, iy2 = min(ax2, bx2), min(ay2, by2)
    iw = ix2 - ix1 if ix2 > ix1 else 0.0
    ih = iy2 - iy1 if iy2 > iy1 else 0.0
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    if union <= 0:
        return 1.0
    return inter / union


def oracle_ap50(pred_boxes, gt_boxes):
    hits = 0
    for p, g in zip(pred_boxes, gt_boxes):
        if oracle_rect_iou(p, g) >= 0.5:
            hits += 1
    return hits / len(pred_boxes)


def oracle_bleu4(candidates, references):
    def grams(tokens, n):
        out = {}
        for i in range(len(tokens) - n + 1):
            key = tuple(tokens[i : i + n])
            out[key] = out.get(key, 0) + 1
        return out

    c_len = 0
    r_len = 0
    for c, r in zip(candidates, references):
        c_len += len(c.split())
        r_len += len(r.split())
    if c_len == 0:
        return 0.0
    total_log = 0.0
    used = 0
    for n in (1, 2, 3, 4):
        num = 0
        den = 0
        for c, r in zip(candidates, references):
            ct = c.split()
            rt = r.split()
            cg = grams(ct, n)
            rg = grams(rt, n)
            for g, k in cg.items():
                num += min(k, rg.get(g, 0))
            d = len(ct) - n + 1
            if d > 0:
                den += d
        if den == 0:
            continue
        used += 1
        if num == 0:
            total_log += math.log((num + 1) / (den + 1))
        else:
            total_log += math.log(num / den)
    if used == 0:
        return 0.0
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(total_log / used)
