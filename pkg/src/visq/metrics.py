"""Evaluation metrics: mIoU, oIoU, AP50, corpus BLEU-4.

Definitions are pinned exactly (the test suite holds each one to an
independent brute-force implementation at 1e-9):

  mIoU   -- intersections and unions accumulated per class over the whole
            dataset; classes absent from both predictions and ground truth
            are excluded; mean of the per-class ratios.
  oIoU   -- sum of mask intersections over all samples divided by the sum of
            unions.
  AP50   -- fraction of records whose predicted box has rectangle IoU >= 0.5
            with the ground-truth box (>= at the boundary).
  BLEU-4 -- corpus-level, n-grams 1..4 with uniform weights, clipped modified
            precision, add-one smoothing only for orders whose clipped match
            count is zero, orders with no candidate n-grams dropped with
            weight renormalization, brevity penalty min(1, e^(1 - r/c)).
"""
from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .boxes import Box, box_iou


class MetricError(ValueError):
    pass


def mean_iou(preds: list[np.ndarray], gts: list[np.ndarray], num_classes: int) -> float:
    if len(preds) != len(gts) or not preds:
        raise MetricError("prediction/ground-truth count mismatch or empty input")
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    for p, g in zip(preds, gts):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise MetricError(f"shape mismatch {p.shape} vs {g.shape}")
        if p.max(initial=0) >= num_classes or g.max(initial=0) >= num_classes:
            raise MetricError(f"label >= num_classes {num_classes}")
        for c in range(num_classes):
            pc = p == c
            gc = g == c
            inter[c] += np.logical_and(pc, gc).sum()
            union[c] += np.logical_or(pc, gc).sum()
    present = union > 0
    if not present.any():
        raise MetricError("no class present in predictions or ground truth")
    return float(np.mean(inter[present] / union[present]))


def overall_iou(pred_masks: list[np.ndarray], gt_masks: list[np.ndarray]) -> float:
    if len(pred_masks) != len(gt_masks) or not pred_masks:
        raise MetricError("prediction/ground-truth count mismatch or empty input")
    inter = 0
    union = 0
    for p, g in zip(pred_masks, gt_masks):
        p = np.asarray(p, dtype=bool)
        g = np.asarray(g, dtype=bool)
        if p.shape != g.shape:
            raise MetricError(f"shape mismatch {p.shape} vs {g.shape}")
        inter += int(np.logical_and(p, g).sum())
        union += int(np.logical_or(p, g).sum())
    if union == 0:
        raise MetricError("all unions are empty")
    return inter / union


def ap50(pred_boxes: list[Box], gt_boxes: list[Box]) -> float:
    if len(pred_boxes) != len(gt_boxes) or not pred_boxes:
        raise MetricError("prediction/ground-truth count mismatch or empty input")
    hits = sum(1 for p, g in zip(pred_boxes, gt_boxes) if box_iou(p, g) >= 0.5)
    return hits / len(pred_boxes)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: list[str], references: list[str]) -> float:
    """Corpus BLEU with one reference per candidate."""
    if not candidates or len(candidates) != len(references):
        raise MetricError("empty candidate set or count mismatch with references")
    cand_tokens = [c.split() for c in candidates]
    ref_tokens = [r.split() for r in references]
    c_len = sum(len(t) for t in cand_tokens)
    r_len = sum(len(t) for t in ref_tokens)
    if c_len == 0:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, 5):
        num = 0
        den = 0
        for ct, rt in zip(cand_tokens, ref_tokens):
            cg = _ngrams(ct, n)
            rg = _ngrams(rt, n)
            num += sum(min(count, rg[g]) for g, count in cg.items())
            den += max(len(ct) - n + 1, 0)
        if den == 0:
            continue  # no candidate n-grams of this order anywhere
        orders += 1
        if num == 0:
            log_sum += math.log((num + 1) / (den + 1))
        else:
            log_sum += math.log(num / den)
    if orders == 0:
        return 0.0
    precision = math.exp(log_sum / orders)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * precision


def pixel_accuracy(preds: list[np.ndarray], gts: list[np.ndarray]) -> float:
    if len(preds) != len(gts) or not preds:
        raise MetricError("prediction/ground-truth count mismatch or empty input")
    correct = 0
    total = 0
    for p, g in zip(preds, gts):
        correct += int((np.asarray(p) == np.asarray(g)).sum())
        total += int(np.asarray(g).size)
    return correct / total


def spearman_rho(xs: list[float], ys: list[float]) -> float:
    """Spearman rank correlation with average ranks; 0.0 for constant input."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise MetricError("need two equally long sequences")

    def ranks(v: list[float]) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v), dtype=np.float64)
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return r

    rx, ry = ranks(xs), ranks(ys)
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))
