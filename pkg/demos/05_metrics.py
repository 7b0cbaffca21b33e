"""The four evaluation metrics on tiny hand-checkable inputs.

Run:  python demos/05_metrics.py
"""
import numpy as np

from visq.boxes import Box
from visq.metrics import ap50, bleu4, mean_iou, overall_iou

print("== mIoU ==")
pred = np.array([[0, 1, 1, 1]])
gt = np.array([[0, 0, 1, 1]])
print("pred", pred.tolist(), "gt", gt.tolist())
print("per-class IoU: class0 = 1/2, class1 = 2/3 -> mean", mean_iou([pred], [gt], 2))

print("\n== oIoU ==")
p1, g1 = np.array([[1, 1]], dtype=bool), np.array([[1, 0]], dtype=bool)
p2, g2 = np.array([[1, 0]], dtype=bool), np.array([[0, 1]], dtype=bool)
print("samples with (I,U) = (1,2) and (0,2) ->", overall_iou([p1, p2], [g1, g2]))

print("\n== AP50 ==")
pred_box = Box(0, 0, 1, 1)
gt_box = Box(0.5, 0.5, 1, 1)
print("full-canvas box vs quarter box has IoU 0.25 -> AP50", ap50([pred_box], [gt_box]))
print("exact box -> AP50", ap50([gt_box], [gt_box]))

print("\n== BLEU-4 ==")
cand, ref = "a red circle", "a red circle and a blue square"
print(f"cand {cand!r} vs ref {ref!r}")
print("brevity-penalized BLEU:", round(bleu4([cand], [ref]), 4))
print("identical sentences ->", bleu4([ref], [ref]))
