"""Tour of the evaluation metrics on small hand-checkable inputs.

Run: python3 demos/metrics_demo.py
"""

from mmrag.metrics import (
    EditCostConfig,
    f1,
    order_score,
    position_score,
    recall,
    rouge_l,
    weighted_edit_distance,
)
from mmrag.model import EMPTY, PlacementSequence

print("== set metrics ==")
pred, gt = {"A", "C"}, {"A", "B"}
print(f"pred={pred} gt={gt}: recall={recall(pred, gt)}, f1={f1(pred, gt):.3f}")

print("\n== order score: edit distance over image orderings ==")
costs = EditCostConfig(p1=1.0, p2=0.8, p3=0.5, p=1.0)
for pred_seq in (["A", "B"], ["B", "A"], ["A"], ["A", "B", "C"], []):
    dist = weighted_edit_distance(["A", "B"], pred_seq, costs)
    score = order_score(["A", "B"], pred_seq, costs)
    print(f"gt=[A,B] pred={pred_seq!r:16} dist={dist:.2f} score={score:.3f}")

print("\nsubstitution (p3) is cheaper than delete+insert, so a swap costs 1.0:")
print("dist([A,B] -> [B,A]) =", weighted_edit_distance(["A", "B"], ["B", "A"], costs))

print("\n== position score: per-slot credit ==")
gt_seq = PlacementSequence(("A", EMPTY, "B"))
for slots in (("A", EMPTY, "B"), ("A", "B", EMPTY), (EMPTY, EMPTY, EMPTY), ("B", EMPTY, "A")):
    print(f"pred={slots}: {position_score(gt_seq, PlacementSequence(slots)):.3f}")

print("\n== ROUGE-L ==")
print(rouge_l("the cat sat", "the cat ran fast"), "(= 4/7)")
