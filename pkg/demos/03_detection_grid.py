"""
Grid detection geometry
=======================

Objects are assigned to the grid cell containing their center; encoding
writes in-cell offsets, size, objectness, and a one-hot class. Decoding
inverts the encoding, and non-maximum suppression removes overlapping
duplicates per class.
"""

import numpy as np

from capsyolo import BBox, Detection, GridSpec, decode_predictions, encode_targets, iou, nms

grid = GridSpec(S=4, B=2, K=3)

# Encode two objects, decode them back.
objects = [
    (BBox(0.10, 0.10, 0.30, 0.40), 0),
    (BBox(0.55, 0.60, 0.95, 0.90), 2),
]
target = encode_targets(objects, grid)
print("target tensor shape:", target.shape)

decoded = decode_predictions(target, grid, conf_threshold=0.5)
for det in decoded:
    b = det.box
    print(f"decoded class {det.class_id}: "
          f"({b.x_min:.3f}, {b.y_min:.3f}, {b.x_max:.3f}, {b.y_max:.3f})")

# IoU of the classic offset squares: overlap 1, union 7.
print("\niou((0,0,2,2), (1,1,3,3)) =", iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)))

# NMS keeps the stronger of two near-duplicates and anything disjoint.
probs = np.array([0.9, 0.05, 0.05])
candidates = [
    Detection(box=BBox(0.1, 0.1, 0.4, 0.4), objectness=0.9, class_probs=probs),
    Detection(box=BBox(0.12, 0.09, 0.41, 0.42), objectness=0.7, class_probs=probs),
    Detection(box=BBox(0.6, 0.6, 0.9, 0.9), objectness=0.6, class_probs=probs),
]
kept = nms(candidates, iou_threshold=0.5)
print(f"\nNMS kept {len(kept)} of {len(candidates)} detections:")
for det in kept:
    print(f"  score {det.score:.3f} at ({det.box.x_min:.2f}, {det.box.y_min:.2f})")
