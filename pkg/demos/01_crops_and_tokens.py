"""
Crops, boxes and visual tokens
==============================

How an evidence box turns into a crop request, and what each request costs
in visual tokens relative to the full-resolution image.
"""

from cropcall import CROP_RECTS, ImageDims, Rect, map_bbox_to_crops, visual_tokens
from cropcall.tokens import trajectory_account

# the ten fixed crops, in normalized [x1, y1, x2, y2]
for cid, r in CROP_RECTS.items():
    print(f"{cid:>4}  {r.x1:.2f} {r.y1:.2f} {r.x2:.2f} {r.y2:.2f}  area {r.area:.2f}")

# a small box inside the top-left quadrant maps to that quadrant
print(map_bbox_to_crops(Rect(0.05, 0.05, 0.4, 0.45)))

# a wide strip across the top maps to the top half
print(map_bbox_to_crops(Rect(0.02, 0.05, 0.98, 0.4)))

# a box straddling the middle matches no crop well; coverage repair picks the
# smallest crop that contains it
print(map_bbox_to_crops(Rect(0.3, 0.3, 0.7, 0.7)))
print(map_bbox_to_crops(Rect(0.1, 0.2, 0.9, 0.6)))

# tokens: one per 28x28 patch, rounded up on each axis
full = ImageDims(1120, 1120)
print(visual_tokens(full), visual_tokens(ImageDims(560, 560)), visual_tokens(ImageDims(1000, 30)))

# relative token ratio of a few trajectories
for crops in ([], ["0"], ["5"], ["0", "1"], ["all"]):
    acct = trajectory_account(full, crops)
    print(f"{str(crops):<12} tokens {acct.t_sample:>5}  RTR {acct.rtr:.4f}")
