"""Per-box importance scores from pixel grids or ground-truth boxes.

Boxes are axis-aligned rectangles (x0, y0, x1, y1) in pixel coordinates with
x1 > x0 and y1 > y0, lying inside the H x W canvas of `pixel_importance`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BoxGeometry:
    detected_boxes: np.ndarray              # (k, 4)
    ground_truth_boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    pixel_importance: np.ndarray | None = None  # (H, W) in [0, 1]

    def __post_init__(self):
        self.detected_boxes = np.asarray(self.detected_boxes, dtype=np.float64).reshape(-1, 4)
        self.ground_truth_boxes = np.asarray(self.ground_truth_boxes, dtype=np.float64).reshape(-1, 4)
        if self.pixel_importance is not None:
            self.pixel_importance = np.asarray(self.pixel_importance, dtype=np.float64)


def _inside_mask(box, h, w):
    x0, y0, x1, y1 = box
    cols = np.arange(w)
    rows = np.arange(h)
    inside_c = (cols >= x0) & (cols < x1)
    inside_r = (rows >= y0) & (rows < y1)
    return np.outer(inside_r, inside_c)


def box_scores_pixel(geom):
    """score_k = mean importance inside box k / (inside mean + outside mean).

    A box capturing all importance mass (and none outside) scores 1; when both
    means are zero the score is defined as 0.
    """
    grid = geom.pixel_importance
    if grid is None:
        raise ValueError("pixel scores need a pixel_importance grid")
    h, w = grid.shape
    scores = np.zeros(len(geom.detected_boxes))
    for k, box in enumerate(geom.detected_boxes):
        mask = _inside_mask(box, h, w)
        n_in = int(mask.sum())
        n_out = mask.size - n_in
        if n_in == 0 or n_out == 0:
            raise ValueError("each box needs at least one pixel inside and one outside")
        e_in = grid[mask].mean()
        e_out = grid[~mask].mean()
        denom = e_in + e_out
        scores[k] = 0.0 if denom == 0.0 else e_in / denom
    return scores


def iou(a, b):
    """Intersection-over-union of two rectangles; degenerate boxes give 0."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = max(ax1 - ax0, 0.0) * max(ay1 - ay0, 0.0)
    area_b = max(bx1 - bx0, 0.0) * max(by1 - by0, 0.0)
    if area_a == 0.0 or area_b == 0.0:
        return 0.0
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    return inter / (area_a + area_b - inter)


def box_scores_iou(geom):
    """score_k = max IoU between detected box k and any ground-truth box."""
    if len(geom.ground_truth_boxes) == 0:
        raise ValueError("IoU scores need at least one ground-truth box")
    return np.array([
        max(iou(det, gt) for gt in geom.ground_truth_boxes)
        for det in geom.detected_boxes
    ])
