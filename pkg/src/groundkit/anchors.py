"""Anchor grids, IoU, box coordinate codecs, and ground-truth matching.

Boxes live either on the normalized grid spanning (-1,-1)..(1,1) or in pixel
coordinates; the two never mix silently. All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NORM = "norm"
PIXEL = "pixel"


class GeometryError(ValueError):
    """Invalid box geometry or frame mismatch."""


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float
    frame: str = NORM

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise GeometryError(
                f"degenerate box ({self.x1},{self.y1},{self.x2},{self.y2})"
            )
        if self.frame not in (NORM, PIXEL):
            raise GeometryError(f"unknown frame {self.frame!r}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def area(self) -> float:
        return self.width * self.height

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def validate_normalized(self, slack: float = 1.5) -> "Box":
        """Checked at validation boundaries; regression overshoot up to `slack` is legal."""
        if self.frame != NORM:
            raise GeometryError("validate_normalized on a pixel-frame box")
        for v in self.astuple():
            if not -slack <= v <= slack:
                raise GeometryError(f"normalized coordinate {v} outside +-{slack}")
        return self


def box_norm_to_pixel(box: Box, source_size: tuple[int, int]) -> Box:
    """Map a normalized-frame box onto a W x H pixel image."""
    if box.frame != NORM:
        raise GeometryError("box_norm_to_pixel expects a normalized box")
    w, h = source_size
    x1 = (box.x1 + 1.0) * 0.5 * w
    x2 = (box.x2 + 1.0) * 0.5 * w
    y1 = (box.y1 + 1.0) * 0.5 * h
    y2 = (box.y2 + 1.0) * 0.5 * h
    x1, x2 = max(0.0, x1), min(float(w), x2)
    y1, y2 = max(0.0, y1), min(float(h), y2)
    if x2 - x1 < 1.0:
        c = min(max(0.5 * (x1 + x2), 0.5), w - 0.5)
        x1, x2 = c - 0.5, c + 0.5
    if y2 - y1 < 1.0:
        c = min(max(0.5 * (y1 + y2), 0.5), h - 0.5)
        y1, y2 = c - 0.5, c + 0.5
    return Box(x1, y1, x2, y2, frame=PIXEL)


def box_pixel_to_norm(box: Box, source_size: tuple[int, int]) -> Box:
    if box.frame != PIXEL:
        raise GeometryError("box_pixel_to_norm expects a pixel box")
    w, h = source_size
    return Box(
        2.0 * box.x1 / w - 1.0,
        2.0 * box.y1 / h - 1.0,
        2.0 * box.x2 / w - 1.0,
        2.0 * box.y2 / h - 1.0,
        frame=NORM,
    )


# ---------------------------------------------------------------------------
# anchor geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnchorSpec:
    """Aspect templates: 9 anchors per cell by default (3 scales x 3 ratios)."""

    scales: tuple[float, ...] = (1.0, 2.0 ** (1.0 / 3.0), 2.0 ** (2.0 / 3.0))
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    base: float = 1.5  # anchor side in units of the grid-cell side

    def __post_init__(self):
        if any(s <= 0 for s in self.scales) or any(r <= 0 for r in self.ratios):
            raise GeometryError("anchor scales and ratios must be positive")
        if self.base <= 0:
            raise GeometryError("anchor base must be positive")

    @property
    def per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)


def anchor_aspect(s: float, r: float) -> tuple[float, float]:
    """(height, width) of a scale-s, ratio-r anchor: h = s*sqrt(r), w = s/sqrt(r)."""
    if s <= 0 or r <= 0:
        raise GeometryError(f"anchor_aspect: scale/ratio must be positive, got s={s}, r={r}")
    sq = math.sqrt(r)
    return (s * sq, s / sq)


def generate_grid(n: int) -> np.ndarray:
    """(n*n, 2) array of cell centers (cx, cy), row-major, inside (-1,1)^2."""
    if n <= 0:
        raise GeometryError(f"generate_grid: n must be positive, got {n}")
    coords = -1.0 + (2.0 * np.arange(n) + 1.0) / n
    cx, cy = np.meshgrid(coords, coords)  # row-major: gy outer, gx inner
    return np.stack([cx.ravel(), cy.ravel()], axis=1)


class AnchorSet:
    """All anchors over a pyramid, in a stable flat order.

    Flat order is level-major, row-major over cells within a level, and
    (scale-major, ratio-minor) within a cell.
    """

    def __init__(self, grid_sizes, spec: AnchorSpec):
        self.grid_sizes = tuple(int(n) for n in grid_sizes)
        self.spec = spec
        boxes = []
        levels = []
        cells = []
        aspects = [anchor_aspect(s, r) for s in spec.scales for r in spec.ratios]
        for j, n in enumerate(self.grid_sizes):
            centers = generate_grid(n)  # (n*n, 2)
            cell_side = 2.0 / n
            gx, gy = np.meshgrid(np.arange(n), np.arange(n))
            cell_idx = np.stack([gx.ravel(), gy.ravel()], axis=1)
            per_cell = []
            for (h, w) in aspects:
                hh = 0.5 * spec.base * h * cell_side
                ww = 0.5 * spec.base * w * cell_side
                per_cell.append(
                    np.stack(
                        [
                            centers[:, 0] - ww,
                            centers[:, 1] - hh,
                            centers[:, 0] + ww,
                            centers[:, 1] + hh,
                        ],
                        axis=1,
                    )
                )
            # interleave so each cell's anchors are contiguous
            level_boxes = np.stack(per_cell, axis=1).reshape(-1, 4)
            boxes.append(level_boxes)
            levels.append(np.full(level_boxes.shape[0], j, dtype=np.int32))
            cells.append(np.repeat(cell_idx, len(aspects), axis=0))
        # geometry stays float64 so vectorized matching agrees bit-for-bit
        # with scalar float64 IoU at the 0.5 threshold
        self.boxes = np.concatenate(boxes, axis=0).astype(np.float64)
        self.levels = np.concatenate(levels, axis=0)
        self.cells = np.concatenate(cells, axis=0).astype(np.int32)
        self.widths = self.boxes[:, 2] - self.boxes[:, 0]
        self.heights = self.boxes[:, 3] - self.boxes[:, 1]

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def box(self, i: int) -> Box:
        x1, y1, x2, y2 = (float(v) for v in self.boxes[i])
        return Box(x1, y1, x2, y2, frame=NORM)

    @staticmethod
    def expected_count(grid_sizes, spec: AnchorSpec) -> int:
        return spec.per_cell * sum(int(n) * int(n) for n in grid_sizes)


# ---------------------------------------------------------------------------
# IoU and matching
# ---------------------------------------------------------------------------


def iou(a: Box, b: Box) -> float:
    if a.frame != b.frame:
        raise GeometryError(f"iou: frame mismatch {a.frame} vs {b.frame}")
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union


def iou_one_vs_many(gt: Box, boxes: np.ndarray) -> np.ndarray:
    """IoU of one box against an (N,4) matrix of boxes in the same frame."""
    ix = np.minimum(gt.x2, boxes[:, 2]) - np.maximum(gt.x1, boxes[:, 0])
    iy = np.minimum(gt.y2, boxes[:, 3]) - np.maximum(gt.y1, boxes[:, 1])
    inter = np.maximum(ix, 0.0) * np.maximum(iy, 0.0)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = gt.area() + areas - inter
    return inter / union


@dataclass
class MatchResult:
    g: np.ndarray  # (N,) float32 in {0,1}
    candidates: np.ndarray  # indices where g == 1
    forced: bool

    @property
    def count(self) -> int:
        return int(self.candidates.size)


def match_anchors(anchor_set: AnchorSet, gt: Box, threshold: float = 0.5) -> MatchResult:
    """Positive anchors have IoU >= threshold; the best anchor is forced positive
    when none qualifies so the candidate set is never empty."""
    if gt.frame != NORM:
        raise GeometryError("match_anchors expects a normalized ground-truth box")
    ious = iou_one_vs_many(gt, anchor_set.boxes)
    g = (ious >= threshold).astype(np.float32)
    forced = False
    if not g.any():
        g[int(np.argmax(ious))] = 1.0
        forced = True
    return MatchResult(g=g, candidates=np.flatnonzero(g > 0), forced=forced)


# ---------------------------------------------------------------------------
# box regression codec (anchor-size-normalized corner offsets)
# ---------------------------------------------------------------------------


def encode_box(gt: Box, anchor: Box) -> tuple[float, float, float, float]:
    if gt.frame != anchor.frame:
        raise GeometryError("encode_box: frame mismatch")
    wa, ha = anchor.width, anchor.height
    if wa <= 0 or ha <= 0:
        raise GeometryError("encode_box: degenerate anchor")
    return (
        (gt.x1 - anchor.x1) / wa,
        (gt.y1 - anchor.y1) / ha,
        (gt.x2 - anchor.x2) / wa,
        (gt.y2 - anchor.y2) / ha,
    )


def decode_box(r, anchor: Box, clip: bool = True) -> Box:
    wa, ha = anchor.width, anchor.height
    x1 = anchor.x1 + float(r[0]) * wa
    y1 = anchor.y1 + float(r[1]) * ha
    x2 = anchor.x2 + float(r[2]) * wa
    y2 = anchor.y2 + float(r[3]) * ha
    if clip:
        x1, x2 = np.clip([x1, x2], -1.0, 1.0)
        y1, y2 = np.clip([y1, y2], -1.0, 1.0)
        x1, x2 = _unfold(float(x1), float(x2))
        y1, y2 = _unfold(float(y1), float(y2))
    return Box(float(x1), float(y1), float(x2), float(y2), frame=NORM)


def _unfold(lo: float, hi: float, min_side: float = 1e-3) -> tuple[float, float]:
    """Expand a clipped-away interval to min_side, staying inside [-1, 1]."""
    if hi - lo >= min_side:
        return lo, hi
    c = 0.5 * (lo + hi)
    c = min(max(c, -1.0 + 0.5 * min_side), 1.0 - 0.5 * min_side)
    return c - 0.5 * min_side, c + 0.5 * min_side
