"""Axis-aligned boxes, IoU, anchor grids, offset coding, and NMS variants.

Coordinates are continuous reals in abstract units; a box is the closed
rectangle [x1, x2] x [y1, y2] with area (x2-x1)*(y2-y1). Degenerate
(zero-area) boxes are legal inputs to IoU but illegal as anchors, since
offset encoding divides by the anchor's width and height.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Box",
    "Detection",
    "GroundTruth",
    "AnchorSet",
    "Offset4",
    "iou",
    "iou_matrix",
    "elementwise_iou",
    "encode_offsets",
    "decode_offsets",
    "encode_offsets_array",
    "decode_offsets_array",
    "generate_anchors",
    "nms",
    "nms_indices",
    "soft_nms",
    "boxes_to_csv",
    "boxes_from_csv",
]


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"box corners out of order: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)

    @staticmethod
    def from_array(a) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in a)
        return Box(x1, y1, x2, y2)


@dataclass(frozen=True)
class Detection:
    """A scored class prediction attached to a box (evaluation side)."""

    box: Box
    class_id: int
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")


@dataclass(frozen=True)
class GroundTruth:
    """An annotated object; class 0 is reserved for background."""

    box: Box
    class_id: int

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError("ground-truth class_id must be >= 1")


@dataclass(frozen=True)
class Offset4:
    """R-CNN box parameterization: center deltas over anchor size, log size ratios."""

    dx: float
    dy: float
    dw: float
    dh: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh], dtype=float)

    @staticmethod
    def from_array(a) -> "Offset4":
        dx, dy, dw, dh = (float(v) for v in a)
        return Offset4(dx, dy, dw, dh)


class AnchorSet:
    """A deterministic grid of prior boxes.

    Enumeration order is row-major over grid cells, then scale, then aspect
    ratio, so |anchors| = rows * cols * len(scales) * len(ratios).
    """

    def __init__(self, boxes: np.ndarray, rows: int, cols: int, cell_size: float,
                 scales, ratios):
        self.boxes = np.asarray(boxes, dtype=float)
        self.rows = rows
        self.cols = cols
        self.cell_size = cell_size
        self.scales = tuple(float(s) for s in scales)
        self.ratios = tuple(float(r) for r in ratios)
        expected = rows * cols * len(self.scales) * len(self.ratios)
        if self.boxes.shape != (expected, 4):
            raise ValueError(f"expected {expected} anchors, got shape {self.boxes.shape}")

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def box(self, i: int) -> Box:
        return Box.from_array(self.boxes[i])

    def __iter__(self):
        for row in self.boxes:
            yield Box.from_array(row)


def generate_anchors(grid: tuple[int, int, float], scales, ratios) -> AnchorSet:
    """Place anchors on a regular grid covering positions, scales and aspect ratios.

    `grid` is (rows, cols, cell_size); each cell contributes one anchor per
    (scale, ratio) pair, centered on the cell. An anchor's base side is
    cell_size * scale and the aspect ratio r = height/width is applied
    preserving area, so width = base/sqrt(r), height = base*sqrt(r).
    """
    rows, cols, cell = int(grid[0]), int(grid[1]), float(grid[2])
    scales = tuple(float(s) for s in scales)
    ratios = tuple(float(r) for r in ratios)
    if rows <= 0 or cols <= 0 or cell <= 0:
        raise ValueError("grid dimensions must be positive")
    if not scales or not ratios:
        raise ValueError("scales and ratios must be non-empty")
    if any(s <= 0 for s in scales) or any(r <= 0 for r in ratios):
        raise ValueError("scales and ratios must be positive")

    out = np.empty((rows * cols * len(scales) * len(ratios), 4), dtype=float)
    i = 0
    for r in range(rows):
        cy = (r + 0.5) * cell
        for c in range(cols):
            cx = (c + 0.5) * cell
            for s in scales:
                base = cell * s
                for ar in ratios:
                    w = base / math.sqrt(ar)
                    h = base * math.sqrt(ar)
                    out[i] = (cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
                    i += 1
    return AnchorSet(out, rows, cols, cell, scales, ratios)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union has zero area."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (N,4) and (M,4) box arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
    return out


def elementwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of row-aligned (N,4) box arrays, one value per row."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    if a.shape != b.shape:
        raise ValueError("box arrays must be row-aligned")
    ix = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    iy = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a + area_b - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def encode_offsets(anchor: Box, target: Box) -> Offset4:
    """Express `target` relative to `anchor` (center deltas, log size ratios)."""
    if anchor.width <= 0.0 or anchor.height <= 0.0:
        raise ValueError("anchor must have positive width and height")
    if target.width <= 0.0 or target.height <= 0.0:
        raise ValueError("target must have positive width and height")
    acx, acy = anchor.center
    tcx, tcy = target.center
    return Offset4(
        (tcx - acx) / anchor.width,
        (tcy - acy) / anchor.height,
        math.log(target.width / anchor.width),
        math.log(target.height / anchor.height),
    )


def decode_offsets(anchor: Box, off: Offset4) -> Box:
    """Exact inverse of encode_offsets."""
    if anchor.width <= 0.0 or anchor.height <= 0.0:
        raise ValueError("anchor must have positive width and height")
    acx, acy = anchor.center
    cx = acx + off.dx * anchor.width
    cy = acy + off.dy * anchor.height
    w = anchor.width * math.exp(off.dw)
    h = anchor.height * math.exp(off.dh)
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def encode_offsets_array(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorized encode_offsets over row-aligned (N,4) arrays."""
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 4)
    targets = np.asarray(targets, dtype=float).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    if np.any(aw <= 0.0) or np.any(ah <= 0.0):
        raise ValueError("anchors must have positive width and height")
    acx = 0.5 * (anchors[:, 0] + anchors[:, 2])
    acy = 0.5 * (anchors[:, 1] + anchors[:, 3])
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tcx = 0.5 * (targets[:, 0] + targets[:, 2])
    tcy = 0.5 * (targets[:, 1] + targets[:, 3])
    return np.stack([(tcx - acx) / aw, (tcy - acy) / ah, np.log(tw / aw), np.log(th / ah)], axis=1)


def decode_offsets_array(anchors: np.ndarray, offs: np.ndarray) -> np.ndarray:
    """Vectorized decode_offsets over row-aligned (N,4) arrays."""
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 4)
    offs = np.asarray(offs, dtype=float).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    if np.any(aw <= 0.0) or np.any(ah <= 0.0):
        raise ValueError("anchors must have positive width and height")
    acx = 0.5 * (anchors[:, 0] + anchors[:, 2])
    acy = 0.5 * (anchors[:, 1] + anchors[:, 3])
    cx = acx + offs[:, 0] * aw
    cy = acy + offs[:, 1] * ah
    w = aw * np.exp(offs[:, 2])
    h = ah * np.exp(offs[:, 3])
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def nms(dets: list[Detection], iou_thr: float) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    Detections are visited in descending score order (ties broken by input
    index, so the result is stable); a detection is suppressed when it
    overlaps an already kept detection of the same class with IoU strictly
    above `iou_thr`. Output preserves pick order.
    """
    if not (0.0 <= iou_thr <= 1.0):
        raise ValueError(f"iou_thr must be in [0, 1], got {iou_thr}")
    if not all(math.isfinite(d.score) for d in dets):
        raise ValueError("detection scores must be finite")
    kept_idx: list[int] = []
    by_class: dict[int, list[int]] = {}
    for i, d in enumerate(dets):
        by_class.setdefault(d.class_id, []).append(i)
    for class_id, idx in by_class.items():
        order = sorted(idx, key=lambda i: (-dets[i].score, i))
        boxes = np.stack([dets[i].box.as_array() for i in order])
        overlaps = iou_matrix(boxes, boxes)
        alive = np.ones(len(order), dtype=bool)
        for j in range(len(order)):
            if alive[j]:
                kept_idx.append(order[j])
                alive &= overlaps[j] <= iou_thr
                alive[j] = False
    kept_idx.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in kept_idx]


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_thr: float) -> np.ndarray:
    """Class-agnostic greedy NMS over raw arrays; returns kept input indices
    in pick order (descending score, ties by input index)."""
    if not (0.0 <= iou_thr <= 1.0):
        raise ValueError(f"iou_thr must be in [0, 1], got {iou_thr}")
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    scores = np.asarray(scores, dtype=float)
    n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=int)
    order = np.lexsort((np.arange(n), -scores))
    overlaps = iou_matrix(boxes[order], boxes[order])
    alive = np.ones(n, dtype=bool)
    kept = []
    for j in range(n):
        if alive[j]:
            kept.append(int(order[j]))
            alive &= overlaps[j] <= iou_thr
            alive[j] = False
    return np.array(kept, dtype=int)


def soft_nms(dets: list[Detection], sigma: float, score_floor: float) -> list[Detection]:
    """Gaussian soft suppression: rescore instead of remove.

    Per class, the highest-scoring remaining detection is kept and every
    other detection's score is multiplied by exp(-iou^2 / sigma) w.r.t. the
    kept box. Detections whose score falls below `score_floor` are dropped
    (including picked ones, so a floor above 1 empties the output).
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    out: list[Detection] = []
    by_class: dict[int, list[tuple[int, Box, float]]] = {}
    for i, d in enumerate(dets):
        by_class.setdefault(d.class_id, []).append((i, d.box, d.score))
    for class_id in sorted(by_class):
        active = by_class[class_id]
        while active:
            j = min(range(len(active)), key=lambda k: (-active[k][2], active[k][0]))
            idx, box, score = active.pop(j)
            if score < score_floor:
                break  # everything remaining scores no higher
            out.append(Detection(box, class_id, score))
            rescored = []
            for oi, obox, oscore in active:
                ov = iou(box, obox)
                ns = oscore * math.exp(-(ov * ov) / sigma)
                if ns >= score_floor:
                    rescored.append((oi, obox, ns))
            active = rescored
    out.sort(key=lambda d: -d.score)
    return out


_FMT = "{:.9g}"


def boxes_to_csv(items) -> str:
    """Serialize boxes to CSV rows `x1,y1,x2,y2[,class_id][,score]`.

    Accepts Box (4 columns), GroundTruth (5) or Detection (6); 9 significant
    digits for real values.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for it in items:
        if isinstance(it, Detection):
            b = it.box
            w.writerow([_FMT.format(b.x1), _FMT.format(b.y1), _FMT.format(b.x2),
                        _FMT.format(b.y2), it.class_id, _FMT.format(it.score)])
        elif isinstance(it, GroundTruth):
            b = it.box
            w.writerow([_FMT.format(b.x1), _FMT.format(b.y1), _FMT.format(b.x2),
                        _FMT.format(b.y2), it.class_id])
        elif isinstance(it, Box):
            w.writerow([_FMT.format(it.x1), _FMT.format(it.y1),
                        _FMT.format(it.x2), _FMT.format(it.y2)])
        else:
            raise TypeError(f"cannot serialize {type(it).__name__}")
    return buf.getvalue()


def boxes_from_csv(text: str) -> list:
    """Parse rows written by boxes_to_csv; column count selects the type."""
    out = []
    for row in csv.reader(io.StringIO(text)):
        if not row:
            continue
        vals = [float(v) for v in row[:4]]
        box = Box(*vals)
        if len(row) == 4:
            out.append(box)
        elif len(row) == 5:
            out.append(GroundTruth(box, int(row[4])))
        elif len(row) == 6:
            out.append(Detection(box, int(row[4]), float(row[5])))
        else:
            raise ValueError(f"unexpected column count {len(row)}")
    return out
