"""Evaluation and diagnostics: COCO-style mAP, loss share by IoU bin,
convergence traces, initialization sensitivity, and the regularizer sweep.

All analyses are pure over immutable inputs and reproducible bit for bit
under fixed seeds. Experiment helpers import the trainer lazily so the two
modules stay decoupled at import time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Detection, GroundTruth, iou_matrix
from .losses import SampleRecord

__all__ = [
    "EvalReport",
    "IoUHistogram",
    "COCO_THRESHOLDS",
    "coco_map",
    "average_precision",
    "loss_distribution_by_iou",
    "loss_share_histogram",
    "ConvergenceTrace",
    "convergence_trace",
    "InitSensitivityResult",
    "init_sensitivity",
    "lambda_sweep",
]

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
_RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class EvalReport:
    """mAP over the IoU threshold ladder plus the two headline cuts."""

    ap: float
    ap50: float
    ap75: float
    per_class: dict[int, float]
    n_gts: int
    n_dets: int

    def __post_init__(self):
        for v in (self.ap, self.ap50, self.ap75, *self.per_class.values()):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"AP value {v} out of [0, 1]")


def average_precision(tp_flags: np.ndarray, n_pos: int) -> float:
    """101-point interpolated AP from score-ordered true-positive flags."""
    if n_pos == 0:
        return 0.0
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags.astype(float))
    fp = np.cumsum((~tp_flags).astype(float))
    recall = tp / n_pos
    precision = tp / (tp + fp)
    # Precision envelope from the right, sampled on the fixed recall grid.
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, _RECALL_GRID, side="left")
    interp = np.where(idx < env.size, env[np.minimum(idx, env.size - 1)], 0.0)
    return float(interp.mean())


def _match_flags(dets: list[tuple[int, int, Detection]],
                 iou_cache: dict[int, np.ndarray], thr: float) -> np.ndarray:
    """Greedy matching at one threshold: detections in descending score
    order each claim the unmatched same-class ground truth of highest IoU
    at or above the threshold in their own scene (ties by ground-truth
    index)."""
    taken: dict[int, set[int]] = {}
    flags = np.zeros(len(dets), dtype=bool)
    for d_i, (scene_i, local_i, _) in enumerate(dets):
        ious = iou_cache[scene_i]
        if ious.size == 0:
            continue
        used = taken.setdefault(scene_i, set())
        best_j, best_iou = -1, -1.0
        for j in range(ious.shape[1]):
            ov = ious[local_i, j]
            if j in used or ov < thr:
                continue
            if ov > best_iou:
                best_j, best_iou = j, ov
        if best_j >= 0:
            used.add(best_j)
            flags[d_i] = True
    return flags


def coco_map(dets_per_scene: list[list[Detection]],
             gts_per_scene: list[list[GroundTruth]],
             thresholds: tuple[float, ...] = COCO_THRESHOLDS) -> EvalReport:
    """COCO-style mean average precision.

    Per class and IoU threshold, detections across scenes are sorted by
    descending score (ties by scene then input order) and greedily matched
    one-to-one against same-scene ground truths; AP is the 101-point
    interpolated area and the report averages over thresholds, then over
    classes that have at least one ground truth.
    """
    if len(dets_per_scene) != len(gts_per_scene):
        raise ValueError("detections and ground truths must align per scene")
    classes = sorted({g.class_id for gts in gts_per_scene for g in gts})
    n_dets = sum(len(d) for d in dets_per_scene)
    n_gts = sum(len(g) for g in gts_per_scene)
    if not classes:
        return EvalReport(0.0, 0.0, 0.0, {}, n_gts, n_dets)

    ap_by_class: dict[int, float] = {}
    ap_at: dict[float, list[float]] = {t: [] for t in thresholds}
    for c in classes:
        dets: list[tuple[int, int, Detection]] = []
        gt_count = 0
        iou_cache: dict[int, np.ndarray] = {}
        for s, (sdets, sgts) in enumerate(zip(dets_per_scene, gts_per_scene)):
            cls_dets = [d for d in sdets if d.class_id == c]
            cls_gts = [g for g in sgts if g.class_id == c]
            gt_count += len(cls_gts)
            for li, d in enumerate(cls_dets):
                dets.append((s, li, d))
            if cls_dets and cls_gts:
                iou_cache[s] = iou_matrix(np.stack([d.box.as_array() for d in cls_dets]),
                                          np.stack([g.box.as_array() for g in cls_gts]))
            else:
                iou_cache[s] = np.empty((len(cls_dets), 0))
        order = sorted(range(len(dets)), key=lambda i: (-dets[i][2].score, dets[i][0], dets[i][1]))
        dets = [dets[i] for i in order]
        aps = []
        for t in thresholds:
            flags = _match_flags(dets, iou_cache, t)
            ap_t = average_precision(flags, gt_count)
            aps.append(ap_t)
            ap_at[t].append(ap_t)
        ap_by_class[c] = float(np.mean(aps))

    ap = float(np.mean(list(ap_by_class.values())))
    ap50 = float(np.mean(ap_at[0.5])) if 0.5 in ap_at else 0.0
    ap75 = float(np.mean(ap_at[0.75])) if 0.75 in ap_at else 0.0
    return EvalReport(ap, ap50, ap75, ap_by_class, n_gts, n_dets)


@dataclass(frozen=True)
class IoUHistogram:
    """Share of (optionally weighted) loss per IoU bin over [0.5, 1.0].

    Bins have fixed width; the last bin is closed at 1.0. Samples below the
    range are not counted, and shares are percentages of the binned total,
    hence they sum to 100 whenever any loss mass lands in range.
    """

    edges: np.ndarray
    shares: np.ndarray   # percent
    counts: np.ndarray
    which: str
    weighted: bool

    @property
    def empty(self) -> bool:
        return float(self.counts.sum()) == 0.0


def loss_share_histogram(iou: np.ndarray, values: np.ndarray, lo: float = 0.5,
                         hi: float = 1.0, width: float = 0.1,
                         which: str = "cls", weighted: bool = True) -> IoUHistogram:
    iou = np.asarray(iou, dtype=float)
    values = np.asarray(values, dtype=float)
    n_bins = int(round((hi - lo) / width))
    edges = lo + width * np.arange(n_bins + 1)
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=int)
    in_range = (iou >= lo) & (iou <= hi)
    idx = np.minimum(((iou[in_range] - lo) / width).astype(int), n_bins - 1)
    np.add.at(sums, idx, values[in_range])
    np.add.at(counts, idx, 1)
    total = sums.sum()
    shares = 100.0 * sums / total if total > 0 else np.zeros(n_bins)
    return IoUHistogram(edges, shares, counts, which, weighted)


def loss_distribution_by_iou(records: list[SampleRecord], which: str = "cls",
                             weighted: bool = True, lo: float = 0.5, hi: float = 1.0,
                             width: float = 0.1) -> IoUHistogram:
    """Per-bin share of the (weighted) task loss over positive samples,
    binned by each sample's IoU. Only positives are counted."""
    if which not in ("cls", "reg"):
        raise ValueError("which must be 'cls' or 'reg'")
    pos = [r for r in records if r.positive]
    iou = np.array([r.iou for r in pos])
    if which == "cls":
        vals = np.array([(r.s_cls * r.l_cls if weighted else r.l_cls) for r in pos])
    else:
        vals = np.array([(r.s_reg * r.l_reg if weighted else r.l_reg) for r in pos])
    return loss_share_histogram(iou, vals, lo, hi, width, which, weighted)


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Trailing moving average; early entries average the available prefix."""
    if width <= 1:
        return x.astype(float).copy()
    c = np.concatenate([[0.0], np.cumsum(x, dtype=float)])
    n = x.shape[0]
    hi = c[1:]
    lo = c[np.maximum(np.arange(n) + 1 - width, 0)]
    denom = np.minimum(np.arange(n) + 1, width)
    return (hi - lo) / denom


@dataclass(frozen=True)
class ConvergenceTrace:
    iters: np.ndarray
    mean_lcls: np.ndarray
    mean_lreg: np.ndarray
    w_cls_pos: np.ndarray
    w_cls_neg: np.ndarray
    w_reg_pos: np.ndarray


def convergence_trace(history, width: int = 50) -> ConvergenceTrace:
    """Smoothed per-iteration weight and loss series from a train history."""
    if len(history) == 0:
        raise ValueError("history is empty")
    return ConvergenceTrace(
        np.array(history.iters),
        _moving_average(np.array(history.mean_lcls), width),
        _moving_average(np.array(history.mean_lreg), width),
        _moving_average(np.array(history.w_cls_pos), width),
        _moving_average(np.array(history.w_cls_neg), width),
        _moving_average(np.array(history.w_reg_pos), width),
    )


@dataclass(frozen=True)
class InitSensitivityResult:
    biases: tuple[float, ...]
    at_iteration: int
    cls_traces: np.ndarray   # (n_biases, iterations)
    reg_traces: np.ndarray
    cls_at_k: np.ndarray
    reg_at_k: np.ndarray

    @property
    def max_gap_cls(self) -> float:
        return float(self.cls_at_k.max() - self.cls_at_k.min())

    @property
    def max_gap_reg(self) -> float:
        return float(self.reg_at_k.max() - self.reg_at_k.min())

    @property
    def mean_cls(self) -> float:
        return float(self.cls_at_k.mean())

    @property
    def mean_reg(self) -> float:
        return float(self.reg_at_k.mean())


def init_sensitivity(base, biases: list[float], at_iteration: int = 500) -> InitSensitivityResult:
    """Train one run per head-bias initialization, sharing every other seed,
    and report the averaged-weight traces plus their spread at iteration k.

    The probed bias sets the last layer of both weight heads, so the runs
    start from visibly different average weights; a robust setup pulls them
    together within a few hundred iterations.
    """
    from .toydet import train  # lazy: avoids a module-level import cycle

    if not biases:
        raise ValueError("need at least one bias")
    epochs = max(1, math.ceil(at_iteration / base.iters_per_epoch))
    cls_traces, reg_traces = [], []
    for b in biases:
        cfg = replace(base, strategy="swn", epochs=epochs, eval_scenes=0,
                      swn=replace(base.swn, head_bias_init=float(b)))
        history = train(cfg).history
        cls_traces.append(history.mean_w_cls_all())
        reg_traces.append(np.array(history.w_reg_pos))
    cls_traces = np.stack(cls_traces)
    reg_traces = np.stack(reg_traces)
    k = min(at_iteration, cls_traces.shape[1]) - 1
    return InitSensitivityResult(tuple(float(b) for b in biases), k + 1,
                                 cls_traces, reg_traces,
                                 cls_traces[:, k], reg_traces[:, k])


def lambda_sweep(base, lambdas: list[float]) -> list[tuple[float, float]]:
    """Final held-out mAP per regularizer coefficient (both tasks share it)."""
    from .losses import RegularizerConfig
    from .toydet import train

    rows = []
    for lam in lambdas:
        cfg = replace(base, strategy="swn",
                      reg=RegularizerConfig(float(lam), float(lam)))
        result = train(cfg)
        rows.append((float(lam), result.final_eval.ap if result.final_eval else 0.0))
    return rows
