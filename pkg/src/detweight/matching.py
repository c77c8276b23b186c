"""Anchor-to-ground-truth assignment and the baseline sampling strategies,
each expressed as a pair of per-sample weight vectors over the batch.

Hard selection schemes (random sampling, top-loss mining, score-threshold
gating) become indicator weights; soft schemes (focal, inverse-variance)
produce real-valued weights. Anchors labeled `ignore` get zero weight from
every strategy and enter neither loss sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import AnchorSet, GroundTruth, iou_matrix
from .nn import rng_from_seed

__all__ = [
    "POSITIVE",
    "NEGATIVE",
    "IGNORE",
    "MatchResult",
    "WeightAssignment",
    "StrategyConfig",
    "STRATEGY_NAMES",
    "match_anchors",
    "random_sampling_weights",
    "ohem_weights",
    "focal_weights",
    "kl_regression_weights",
    "rpn_score_weights",
]

POSITIVE = 1
NEGATIVE = 0
IGNORE = -1

STRATEGY_NAMES = ("random", "ohem", "focal", "kl", "rpn", "swn")


@dataclass
class MatchResult:
    """Per-anchor assignment: best ground truth, its IoU, and the label."""

    assigned_gt: np.ndarray   # int, -1 when unassigned
    max_iou: np.ndarray       # float
    label: np.ndarray         # POSITIVE / NEGATIVE / IGNORE
    class_id: np.ndarray      # assigned class for positives, 0 otherwise

    def __len__(self) -> int:
        return self.label.shape[0]

    @property
    def positive_mask(self) -> np.ndarray:
        return self.label == POSITIVE

    @property
    def negative_mask(self) -> np.ndarray:
        return self.label == NEGATIVE


@dataclass
class WeightAssignment:
    """The two weight vectors a strategy assigns over a batch."""

    s_cls: np.ndarray
    s_reg: np.ndarray

    def __post_init__(self):
        self.s_cls = np.asarray(self.s_cls, dtype=float)
        self.s_reg = np.asarray(self.s_reg, dtype=float)
        if self.s_cls.shape != self.s_reg.shape:
            raise ValueError("weight vectors must have equal length")
        if np.any(self.s_cls < 0) or np.any(self.s_reg < 0):
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class StrategyConfig:
    """Knobs shared by the baseline strategies.

    n_p / n_n are per-scene sample budgets, gamma the focal exponent, rho
    the foreground-score gate, pos_thr / neg_thr the assignment IoU bands.
    """

    n_p: int = 32
    n_n: int = 96
    gamma: float = 2.0
    rho: float = 0.5
    pos_thr: float = 0.5
    neg_thr: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.n_p < 0 or self.n_n < 0:
            raise ValueError("sample counts must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError("rho must be in [0, 1]")
        if not (self.neg_thr <= self.pos_thr):
            raise ValueError("need neg_thr <= pos_thr")


def match_anchors(anchors: AnchorSet, gts: list[GroundTruth],
                  cfg: StrategyConfig) -> MatchResult:
    """Assign each anchor to its best-overlap ground truth.

    An anchor is positive when its best IoU reaches pos_thr, negative below
    neg_thr, and ignored in between. Each ground truth additionally forces
    its own best-overlap anchor positive so no object is left unmatched on
    a coarse grid; ties break toward the lower index.
    """
    n = len(anchors)
    if n == 0:
        raise ValueError("anchor set is empty")
    if not gts:
        return MatchResult(
            assigned_gt=np.full(n, -1, dtype=int),
            max_iou=np.zeros(n),
            label=np.full(n, NEGATIVE, dtype=int),
            class_id=np.zeros(n, dtype=int),
        )
    gt_boxes = np.stack([g.box.as_array() for g in gts])
    ious = iou_matrix(anchors.boxes, gt_boxes)
    assigned = ious.argmax(axis=1)
    max_iou = ious[np.arange(n), assigned]

    label = np.full(n, IGNORE, dtype=int)
    label[max_iou < cfg.neg_thr] = NEGATIVE
    label[max_iou >= cfg.pos_thr] = POSITIVE
    # Force-match: each ground truth claims its best anchor, in gt order.
    for j in range(len(gts)):
        best = int(ious[:, j].argmax())
        label[best] = POSITIVE
        assigned[best] = j

    assigned = np.where(label == POSITIVE, assigned, -1)
    class_id = np.zeros(n, dtype=int)
    pos = label == POSITIVE
    class_id[pos] = np.array([gts[j].class_id for j in assigned[pos]], dtype=int)
    return MatchResult(assigned, max_iou, label, class_id)


def _empty_like(m: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(len(m)), np.zeros(len(m))


def random_sampling_weights(m: MatchResult, cfg: StrategyConfig) -> WeightAssignment:
    """Select up to n_p positives and n_n negatives uniformly at random.

    Selection is reproducible from cfg.seed (PCG64). Selected samples get
    classification weight 1; regression weight 1 goes to selected positives.
    """
    rng = rng_from_seed(cfg.seed)
    s_cls, s_reg = _empty_like(m)
    pos_idx = np.flatnonzero(m.positive_mask)
    neg_idx = np.flatnonzero(m.negative_mask)
    take_p = min(cfg.n_p, pos_idx.size)
    take_n = min(cfg.n_n, neg_idx.size)
    if take_p:
        s_cls[rng.choice(pos_idx, size=take_p, replace=False)] = 1.0
    if take_n:
        s_cls[rng.choice(neg_idx, size=take_n, replace=False)] = 1.0
    s_reg[m.positive_mask & (s_cls == 1.0)] = 1.0
    return WeightAssignment(s_cls, s_reg)


def _top_k(candidates: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values among candidates, ties by index."""
    if k <= 0 or candidates.size == 0:
        return candidates[:0]
    order = candidates[np.argsort(-values[candidates], kind="stable")]
    return order[:k]


def ohem_weights(m: MatchResult, losses: np.ndarray, cfg: StrategyConfig) -> WeightAssignment:
    """Keep the highest-loss samples: top n_p positives and top n_n
    negatives by classification loss, ranked separately, ties by index."""
    losses = np.asarray(losses, dtype=float)
    if losses.shape[0] != len(m):
        raise ValueError("loss vector must align with anchors")
    s_cls, s_reg = _empty_like(m)
    s_cls[_top_k(np.flatnonzero(m.positive_mask), losses, cfg.n_p)] = 1.0
    s_cls[_top_k(np.flatnonzero(m.negative_mask), losses, cfg.n_n)] = 1.0
    s_reg[m.positive_mask & (s_cls == 1.0)] = 1.0
    return WeightAssignment(s_cls, s_reg)


def focal_weights(m: MatchResult, probs: np.ndarray, cfg: StrategyConfig) -> WeightAssignment:
    """Soft down-weighting of well-classified samples: s_cls = (1-p)^gamma
    from each sample's true-class probability; regression covers every
    positive with weight 1."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[0] != len(m):
        raise ValueError("probability vector must align with anchors")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValueError("probabilities must be in [0, 1]")
    s_cls = (1.0 - probs) ** cfg.gamma
    s_cls[m.label == IGNORE] = 0.0
    s_reg = m.positive_mask.astype(float)
    return WeightAssignment(s_cls, s_reg)


def kl_regression_weights(m: MatchResult, sigma2: np.ndarray,
                          cfg: StrategyConfig) -> WeightAssignment:
    """Inverse-variance regression weighting: s_reg = 1/sigma2 on positives.

    Classification weights are the random-sampling selection (same cfg and
    seed), matching the convention that variance weighting touches only the
    regression task.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.shape[0] != len(m):
        raise ValueError("variance vector must align with anchors")
    pos = m.positive_mask
    if np.any(sigma2[pos] <= 0.0):
        raise ValueError("predicted variance must be positive for positive samples")
    s_cls = random_sampling_weights(m, cfg).s_cls
    s_reg = np.zeros(len(m))
    s_reg[pos] = 1.0 / sigma2[pos]
    return WeightAssignment(s_cls, s_reg)


def rpn_score_weights(m: MatchResult, fg_scores: np.ndarray, kept: np.ndarray,
                      cfg: StrategyConfig) -> WeightAssignment:
    """Proposal-style gating: a sample trains classification only when its
    foreground score strictly exceeds rho AND it survived suppression.

    `kept` holds the indices of anchors still alive after NMS over the
    scored anchor boxes. Regression weight follows gated positives.
    """
    fg_scores = np.asarray(fg_scores, dtype=float)
    if fg_scores.shape[0] != len(m):
        raise ValueError("score vector must align with anchors")
    kept_mask = np.zeros(len(m), dtype=bool)
    kept = np.asarray(kept, dtype=int)
    if kept.size:
        kept_mask[kept] = True
    s_cls = ((fg_scores > cfg.rho) & kept_mask & (m.label != IGNORE)).astype(float)
    s_reg = ((s_cls == 1.0) & m.positive_mask).astype(float)
    return WeightAssignment(s_cls, s_reg)
