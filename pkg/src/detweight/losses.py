"""Loss formulas: per-sample classification and regression losses, the
weighted two-task objective, and the uncertainty-based per-sample weighting
in log-sigma form.

A sample's task weights are parameterized as m = log(sigma), giving the
effective weight exp(-2m) = 1/sigma^2; predicting m keeps the weight
positive without constrained optimization. Sums over batches use math.fsum
so that indicator-weighted sums equal their subset counterparts exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Offset4

__all__ = [
    "SampleRecord",
    "LossNormalization",
    "RegularizerConfig",
    "UncertaintyGrads",
    "softmax_probs",
    "softmax_ce",
    "l2_regression",
    "unified_loss",
    "unified_loss_arrays",
    "uncertainty_loss",
    "uncertainty_loss_grad",
    "batch_uncertainty_loss",
    "variance_objective",
    "optimal_sigma",
    "tempered_softmax",
    "temperature_approx_error",
    "kl_baseline_loss",
]

_LOG_FLOOR = 1e-12


@dataclass
class SampleRecord:
    """One anchor's training state within a batch.

    Negative samples carry iou = prob = 0 and contribute no regression
    terms; m values are log-sigma weights clipped to the configured bound.
    """

    index: int
    positive: bool
    l_cls: float
    l_reg: float
    iou: float
    prob: float
    m_cls: float = 0.0
    m_reg: float = 0.0
    s_cls: float = 1.0
    s_reg: float = 0.0


@dataclass(frozen=True)
class LossNormalization:
    """Per-task divisors: n1 training samples, n2 foreground samples."""

    n1: int
    n2: int

    def __post_init__(self):
        if not (self.n1 >= self.n2 >= 0):
            raise ValueError(f"need n1 >= n2 >= 0, got {self.n1}, {self.n2}")

    @staticmethod
    def from_assignment(w) -> "LossNormalization":
        """Counts of strictly positive weights per task.

        For indicator strategies this is the number of selected samples and
        selected positives; for soft strategies it is the number of samples
        with any influence on each task.
        """
        return LossNormalization(int(np.sum(w.s_cls > 0.0)), int(np.sum(w.s_reg > 0.0)))


@dataclass(frozen=True)
class RegularizerConfig:
    """Coefficients on the log-sigma penalty for each task."""

    lambda1: float = 0.5
    lambda2: float = 0.5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularizer coefficients must be >= 0")


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    logits = np.asarray(logits, dtype=float)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits, label: int) -> float:
    """Cross entropy -log softmax(logits)[label], shifted by the max logit."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 1:
        raise ValueError("logits must be a vector")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if not (0 <= label < logits.shape[0]):
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def l2_regression(pred: Offset4, target: Offset4) -> float:
    """Squared Euclidean distance between two offset 4-vectors."""
    d = pred.as_array() - target.as_array()
    return float(d @ d)


def unified_loss_arrays(l_cls, l_reg, s_cls, s_reg, norm: LossNormalization) -> float:
    """Weighted two-task batch objective on plain arrays.

    (1/n1) * sum s_cls*l_cls + (1/n2) * sum s_reg*l_reg, with a task term
    dropped when its divisor is zero. fsum keeps indicator-weighted sums
    exactly equal to sums over the selected subsets.
    """
    l_cls = np.asarray(l_cls, dtype=float)
    l_reg = np.asarray(l_reg, dtype=float)
    s_cls = np.asarray(s_cls, dtype=float)
    s_reg = np.asarray(s_reg, dtype=float)
    if not (l_cls.shape == l_reg.shape == s_cls.shape == s_reg.shape):
        raise ValueError("loss/weight vectors must be aligned")
    total = 0.0
    if norm.n1 > 0:
        total += math.fsum(s_cls * l_cls) / norm.n1
    if norm.n2 > 0:
        total += math.fsum(s_reg * l_reg) / norm.n2
    return total


def unified_loss(records: list[SampleRecord], w, norm: LossNormalization) -> float:
    """Weighted two-task objective over sample records with an assignment."""
    if len(records) != len(w.s_cls):
        raise ValueError("records and weight assignment lengths differ")
    l_cls = np.array([r.l_cls for r in records])
    l_reg = np.array([r.l_reg for r in records])
    return unified_loss_arrays(l_cls, l_reg, w.s_cls, w.s_reg, norm)


def uncertainty_loss(rec: SampleRecord, reg: RegularizerConfig) -> float:
    """Per-sample weighted loss with log-sigma penalties.

    exp(-2 m_cls) * l_cls + lambda1 * m_cls, plus the analogous regression
    terms for positive samples only.
    """
    total = math.exp(-2.0 * rec.m_cls) * rec.l_cls + reg.lambda1 * rec.m_cls
    if rec.positive:
        total += math.exp(-2.0 * rec.m_reg) * rec.l_reg + reg.lambda2 * rec.m_reg
    return total


@dataclass(frozen=True)
class UncertaintyGrads:
    d_l_cls: float
    d_l_reg: float
    d_m_cls: float
    d_m_reg: float


def uncertainty_loss_grad(rec: SampleRecord, reg: RegularizerConfig) -> UncertaintyGrads:
    """Partials of uncertainty_loss w.r.t. the losses and the m weights."""
    wc = math.exp(-2.0 * rec.m_cls)
    d_m_cls = -2.0 * wc * rec.l_cls + reg.lambda1
    if rec.positive:
        wr = math.exp(-2.0 * rec.m_reg)
        return UncertaintyGrads(wc, wr, d_m_cls, -2.0 * wr * rec.l_reg + reg.lambda2)
    return UncertaintyGrads(wc, 0.0, d_m_cls, 0.0)


def batch_uncertainty_loss(records: list[SampleRecord], reg: RegularizerConfig,
                           norm: LossNormalization) -> float:
    """Batch objective in log-sigma form, regularizers normalized with their
    task terms: classification terms over n1, regression terms over n2.

    Uses each record's effective weights s_cls/s_reg (so classification
    smoothing, when applied, is part of the objective) and adds the
    lambda * m penalties.
    """
    total = 0.0
    if norm.n1 > 0:
        total += math.fsum(r.s_cls * r.l_cls + reg.lambda1 * r.m_cls for r in records) / norm.n1
    if norm.n2 > 0:
        total += math.fsum(r.s_reg * r.l_reg + reg.lambda2 * r.m_reg
                           for r in records if r.positive) / norm.n2
    return total


def variance_objective(l_reg: float, sigma: float, lam2: float = 1.0) -> float:
    """Regression energy as a function of the predicted deviation:
    l/sigma^2 + lam2 * log(sigma^2). The log-variance penalty keeps the
    1/sigma^2 weight from collapsing to zero."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    return l_reg / (sigma * sigma) + lam2 * math.log(sigma * sigma)


def optimal_sigma(l_reg: float) -> tuple[float, float]:
    """Minimizer of variance_objective over sigma at lam2 = 1.

    Returns (sigma2, reduced) where sigma2 = l_reg and reduced is the
    minimized energy 1 + log(l_reg): once the deviation adapts, the
    effective objective grows only logarithmically in the raw error, which
    is what softens the pull of outlier samples.
    """
    if l_reg <= 0.0:
        raise ValueError("l_reg must be positive")
    l = max(l_reg, _LOG_FLOOR)
    return l, 1.0 + math.log(l)


def tempered_softmax(logits, t: float) -> np.ndarray:
    """Softmax of logits / t; t > 1 flattens, t < 1 sharpens."""
    if t <= 0.0:
        raise ValueError("temperature must be positive")
    return softmax_probs(np.asarray(logits, dtype=float) / t)


def temperature_approx_error(logits, sigma: float) -> float:
    """Gap between the two sides of the flattened-partition-function
    approximation: |(1/s) * sum exp(p_c / s^2) - (sum exp(p_c))^(1/s^2)|.

    Exactly zero at sigma = 1, where both sides reduce to the plain
    partition function.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    p = np.asarray(logits, dtype=float)
    s2 = sigma * sigma
    lhs = float(np.exp(p / s2).sum()) / sigma
    rhs = float(np.exp(p).sum()) ** (1.0 / s2)
    return abs(lhs - rhs)


def kl_baseline_loss(pred: Offset4, target: Offset4, m_reg: float,
                     reg: RegularizerConfig) -> float:
    """Variance-weighted regression loss: exp(-2 m_reg) * ||pred-target||^2
    plus the lambda2 * m_reg penalty; equals the regression half of
    uncertainty_loss at equal inputs."""
    return math.exp(-2.0 * m_reg) * l2_regression(pred, target) + reg.lambda2 * m_reg
