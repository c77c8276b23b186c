"""The sample weighting network: four scalar-feature embeddings feeding two
heads that predict a per-sample log-sigma weight for each task.

Inputs are a sample's current classification loss, regression loss, IoU of
its predicted box with its ground truth, and its predicted probability on
the assigned class; the caller zeroes IoU and probability for negative
samples. The network is trained on detached copies of these scalars, so its
loss moves only the weighting parameters; the detector feels the weights
purely as multipliers on its own loss terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import RegularizerConfig, SampleRecord
from .nn import AdamState, DenseGrads, MlpParams, Tape, adam_step, init_mlp, mlp_backward, mlp_forward

__all__ = [
    "SwnConfig",
    "SwnParams",
    "SwnBatch",
    "SwnStepResult",
    "init_swn_params",
    "embed_features",
    "predict_weights",
    "smooth_cls_weights",
    "apply_cls_smoothing",
    "swn_step",
]


@dataclass(frozen=True)
class SwnConfig:
    embed_dim: int = 16
    head_hidden: tuple[int, ...] = (64,)
    clip_bound: float = 2.0
    smoothing: bool = True
    init_mean: float = 0.0
    init_std: float = 1e-4
    head_bias_init: float = 0.0

    def __post_init__(self):
        if self.embed_dim < 1 or any(h < 1 for h in self.head_hidden):
            raise ValueError("network dims must be >= 1")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")


@dataclass
class SwnParams:
    """Embeddings f/g/h/k (loss_cls, loss_reg, iou, prob -> embed_dim) and
    the two weight heads over their concatenation."""

    f: MlpParams
    g: MlpParams
    h: MlpParams
    k: MlpParams
    w_cls: MlpParams
    w_reg: MlpParams
    cfg: SwnConfig

    def parameters(self) -> list[np.ndarray]:
        out = []
        for net in (self.f, self.g, self.h, self.k, self.w_cls, self.w_reg):
            out.extend(net.parameters())
        return out

    def as_dict(self) -> dict[str, np.ndarray]:
        """Checkpoint view, one section tag per sub-network."""
        out: dict[str, np.ndarray] = {}
        for tag, net in (("F", self.f), ("G", self.g), ("H", self.h), ("K", self.k),
                         ("W_cls", self.w_cls), ("W_reg", self.w_reg)):
            for i, layer in enumerate(net.layers):
                out[f"swn.{tag}.{i}.w"] = layer.w
                out[f"swn.{tag}.{i}.b"] = layer.b
        return out

    def load_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for tag, net in (("F", self.f), ("G", self.g), ("H", self.h), ("K", self.k),
                         ("W_cls", self.w_cls), ("W_reg", self.w_reg)):
            for i, layer in enumerate(net.layers):
                layer.w[:] = arrays[f"swn.{tag}.{i}.w"]
                layer.b[:] = arrays[f"swn.{tag}.{i}.b"]


def init_swn_params(cfg: SwnConfig, rng: np.random.Generator) -> SwnParams:
    """Gaussian init (mean/std from cfg, default 0 / 1e-4) so initial
    predictions sit at head_bias_init and the effective weights start out
    nearly uniform across samples."""
    e = cfg.embed_dim
    head_dims = [4 * e, *cfg.head_hidden, 1]

    def embed():
        return init_mlp([1, e], cfg.init_mean, cfg.init_std, rng)

    def head():
        return init_mlp(head_dims, cfg.init_mean, cfg.init_std, rng,
                        last_bias=cfg.head_bias_init)

    return SwnParams(embed(), embed(), embed(), embed(), head(), head(), cfg)


def _embed_inputs(l_cls, l_reg, iou, prob) -> list[np.ndarray]:
    """Column inputs for f/g/h/k; losses pass through log1p since raw losses
    span orders of magnitude early in training."""
    cols = []
    for v, squash in ((l_cls, True), (l_reg, True), (iou, False), (prob, False)):
        v = np.asarray(v, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("weighting-network inputs must be finite")
        cols.append((np.log1p(v) if squash else v)[:, None])
    if len({c.shape[0] for c in cols}) != 1:
        raise ValueError("input columns must be aligned")
    return cols


@dataclass
class _Forward:
    cols: list[np.ndarray]
    embed_tapes: list[Tape]
    d: np.ndarray
    head_tapes: tuple[Tape, Tape]
    raw_cls: np.ndarray
    raw_reg: np.ndarray
    m_cls: np.ndarray
    m_reg: np.ndarray


def _forward(p: SwnParams, l_cls, l_reg, iou, prob) -> _Forward:
    cols = _embed_inputs(l_cls, l_reg, iou, prob)
    nets = (p.f, p.g, p.h, p.k)
    outs, tapes = [], []
    for net, col in zip(nets, cols):
        y, tape = mlp_forward(net, col)
        outs.append(y)
        tapes.append(tape)
    d = np.concatenate(outs, axis=1)
    raw_cls, tape_cls = mlp_forward(p.w_cls, d)
    raw_reg, tape_reg = mlp_forward(p.w_reg, d)
    raw_cls = raw_cls[:, 0]
    raw_reg = raw_reg[:, 0]
    b = p.cfg.clip_bound
    return _Forward(cols, tapes, d, (tape_cls, tape_reg), raw_cls, raw_reg,
                    np.clip(raw_cls, -b, b), np.clip(raw_reg, -b, b))


def embed_features(p: SwnParams, l_cls, l_reg, iou, prob) -> np.ndarray:
    """Per-sample feature d_i: the concatenated embeddings of the four
    scalars, in fixed (loss_cls, loss_reg, iou, prob) order. Rows are
    independent; accepts scalars or aligned vectors."""
    cols = _embed_inputs(l_cls, l_reg, iou, prob)
    outs = [mlp_forward(net, col)[0] for net, col in zip((p.f, p.g, p.h, p.k), cols)]
    d = np.concatenate(outs, axis=1)
    return d[0] if np.isscalar(l_cls) or np.asarray(l_cls).ndim == 0 else d


def predict_weights(p: SwnParams, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Head outputs clamped to [-clip_bound, clip_bound]; the clamp is hard,
    so no gradient flows for saturated samples."""
    d = np.asarray(d, dtype=float)
    single = d.ndim == 1
    dd = d[None, :] if single else d
    b = p.cfg.clip_bound
    m_cls = np.clip(mlp_forward(p.w_cls, dd)[0][:, 0], -b, b)
    m_reg = np.clip(mlp_forward(p.w_reg, dd)[0][:, 0], -b, b)
    if single:
        return float(m_cls[0]), float(m_reg[0])
    return m_cls, m_reg


def smooth_cls_weights(weights: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """Replace each classification weight by its group mean, positives and
    negatives separately. Empty groups are left untouched; group means are
    preserved, so this is a pure within-group smoothing."""
    weights = np.asarray(weights, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    if weights.shape != positive.shape:
        raise ValueError("weights and labels must align")
    out = weights.copy()
    for mask in (positive, ~positive):
        if mask.any():
            out[mask] = weights[mask].mean()
    return out


def apply_cls_smoothing(batch: list[SampleRecord]) -> np.ndarray:
    """Record-level smoothing: returns the smoothed s_cls values and writes
    them back onto the records."""
    w = np.array([r.s_cls for r in batch])
    pos = np.array([r.positive for r in batch], dtype=bool)
    smoothed = smooth_cls_weights(w, pos)
    for r, s in zip(batch, smoothed):
        r.s_cls = float(s)
    return smoothed


@dataclass
class SwnBatch:
    """Detached per-sample scalars the network trains on."""

    l_cls: np.ndarray
    l_reg: np.ndarray
    iou: np.ndarray
    prob: np.ndarray
    positive: np.ndarray

    def __post_init__(self):
        self.l_cls = np.asarray(self.l_cls, dtype=float)
        self.l_reg = np.asarray(self.l_reg, dtype=float)
        self.iou = np.asarray(self.iou, dtype=float)
        self.prob = np.asarray(self.prob, dtype=float)
        self.positive = np.asarray(self.positive, dtype=bool)
        n = self.l_cls.shape[0]
        if n == 0:
            raise ValueError("batch is empty")
        for a in (self.l_reg, self.iou, self.prob, self.positive):
            if a.shape[0] != n:
                raise ValueError("batch columns must align")

    @staticmethod
    def from_records(records: list[SampleRecord]) -> "SwnBatch":
        return SwnBatch(
            np.array([r.l_cls for r in records]),
            np.array([r.l_reg for r in records]),
            np.array([r.iou for r in records]),
            np.array([r.prob for r in records]),
            np.array([r.positive for r in records], dtype=bool),
        )


@dataclass
class SwnStepResult:
    loss: float
    m_cls: np.ndarray
    m_reg: np.ndarray
    s_cls: np.ndarray          # effective (smoothed) classification weights
    s_cls_raw: np.ndarray      # pre-smoothing exp(-2 m_cls)
    s_reg: np.ndarray          # exp(-2 m_reg) on positives, 0 elsewhere
    grads: list[np.ndarray] = field(default_factory=list, repr=False)


def swn_loss_and_grads(p: SwnParams, batch: SwnBatch,
                       reg: RegularizerConfig) -> SwnStepResult:
    """Forward the batch, assemble the weighting objective, and return its
    gradients w.r.t. the network parameters.

    Objective (n1 = batch size, n2 = positive count):
      (1/n1) sum_i [ s~_cls_i * l_cls_i + lambda1 * m_cls_i ]
    + (1/n2) sum_pos [ exp(-2 m_reg_i) * l_reg_i + lambda2 * m_reg_i ]
    where s~_cls is the group-smoothed exp(-2 m_cls). The smoothing mean is
    differentiated, which makes each sample's classification gradient see
    its group's mean loss.
    """
    fw = _forward(p, batch.l_cls, batch.l_reg, batch.iou, batch.prob)
    n = batch.l_cls.shape[0]
    pos = batch.positive
    n1 = n
    n2 = int(pos.sum())

    w_cls_raw = np.exp(-2.0 * fw.m_cls)
    w_reg = np.exp(-2.0 * fw.m_reg)
    s_cls = smooth_cls_weights(w_cls_raw, pos) if p.cfg.smoothing else w_cls_raw
    s_reg = np.where(pos, w_reg, 0.0)

    loss = math.fsum(s_cls * batch.l_cls + reg.lambda1 * fw.m_cls) / n1
    if n2 > 0:
        loss += math.fsum((w_reg * batch.l_reg + reg.lambda2 * fw.m_reg)[pos]) / n2

    # d loss / d m. With smoothing, sample j's weight multiplies the mean
    # loss of its group, so the chain rule swaps l_j for the group mean.
    if p.cfg.smoothing:
        l_eff = batch.l_cls.copy()
        for mask in (pos, ~pos):
            if mask.any():
                l_eff[mask] = batch.l_cls[mask].mean()
    else:
        l_eff = batch.l_cls
    clip_cls = np.abs(fw.raw_cls) <= p.cfg.clip_bound
    clip_reg = np.abs(fw.raw_reg) <= p.cfg.clip_bound
    dm_cls = (-2.0 * w_cls_raw * l_eff + reg.lambda1) / n1 * clip_cls
    dm_reg = np.zeros(n)
    if n2 > 0:
        dm_reg[pos] = ((-2.0 * w_reg * batch.l_reg + reg.lambda2)[pos]) / n2
        dm_reg *= clip_reg

    dd_cls, grads_cls = mlp_backward(p.w_cls, fw.head_tapes[0], dm_cls[:, None])
    dd_reg, grads_reg = mlp_backward(p.w_reg, fw.head_tapes[1], dm_reg[:, None])
    dd = dd_cls + dd_reg
    e = p.cfg.embed_dim
    embed_grads: list[DenseGrads] = []
    for i, (net, tape) in enumerate(zip((p.f, p.g, p.h, p.k), fw.embed_tapes)):
        _, g = mlp_backward(net, tape, dd[:, i * e:(i + 1) * e])
        embed_grads.extend(g)

    flat: list[np.ndarray] = []
    for g in embed_grads + grads_cls + grads_reg:
        flat.append(g.dw)
        flat.append(g.db)
    return SwnStepResult(loss, fw.m_cls, fw.m_reg, s_cls, w_cls_raw, s_reg, flat)


def swn_step(p: SwnParams, batch: SwnBatch, reg: RegularizerConfig,
             opt: AdamState) -> SwnStepResult:
    """One optimization step of the weighting network on a detached batch."""
    result = swn_loss_and_grads(p, batch, reg)
    adam_step(opt, p.parameters(), result.grads)
    return result
