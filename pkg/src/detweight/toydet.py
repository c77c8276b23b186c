"""Synthetic desk-scale detection benchmark and the end-to-end trainer.

A scene is a handful of rectangles on a square canvas. Each anchor carries a
handcrafted feature vector built from its overlap geometry with the nearest
true object plus a noisy class signature, so a small dense head can learn
both tasks in seconds and the weighting machinery stays isolated from
backbone concerns. Annotation noise enters in two ways: ground-truth boxes
are jittered relative to the geometry the features encode, and labels are
flipped with a configured probability while the features keep the true
class signature. Evaluation always scores against the clean boxes and
labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis
from .geometry import (AnchorSet, Box, Detection, GroundTruth, decode_offsets_array,
                       elementwise_iou, encode_offsets_array, generate_anchors, nms,
                       nms_indices)
from .losses import (LossNormalization, RegularizerConfig, SampleRecord, softmax_probs,
                     unified_loss_arrays)
from .matching import (IGNORE, MatchResult, StrategyConfig, WeightAssignment,
                       STRATEGY_NAMES, focal_weights, kl_regression_weights, match_anchors,
                       ohem_weights, random_sampling_weights, rpn_score_weights)
from .nn import (AdamState, MlpParams, SgdState, adam_step, init_gaussian, mlp_backward,
                 mlp_forward, rng_from_seed, sgd_step)
from .swn import SwnBatch, SwnConfig, SwnParams, init_swn_params, swn_loss_and_grads

__all__ = [
    "SceneConfig",
    "Scene",
    "DetectorParams",
    "TrainConfig",
    "TrainHistory",
    "TrainResult",
    "TrainingDiverged",
    "generate_scene",
    "init_detector",
    "detector_forward",
    "detections_from_forward",
    "evaluate_detector",
    "make_eval_scenes",
    "train",
    "run_strategy_comparison",
    "standard_benchmark",
    "uniform_baseline",
]

# Stream tags keep scene / parameter / sampling randomness independent.
_STREAM_SCENE = 11
_STREAM_DET = 12
_STREAM_SWN = 13
_STREAM_SAMPLER = 14


@dataclass(frozen=True)
class SceneConfig:
    """Layout, signal and noise knobs for generated scenes."""

    canvas: float = 64.0
    n_obj_min: int = 2
    n_obj_max: int = 4
    n_clutter_min: int = 2
    n_clutter_max: int = 4
    clutter_signal_frac: float = 0.6
    n_classes: int = 3
    class_signal: float = 3.0
    feature_noise_std: float = 0.1
    box_jitter_std: float = 3.2
    label_flip_prob: float = 0.2
    label_miss_prob: float = 0.15
    obj_min_frac: float = 0.2
    obj_max_frac: float = 0.4
    grid_rows: int = 8
    grid_cols: int = 8
    cell_size: float = 8.0
    scales: tuple[float, ...] = (2.0, 3.2)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    extra_feature_dims: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 object classes")
        if not (0.0 <= self.label_flip_prob <= 1.0):
            raise ValueError("label_flip_prob must be in [0, 1]")
        if not (0.0 <= self.label_miss_prob < 1.0):
            raise ValueError("label_miss_prob must be in [0, 1)")
        if not (0 < self.n_obj_min <= self.n_obj_max):
            raise ValueError("object count range must be positive and ordered")
        if not (0 <= self.n_clutter_min <= self.n_clutter_max):
            raise ValueError("clutter count range must be ordered and non-negative")
        if not (0.0 < self.obj_min_frac <= self.obj_max_frac < 1.0):
            raise ValueError("object size fractions must satisfy 0 < min <= max < 1")

    @property
    def feature_dim(self) -> int:
        return _GEO_DIM + self.n_classes + self.extra_feature_dims

    def make_anchors(self) -> AnchorSet:
        return generate_anchors((self.grid_rows, self.grid_cols, self.cell_size),
                                self.scales, self.ratios)


_GEO_DIM = 8  # iou, dx, dy, dw, dh, aw/canvas, ah/canvas, bias


@dataclass
class Scene:
    """One generated scene: noisy annotations for training, clean truth for
    evaluation, and per-anchor features derived from the clean geometry."""

    gts: list[GroundTruth]        # annotations: jittered boxes, flipped labels, misses
    true_gts: list[GroundTruth]   # clean boxes and labels, including missed objects
    flipped: np.ndarray           # per annotation, label was flipped
    features: np.ndarray          # (num anchors, feature_dim)
    seed: tuple


def _seed_tuple(seed) -> tuple:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)


def generate_scene(cfg: SceneConfig, seed) -> Scene:
    """Deterministically generate a scene from the seed.

    Draw order is fixed (counts, sizes, centers, classes, flips, jitter,
    feature noise) so every knob change leaves the other draws untouched
    only when it does not consume randomness.
    """
    seed = _seed_tuple(seed)
    rng = rng_from_seed(_STREAM_SCENE, *seed)
    c = cfg.canvas

    def draw_boxes(count):
        sizes = c * rng.uniform(cfg.obj_min_frac, cfg.obj_max_frac, size=(count, 2))
        centers = np.empty((count, 2))
        for axis in range(2):
            lo = 0.5 * sizes[:, axis]
            centers[:, axis] = lo + rng.uniform(0.0, 1.0, size=count) * (c - sizes[:, axis])
        return np.stack([
            centers[:, 0] - 0.5 * sizes[:, 0], centers[:, 1] - 0.5 * sizes[:, 1],
            centers[:, 0] + 0.5 * sizes[:, 0], centers[:, 1] + 0.5 * sizes[:, 1],
        ], axis=1)

    k = int(rng.integers(cfg.n_obj_min, cfg.n_obj_max + 1))
    true_boxes = draw_boxes(k)
    true_cls = rng.integers(1, cfg.n_classes + 1, size=k)
    flipped = rng.random(k) < cfg.label_flip_prob
    shift = rng.integers(1, cfg.n_classes, size=k)  # uniform over other classes
    obs_cls = np.where(flipped, (true_cls - 1 + shift) % cfg.n_classes + 1, true_cls)
    # Missed annotations: the object exists (features, evaluation truth) but
    # carries no training box, so its anchors become irreducibly ambiguous
    # negatives. At least one object always stays annotated.
    missed = rng.random(k) < cfg.label_miss_prob
    if missed.all():
        missed[0] = False

    jitter = rng.normal(0.0, cfg.box_jitter_std, size=(k, 4))
    noisy = true_boxes + jitter
    x1 = np.minimum(noisy[:, 0], noisy[:, 2])
    x2 = np.maximum(noisy[:, 0], noisy[:, 2])
    y1 = np.minimum(noisy[:, 1], noisy[:, 3])
    y2 = np.maximum(noisy[:, 1], noisy[:, 3])
    x2 = np.maximum(x2, x1 + 1e-3)  # keep encodable
    y2 = np.maximum(y2, y1 + 1e-3)
    noisy_boxes = np.stack([x1, y1, x2, y2], axis=1)

    # Clutter: phantom objects that imprint object-like features but are
    # absent from the annotations, so nearby anchors become hard negatives.
    # Signature strength varies per phantom up to full strength, giving a
    # hardness continuum whose top end is irreducibly ambiguous; that keeps
    # the background loss floored away from zero, as real scenes do.
    kc = int(rng.integers(cfg.n_clutter_min, cfg.n_clutter_max + 1))
    clutter_boxes = draw_boxes(kc)
    clutter_cls = rng.integers(1, cfg.n_classes + 1, size=kc)
    clutter_strength = rng.uniform(cfg.clutter_signal_frac, 1.0, size=kc)

    anchors = cfg.make_anchors()
    n = len(anchors)
    from .geometry import iou_matrix  # local to avoid polluting module scope

    all_boxes = np.concatenate([true_boxes, clutter_boxes])
    all_cls = np.concatenate([true_cls, clutter_cls])
    overlaps = iou_matrix(anchors.boxes, all_boxes)
    best = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(n), best]

    offs = np.zeros((n, 4))
    has_overlap = best_iou > 0.0
    if has_overlap.any():
        offs[has_overlap] = encode_offsets_array(anchors.boxes[has_overlap],
                                                 all_boxes[best[has_overlap]])
    aw = (anchors.boxes[:, 2] - anchors.boxes[:, 0]) / c
    ah = (anchors.boxes[:, 3] - anchors.boxes[:, 1]) / c
    geo = np.stack([best_iou, offs[:, 0], offs[:, 1], offs[:, 2], offs[:, 3],
                    aw, ah, np.ones(n)], axis=1)

    strength = np.where(best < k, 1.0, np.concatenate([np.ones(k), clutter_strength])[best])
    cls_block = np.zeros((n, cfg.n_classes))
    cls_block[np.arange(n), all_cls[best] - 1] = cfg.class_signal * best_iou * strength

    feats = np.concatenate([geo, cls_block, np.zeros((n, cfg.extra_feature_dims))], axis=1)
    feats = feats + rng.normal(0.0, cfg.feature_noise_std, size=feats.shape)

    annotated = np.flatnonzero(~missed)
    gts = [GroundTruth(Box.from_array(noisy_boxes[j]), int(obs_cls[j])) for j in annotated]
    true_gts = [GroundTruth(Box.from_array(true_boxes[j]), int(true_cls[j])) for j in range(k)]
    return Scene(gts, true_gts, flipped[annotated], feats, seed)


@dataclass
class DetectorParams:
    """Classification and regression heads over the anchor features, plus a
    small log-deviation head that the inverse-variance strategy trains."""

    cls_head: MlpParams
    reg_head: MlpParams
    var_head: MlpParams

    def parameters(self) -> list[np.ndarray]:
        return (self.cls_head.parameters() + self.reg_head.parameters()
                + self.var_head.parameters())

    def as_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for tag, net in (("cls", self.cls_head), ("reg", self.reg_head), ("var", self.var_head)):
            for i, layer in enumerate(net.layers):
                out[f"det.{tag}.{i}.w"] = layer.w
                out[f"det.{tag}.{i}.b"] = layer.b
        return out

    def load_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for tag, net in (("cls", self.cls_head), ("reg", self.reg_head), ("var", self.var_head)):
            for i, layer in enumerate(net.layers):
                layer.w[:] = arrays[f"det.{tag}.{i}.w"]
                layer.b[:] = arrays[f"det.{tag}.{i}.b"]


def _head(dims: list[int], rng: np.random.Generator) -> MlpParams:
    """Fan-in scaled hidden layers, small-scale identity output layer."""
    layers = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        std = 0.01 if last else dims[i] ** -0.5
        layers.append(init_gaussian((dims[i + 1], dims[i]), 0.0, std, rng,
                                    "identity" if last else "relu"))
    return MlpParams(layers)


def init_detector(cfg: "TrainConfig") -> DetectorParams:
    rng = rng_from_seed(_STREAM_DET, cfg.seed)
    d = cfg.scene.feature_dim
    hidden = list(cfg.detector_hidden)
    cls_head = _head([d, *hidden, cfg.scene.n_classes + 1], rng)
    if cfg.bg_prior > 0.0:
        # Start with the background already favored so the early iterations
        # go into discriminating objects instead of crushing the easy
        # background (which spikes the positive losses).
        c = cfg.scene.n_classes
        cls_head.layers[-1].b[0] = math.log(cfg.bg_prior * c / (1.0 - cfg.bg_prior))
    reg_head = _head([d, *hidden, 4], rng)
    var_head = MlpParams([init_gaussian((1, d), 0.0, 1e-4, rng, "identity")])
    return DetectorParams(cls_head, reg_head, var_head)


def detector_forward(p: DetectorParams, scene: Scene,
                     anchors: AnchorSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor class logits and box offsets; rows are independent."""
    if scene.features.shape[0] != len(anchors):
        raise ValueError("scene features do not match anchor count")
    logits, _ = mlp_forward(p.cls_head, scene.features)
    offsets, _ = mlp_forward(p.reg_head, scene.features)
    return logits, offsets


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss appears during training."""

    def __init__(self, iteration: int, sample_index: int):
        super().__init__(f"non-finite loss at iteration {iteration}, sample {sample_index}")
        self.iteration = iteration
        self.sample_index = sample_index


@dataclass(frozen=True)
class TrainConfig:
    scene: SceneConfig = SceneConfig()
    strategy: str = "swn"
    sampler: StrategyConfig = StrategyConfig()
    reg: RegularizerConfig = RegularizerConfig()
    # Per-sample weights in the benchmark: group smoothing averages away the
    # per-sample differentiation the noisy-label diagnostics measure.
    swn: SwnConfig = SwnConfig(smoothing=False)
    epochs: int = 12
    iters_per_epoch: int = 200
    batch_scenes: int = 2
    detector_lr: float = 0.02
    detector_momentum: float = 0.9
    weight_decay: float = 1e-4
    detector_hidden: tuple[int, ...] = (32,)
    bg_prior: float = 0.85
    swn_lr: float = 0.001
    swn_warmup_epochs: int = 2
    seed: int = 0
    eval_scenes: int = 64
    eval_seed: int = 900000
    det_score_floor: float = 0.05
    det_pre_nms_top: int = 100
    det_nms_iou: float = 0.5
    rpn_nms_iou: float = 0.7

    def __post_init__(self):
        if self.strategy not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGY_NAMES}")
        if self.epochs < 0 or self.iters_per_epoch <= 0 or self.batch_scenes <= 0:
            raise ValueError("epochs must be >= 0; iteration and batch counts positive")
        if self.detector_lr <= 0 or self.swn_lr <= 0:
            raise ValueError("learning rates must be positive")

    @property
    def total_iterations(self) -> int:
        return self.epochs * self.iters_per_epoch

    @property
    def lr_decay_epochs(self) -> tuple[int, ...]:
        """Step the learning rates down by 10x at 2/3 and 11/12 of training."""
        if self.epochs == 0:
            return ()
        marks = {math.floor(self.epochs * 2 / 3), math.floor(self.epochs * 11 / 12)}
        return tuple(sorted(m for m in marks if 0 < m < self.epochs))


@dataclass
class EpochTrace:
    """Positive-sample snapshots accumulated over one epoch's iterations."""

    iou: np.ndarray
    l_cls: np.ndarray
    l_reg: np.ndarray
    s_cls: np.ndarray
    s_cls_raw: np.ndarray
    s_reg: np.ndarray
    flipped: np.ndarray


@dataclass
class TrainHistory:
    iters: list[int] = field(default_factory=list)
    mean_lcls: list[float] = field(default_factory=list)
    mean_lreg: list[float] = field(default_factory=list)
    w_cls_pos: list[float] = field(default_factory=list)
    w_cls_neg: list[float] = field(default_factory=list)
    w_reg_pos: list[float] = field(default_factory=list)
    n_pos: list[int] = field(default_factory=list)
    n_neg: list[int] = field(default_factory=list)
    maps: dict[int, float] = field(default_factory=dict)  # iteration -> held-out mAP
    epoch_traces: list[EpochTrace] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iters)

    def mean_w_cls_all(self) -> np.ndarray:
        """Per-iteration classification weight averaged over all samples."""
        npos = np.array(self.n_pos, dtype=float)
        nneg = np.array(self.n_neg, dtype=float)
        total = np.maximum(npos + nneg, 1.0)
        return (np.array(self.w_cls_pos) * npos + np.array(self.w_cls_neg) * nneg) / total

    def to_csv(self) -> str:
        fmt = "{:.9g}".format
        lines = ["iter,mean_lcls,mean_lreg,w_cls_pos,w_cls_neg,w_reg_pos,map"]
        for i, it in enumerate(self.iters):
            m = fmt(self.maps[it]) if it in self.maps else ""
            lines.append(",".join([str(it), fmt(self.mean_lcls[i]), fmt(self.mean_lreg[i]),
                                   fmt(self.w_cls_pos[i]), fmt(self.w_cls_neg[i]),
                                   fmt(self.w_reg_pos[i]), m]))
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    detector: DetectorParams
    swn: SwnParams | None
    history: TrainHistory
    final_eval: "analysis.EvalReport | None"


def make_eval_scenes(cfg: TrainConfig) -> list[Scene]:
    """Held-out scenes from a reserved seed namespace, never trained on."""
    return [generate_scene(cfg.scene, (cfg.eval_seed, i)) for i in range(cfg.eval_scenes)]


def detections_from_forward(logits: np.ndarray, offsets: np.ndarray, anchors: AnchorSet,
                            cfg: TrainConfig) -> list[Detection]:
    """Decode per-anchor predictions into scored detections: best foreground
    class per anchor, score floor, per-scene top-k, then per-class NMS."""
    probs = softmax_probs(logits)
    fg = probs[:, 1:]
    cls = fg.argmax(axis=1) + 1
    score = fg[np.arange(fg.shape[0]), cls - 1]
    keep = score >= cfg.det_score_floor
    idx = np.flatnonzero(keep)
    if idx.size > cfg.det_pre_nms_top:
        order = idx[np.argsort(-score[idx], kind="stable")]
        idx = order[:cfg.det_pre_nms_top]
    boxes = decode_offsets_array(anchors.boxes[idx], offsets[idx])
    dets = [Detection(Box.from_array(boxes[j]), int(cls[i]), float(score[i]))
            for j, i in enumerate(idx)]
    return nms(dets, cfg.det_nms_iou)


def evaluate_detector(p: DetectorParams, scenes: list[Scene], anchors: AnchorSet,
                      cfg: TrainConfig) -> "analysis.EvalReport":
    """Held-out mAP of the detector against the clean ground truth."""
    dets_per_scene, gts_per_scene = [], []
    for scene in scenes:
        logits, offsets = detector_forward(p, scene, anchors)
        dets_per_scene.append(detections_from_forward(logits, offsets, anchors, cfg))
        gts_per_scene.append(scene.true_gts)
    return analysis.coco_map(dets_per_scene, gts_per_scene)


def _sampler_for_iteration(cfg: TrainConfig, iteration: int, scene_j: int) -> StrategyConfig:
    """Per-iteration sampling seed derived from the base seed; everything
    else in the sampler config is shared."""
    seed = int(np.random.SeedSequence(
        (_STREAM_SAMPLER, cfg.sampler.seed, iteration, scene_j)).generate_state(1)[0])
    return replace(cfg.sampler, seed=seed)


@dataclass
class _IterationBatch:
    """Concatenated per-anchor state for one training iteration."""

    features: np.ndarray
    label: np.ndarray
    target_cls: np.ndarray
    target_off: np.ndarray
    target_box: np.ndarray
    flipped: np.ndarray
    matches: list[MatchResult]
    anchors_per_scene: int


def _assemble(scenes: list[Scene], anchors: AnchorSet, cfg: TrainConfig) -> _IterationBatch:
    n = len(anchors)
    feats, labels, tcls, toff, tbox, flipped, matches = [], [], [], [], [], [], []
    for scene in scenes:
        m = match_anchors(anchors, scene.gts, cfg.sampler)
        matches.append(m)
        feats.append(scene.features)
        labels.append(m.label)
        tcls.append(m.class_id)
        off = np.zeros((n, 4))
        box = np.zeros((n, 4))
        pos = m.positive_mask
        if pos.any():
            gt_boxes = np.stack([g.box.as_array() for g in scene.gts])
            box[pos] = gt_boxes[m.assigned_gt[pos]]
            off[pos] = encode_offsets_array(anchors.boxes[pos], box[pos])
        toff.append(off)
        tbox.append(box)
        fl = np.zeros(n, dtype=bool)
        if pos.any():
            fl[pos] = scene.flipped[m.assigned_gt[pos]]
        flipped.append(fl)
    return _IterationBatch(np.concatenate(feats), np.concatenate(labels),
                           np.concatenate(tcls), np.concatenate(toff),
                           np.concatenate(tbox), np.concatenate(flipped), matches, n)


def _per_sample_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), labels]


def _strategy_weights(cfg: TrainConfig, batch: _IterationBatch, iteration: int,
                      l_cls: np.ndarray, probs: np.ndarray, offsets: np.ndarray,
                      m_var: np.ndarray, anchors: AnchorSet) -> WeightAssignment:
    """Apply the configured baseline strategy scene by scene and concatenate."""
    n = batch.anchors_per_scene
    s_cls_parts, s_reg_parts = [], []
    for j, m in enumerate(batch.matches):
        sl = slice(j * n, (j + 1) * n)
        sampler = _sampler_for_iteration(cfg, iteration, j)
        if cfg.strategy == "random":
            w = random_sampling_weights(m, sampler)
        elif cfg.strategy == "ohem":
            w = ohem_weights(m, l_cls[sl], sampler)
        elif cfg.strategy == "focal":
            p_true = probs[sl][np.arange(n), batch.target_cls[sl]]
            w = focal_weights(m, p_true, sampler)
        elif cfg.strategy == "kl":
            sigma2 = np.exp(2.0 * m_var[sl])
            w = kl_regression_weights(m, sigma2, sampler)
        elif cfg.strategy == "rpn":
            fg = 1.0 - probs[sl][:, 0]
            boxes = decode_offsets_array(anchors.boxes, offsets[sl])
            kept = nms_indices(boxes, fg, cfg.rpn_nms_iou)
            w = rpn_score_weights(m, fg, kept, sampler)
        else:
            raise ValueError(f"strategy {cfg.strategy!r} has no weight rule here")
        s_cls_parts.append(w.s_cls)
        s_reg_parts.append(w.s_reg)
    return WeightAssignment(np.concatenate(s_cls_parts), np.concatenate(s_reg_parts))


def train(cfg: TrainConfig) -> TrainResult:
    """Run the full training loop for the configured strategy.

    Each iteration: generate scenes, match anchors, run the detector heads,
    compute per-sample losses, obtain weights from the strategy (or the
    weighting network), apply the two-task weighted objective, and step the
    detector with SGD. Under the learned strategy the weighting network
    takes its own Adam step on detached inputs in the same iteration.
    Everything is deterministic given the config.
    """
    anchors = cfg.scene.make_anchors()
    detector = init_detector(cfg)
    swn_params = init_swn_params(cfg.swn, rng_from_seed(_STREAM_SWN, cfg.seed)) \
        if cfg.strategy == "swn" else None
    sgd = SgdState(cfg.detector_lr, cfg.detector_momentum, cfg.weight_decay)
    adam = AdamState(cfg.swn_lr, weight_decay=cfg.weight_decay)
    history = TrainHistory()
    eval_scenes = make_eval_scenes(cfg) if cfg.eval_scenes > 0 else []
    final_eval = None
    tiled_anchors = np.tile(anchors.boxes, (cfg.batch_scenes, 1))

    iteration = 0
    lr_scale = 1.0
    for epoch in range(cfg.epochs):
        if epoch in cfg.lr_decay_epochs:
            lr_scale *= 0.1
            sgd.set_lr(cfg.detector_lr * lr_scale)
            adam.set_lr(cfg.swn_lr * lr_scale)
        trace_parts: list[tuple] = []
        for _ in range(cfg.iters_per_epoch):
            iteration += 1
            scenes = [generate_scene(cfg.scene, (cfg.seed, iteration, j))
                      for j in range(cfg.batch_scenes)]
            batch = _assemble(scenes, anchors, cfg)
            trained = batch.label != IGNORE
            pos = batch.label == 1

            logits, cls_tape = mlp_forward(detector.cls_head, batch.features)
            offsets, reg_tape = mlp_forward(detector.reg_head, batch.features)
            m_var_raw, var_tape = mlp_forward(detector.var_head, batch.features)
            m_var = np.clip(m_var_raw[:, 0], -2.0, 2.0)

            probs = softmax_probs(logits)
            l_cls = _per_sample_ce(logits, batch.target_cls)
            diff = offsets - batch.target_off
            l_reg = np.where(pos, (diff * diff).sum(axis=1), 0.0)
            iou_rec = np.zeros(len(batch.label))
            if pos.any():
                pred_boxes = decode_offsets_array(tiled_anchors[pos], offsets[pos])
                iou_rec[pos] = elementwise_iou(pred_boxes, batch.target_box[pos])
            prob_rec = np.where(pos, probs[np.arange(len(pos)), batch.target_cls], 0.0)

            swn_result = None
            if cfg.strategy == "swn":
                # The learned weighting re-weights a proposal-style minibatch,
                # the way a weighting branch sits behind a second-stage
                # sampler: all positives (up to the budget) plus the
                # top-scoring negatives, which are the anchors a proposal
                # stage would surface. Weighting every anchor instead lets
                # the easy far-field background pin the weights at the clip
                # bounds and starve the foreground. For the same reason the
                # weights engage only after a warmup phase that stands in for
                # a pretrained backbone; warmup iterations train uniformly on
                # randomly sampled anchors.
                warm = epoch < cfg.swn_warmup_epochs
                fg_score = 1.0 - probs[:, 0]
                selected = np.zeros(len(batch.label), dtype=bool)
                for j, m in enumerate(batch.matches):
                    off0 = j * batch.anchors_per_scene
                    sampler = _sampler_for_iteration(cfg, iteration, j)
                    if warm:
                        sel = random_sampling_weights(m, sampler)
                        selected[off0:off0 + batch.anchors_per_scene] = sel.s_cls > 0.0
                    else:
                        pos_idx = np.flatnonzero(m.positive_mask) + off0
                        if pos_idx.size > sampler.n_p:
                            pos_idx = pos_idx[:sampler.n_p]
                        neg_idx = np.flatnonzero(m.negative_mask) + off0
                        order = neg_idx[np.argsort(-fg_score[neg_idx], kind="stable")]
                        selected[pos_idx] = True
                        selected[order[:sampler.n_n]] = True
                s_cls = np.zeros(len(batch.label))
                s_reg = np.zeros(len(batch.label))
                s_cls_raw = np.zeros(len(batch.label))
                if warm:
                    s_cls[selected] = 1.0
                    s_reg[selected & pos] = 1.0
                    s_cls_raw[selected] = 1.0
                else:
                    sb = SwnBatch(l_cls[selected], l_reg[selected], iou_rec[selected],
                                  prob_rec[selected], pos[selected])
                    swn_result = swn_loss_and_grads(swn_params, sb, cfg.reg)
                    s_cls[selected] = swn_result.s_cls
                    s_reg[selected] = swn_result.s_reg
                    s_cls_raw[selected] = swn_result.s_cls_raw
                norm = LossNormalization(int(selected.sum()), int((selected & pos).sum()))
                loss = swn_result.loss if swn_result is not None else \
                    unified_loss_arrays(l_cls, l_reg, s_cls, s_reg, norm)
            else:
                w = _strategy_weights(cfg, batch, iteration, l_cls, probs, offsets,
                                      m_var, anchors)
                s_cls, s_reg = w.s_cls, w.s_reg
                s_cls_raw = s_cls
                norm = LossNormalization.from_assignment(w)
                loss = unified_loss_arrays(l_cls, l_reg, s_cls, s_reg, norm)
                if cfg.strategy == "kl" and norm.n2 > 0:
                    loss += cfg.reg.lambda2 * float(m_var[pos].sum()) / norm.n2

            if not np.isfinite(loss):
                per_sample = s_cls * l_cls + s_reg * l_reg
                bad = np.flatnonzero(~np.isfinite(per_sample))
                raise TrainingDiverged(iteration, int(bad[0]) if bad.size else -1)

            # Detector gradients; the weights are constants here by design.
            dlogits = probs.copy()
            dlogits[np.arange(len(pos)), batch.target_cls] -= 1.0
            dlogits *= (s_cls / max(norm.n1, 1))[:, None]
            doff = 2.0 * diff * (np.where(pos, s_reg, 0.0) / max(norm.n2, 1))[:, None]
            _, cls_grads = mlp_backward(detector.cls_head, cls_tape, dlogits)
            _, reg_grads = mlp_backward(detector.reg_head, reg_tape, doff)
            if cfg.strategy == "kl" and norm.n2 > 0:
                dm_var = np.where(pos, -2.0 * np.exp(-2.0 * m_var) * l_reg + cfg.reg.lambda2,
                                  0.0) / norm.n2
                dm_var *= np.abs(m_var_raw[:, 0]) <= 2.0
                _, var_grads = mlp_backward(detector.var_head, var_tape, dm_var[:, None])
            else:
                _, var_grads = mlp_backward(detector.var_head, var_tape,
                                            np.zeros((len(pos), 1)))
            flat = []
            for g in cls_grads + reg_grads + var_grads:
                flat.append(g.dw)
                flat.append(g.db)
            sgd_step(sgd, detector.parameters(), flat)

            if swn_result is not None:
                adam_step(adam, swn_params.parameters(), swn_result.grads)

            neg = trained & ~pos
            w_pos = pos & (s_cls > 0.0)
            w_neg = neg & (s_cls > 0.0)
            w_reg = pos & (s_reg > 0.0)
            history.iters.append(iteration)
            history.mean_lcls.append(float(l_cls[trained].mean()))
            history.mean_lreg.append(float(l_reg[pos].mean()) if pos.any() else 0.0)
            history.w_cls_pos.append(float(s_cls[w_pos].mean()) if w_pos.any() else 0.0)
            history.w_cls_neg.append(float(s_cls[w_neg].mean()) if w_neg.any() else 0.0)
            history.w_reg_pos.append(float(s_reg[w_reg].mean()) if w_reg.any() else 0.0)
            history.n_pos.append(int(w_pos.sum()))
            history.n_neg.append(int(w_neg.sum()))
            trace_parts.append((iou_rec[w_pos], l_cls[w_pos], l_reg[w_pos], s_cls[w_pos],
                                s_cls_raw[w_pos], s_reg[w_pos], batch.flipped[w_pos]))

        history.epoch_traces.append(EpochTrace(*[np.concatenate(cols) for cols in
                                                 zip(*trace_parts)]))
        if eval_scenes:
            report = evaluate_detector(detector, eval_scenes, anchors, cfg)
            history.maps[iteration] = report.ap
            final_eval = report
    return TrainResult(detector, swn_params, history, final_eval)


def records_from_trace(trace: EpochTrace) -> list[SampleRecord]:
    """View an epoch trace as positive sample records for the analyses."""
    return [SampleRecord(i, True, float(trace.l_cls[i]), float(trace.l_reg[i]),
                         float(trace.iou[i]), 0.0,
                         s_cls=float(trace.s_cls[i]), s_reg=float(trace.s_reg[i]))
            for i in range(trace.iou.shape[0])]


@dataclass(frozen=True)
class ComparisonRow:
    strategy: str
    final_map: float
    mean_w_cls_pos: float
    mean_w_cls_neg: float
    mean_w_reg_pos: float


def run_strategy_comparison(base: TrainConfig, strategies: list[str]) -> list[ComparisonRow]:
    """Train each strategy on identical data streams (shared seeds) and
    report final held-out mAP plus last-epoch mean weights."""
    rows = []
    for name in strategies:
        cfg = replace(base, strategy=name)
        result = train(cfg)
        h = result.history
        tail = max(1, cfg.iters_per_epoch)
        rows.append(ComparisonRow(
            name,
            result.final_eval.ap if result.final_eval else 0.0,
            float(np.mean(h.w_cls_pos[-tail:])) if h.iters else 0.0,
            float(np.mean(h.w_cls_neg[-tail:])) if h.iters else 0.0,
            float(np.mean(h.w_reg_pos[-tail:])) if h.iters else 0.0,
        ))
    return rows


def standard_benchmark() -> TrainConfig:
    """The frozen noisy benchmark: 20% label flips, box jitter of 5% of the
    canvas, fixed seeds. Acceptance numbers are pinned against this config."""
    return TrainConfig()


def uniform_baseline(base: TrainConfig | None = None) -> TrainConfig:
    """Uniform weighting: random sampling with budgets covering every sample,
    i.e. weight 1 on all trained samples and all positives."""
    base = base or standard_benchmark()
    return replace(base, strategy="random",
                   sampler=replace(base.sampler, n_p=10 ** 9, n_n=10 ** 9))
