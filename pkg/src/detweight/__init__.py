"""detweight: sample weighting for anchor-based detection at desk scale.

The library expresses classic region sampling schemes (random sampling,
hard-example mining, focal down-weighting, inverse-variance weighting,
proposal-score gating) as per-sample weight assignments over one shared
two-task loss, and adds a small learned network that predicts per-sample
log-sigma weights for both tasks from each sample's loss, IoU and score
statistics. A synthetic detection benchmark with controllable annotation
noise exercises everything end to end.
"""

from .geometry import (AnchorSet, Box, Detection, GroundTruth, Offset4, decode_offsets,
                       encode_offsets, generate_anchors, iou, nms, soft_nms)
from .losses import (LossNormalization, RegularizerConfig, SampleRecord, optimal_sigma,
                     softmax_ce, tempered_softmax, uncertainty_loss, unified_loss)
from .matching import (MatchResult, StrategyConfig, WeightAssignment, focal_weights,
                       kl_regression_weights, match_anchors, ohem_weights,
                       random_sampling_weights, rpn_score_weights)
from .nn import AdamState, MlpParams, SgdState, adam_step, gradcheck, mlp_backward, mlp_forward, sgd_step
from .swn import SwnConfig, SwnParams, embed_features, predict_weights, smooth_cls_weights, swn_step
from .toydet import (SceneConfig, TrainConfig, TrainHistory, generate_scene,
                     run_strategy_comparison, standard_benchmark, train, uniform_baseline)
from .analysis import (EvalReport, coco_map, convergence_trace, init_sensitivity,
                       lambda_sweep, loss_distribution_by_iou)

__version__ = "0.1.0"
