"""Sample-centric evaluation for industrial defect segmentation."""

from .decision import (
    DecisionRule,
    SampleConfusion,
    Statistic,
    decide,
    phi,
    sample_confusion,
    seg_accuracy,
    seg_recall,
    threshold_sweep,
)
from .loss import (
    GradientField,
    LossWeights,
    cls_bce,
    cls_bce_grad,
    joint_grads,
    joint_loss,
    seg_bce,
    seg_bce_grad,
)
from .masks import BinaryMask, PixelConfusion, ProbabilityMap, binarize, iou, pixel_confusion
from .metrics import (
    EmptyPolicy,
    LocalizationSummary,
    SampleRecord,
    naive_sample_miou,
    pooled_miou,
    sample_miou,
    weighted_sample_miou,
)

__version__ = "0.1.0"
