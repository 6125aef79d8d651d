"""Cascaded shape regression for facial landmarks.

Random-fern cascades with triplet-interpolated, two-point and
closest-landmark shape-indexed features, pose-aware training augmentation,
POSIT head pose and evaluation metrics.
"""
__version__ = "0.1.0"

from .balance import (AugmentationPlan, GaussianFit, InitConfig, fit_gaussian, generate_inits,
                      nca_plan, uniform_plan)
from .cascade import (CascadeModel, Fern, TrainConfig, fern_bin, load_model, predict,
                      predict_batch, save_model, train_cascade, train_fern)
from .dataset import Sample, SynthConfig, generate_synthetic, parse_pts, serialize_pts
from .features import (FeaturePool, LocalOffsetIndex, PairIndex, TifIndex, extract_features,
                       offset_point, pair_point, sample_pool, tif_point)
from .geometry import (BBox, SimilarityTransform, denormalize_shape, mean_shape,
                       normalize_shape, similarity_fit)
from .headpose import CameraIntrinsics, Model3D, PoseEstimate, posit, significant_angle
from .metrics import Normalizer, ced, failure_histogram, nme, slr, sorted_errors
