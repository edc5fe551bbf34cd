"""Weakly supervised audio tagging with joint block-level detection and
classification.

The package turns PCM audio into log-mel block features, trains either a
bag-of-blocks baseline or a joint detection-classification tagger from
clip-level labels only, evaluates per-tag equal error rates, and exports
the block-level maps that localize events in time.
"""

from .datasets import DEFAULT_TAGS, SynthConfig, localization_score, parse_weak_labels, synth_generate
from .estimators import BagOfBlocksTagger, JointDetectionClassifier, load_tagger
from .evaluation import compute_eer, evaluate_tagger
from .features import extract_features, load_wav, make_blocks, mel_filterbank
from .models import ModelSpec, ScoreMaps, bob_predict, jdc_pool, normalize_detector
from .training import TrainConfig, cross_validate, train

__version__ = "0.1.0"

__all__ = [
    "BagOfBlocksTagger",
    "JointDetectionClassifier",
    "ModelSpec",
    "ScoreMaps",
    "SynthConfig",
    "TrainConfig",
    "DEFAULT_TAGS",
    "bob_predict",
    "compute_eer",
    "cross_validate",
    "evaluate_tagger",
    "extract_features",
    "jdc_pool",
    "load_tagger",
    "load_wav",
    "localization_score",
    "make_blocks",
    "mel_filterbank",
    "normalize_detector",
    "parse_weak_labels",
    "synth_generate",
    "train",
    "__version__",
]
