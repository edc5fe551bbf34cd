"""Scikit-learn style estimators wrapping the block-level taggers.

Both taggers consume a list of per-clip log-mel feature matrices (frame
counts may differ between clips) and an (n_clips, n_tags) binary label
matrix. ``fit`` standardizes each mel bin on the training clips, slices
the features into overlapping blocks, and runs the optimization loop;
``predict_proba`` returns per-clip tag probabilities.

Example
-------
>>> model = JointDetectionClassifier(epochs=10, seed=7)
>>> model.fit(feature_list, labels)            # doctest: +SKIP
>>> probs = model.predict_proba(feature_list)  # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import checkpoint as ckpt
from .autodiff import parameters
from .features import make_blocks
from .models import ModelSpec, ScoreMaps, init_params, predict_clip, score_maps
from .training import TrainConfig, train
from .validation import as_feature_list, as_label_matrix

_STD_FLOOR = 1e-6


class _BlockTagger(BaseEstimator):
    """Shared fit/predict machinery; subclasses pin the model kind."""

    _kind: str = ""

    def __init__(self, epochs=50, learning_rate=2e-4, batch_size=32,
                 hidden_units=500, n_hidden=3, dropout=0.2, block_len=11,
                 block_hop=1, seed=0, standardize=True, tags=None):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.hidden_units = hidden_units
        self.n_hidden = n_hidden
        self.dropout = dropout
        self.block_len = block_len
        self.block_hop = block_hop
        self.seed = seed
        self.standardize = standardize
        self.tags = tags

    # -- helpers -----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"this {type(self).__name__} instance is not fitted yet")

    def _scale(self, feat: np.ndarray) -> np.ndarray:
        return (feat - self.feature_mean_) / self.feature_std_

    def _blocks(self, X) -> list:
        feats = as_feature_list(X, getattr(self, "n_mels_", None))
        return [
            make_blocks(self._scale(f), self.block_len, self.block_hop).astype(np.float32)
            for f in feats
        ]

    def _make_spec(self, n_mels: int, n_tags: int) -> ModelSpec:
        return ModelSpec(kind=self._kind, block_len=self.block_len, n_mels=n_mels,
                         hidden_units=self.hidden_units, n_hidden=self.n_hidden,
                         n_tags=n_tags, dropout=self.dropout)

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y, validation=None):
        """Train on per-clip features X and binary clip labels y.

        ``validation`` is an optional (X_val, y_val) pair; when given, the
        history records the held-out mean EER after every epoch.
        """
        feats = as_feature_list(X)
        n_mels = feats[0].shape[1]
        labels = as_label_matrix(y, len(feats))
        n_tags = labels.shape[1]
        if self.tags is not None and len(self.tags) != n_tags:
            raise ValueError(f"{len(self.tags)} tag names but y has {n_tags} columns")

        if self.standardize:
            stacked = np.concatenate([f for f in feats], axis=0).astype(np.float64)
            mean = stacked.mean(axis=0)
            std = np.maximum(stacked.std(axis=0), _STD_FLOOR)
        else:
            mean = np.zeros(n_mels)
            std = np.ones(n_mels)
        self.feature_mean_ = mean.astype(np.float32)
        self.feature_std_ = std.astype(np.float32)
        self.n_mels_ = n_mels
        self.n_tags_ = n_tags
        self.tags_ = tuple(self.tags) if self.tags is not None else tuple(
            f"tag{k}" for k in range(n_tags)
        )

        spec = self._make_spec(n_mels, n_tags)
        params = init_params(spec, np.random.default_rng(self.seed))
        cfg = TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                          batch_size=self.batch_size, seed=self.seed, model=self._kind)
        dataset = list(zip(self._blocks(feats), labels))
        val_set = None
        if validation is not None:
            X_val, y_val = validation
            val_feats = as_feature_list(X_val, n_mels)
            val_labels = as_label_matrix(y_val, len(val_feats), n_tags)
            val_set = list(zip(self._blocks(val_feats), val_labels))
        self.spec_ = spec
        self.params_, self.history_ = train(spec, params, dataset, cfg, validation=val_set)
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Per-clip tag probabilities, shape (n_clips, n_tags)."""
        self._check_fitted()
        return np.stack([
            predict_clip(blocks, self.params_, self.spec_) for blocks in self._blocks(X)
        ])

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        """Binary tag decisions at the given probability threshold."""
        return (self.predict_proba(X) >= threshold).astype(np.uint8)

    def classifier_maps(self, X) -> list:
        """Per-clip block-score matrices in (n_tags, n_blocks) orientation."""
        self._check_fitted()
        from .models import classifier_forward

        out = []
        for blocks in self._blocks(X):
            y = classifier_forward(blocks, self.params_, self.spec_, mode="eval")
            out.append(y.data.T.astype(np.float64))
        return out

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Write the fitted model to a checkpoint file."""
        self._check_fitted()
        ckpt.save_checkpoint(path, self.spec_, self.tags_, self.feature_mean_,
                             self.feature_std_, self.params_)

    @classmethod
    def _from_checkpoint(cls, spec, tags, mean, std, params):
        est = cls(epochs=0, hidden_units=spec.hidden_units, n_hidden=spec.n_hidden,
                  dropout=spec.dropout, block_len=spec.block_len, tags=list(tags))
        est.spec_ = spec
        est.tags_ = tags
        est.n_mels_ = spec.n_mels
        est.n_tags_ = spec.n_tags
        est.feature_mean_ = mean.astype(np.float32)
        est.feature_std_ = std.astype(np.float32)
        est.params_ = parameters(params.items())
        est.history_ = None
        return est


class BagOfBlocksTagger(_BlockTagger):
    """Baseline tagger: during training every block inherits the clip's
    tags; at inference the clip probability is the mean block score.

    Parameters
    ----------
    epochs : int, default=65
        Optimization passes over the training clips.
    learning_rate : float, default=2e-4
        Adam step size.
    batch_size : int, default=32
        Clips per optimizer step.
    hidden_units, n_hidden : int
        Width and depth of the per-block classifier stack.
    dropout : float, default=0.2
        Drop probability after each hidden layer during training.
    block_len, block_hop : int
        Frames per block and frames between block starts.
    seed : int, default=0
        Controls initialization, shuffling, and dropout; fixed seeds give
        bit-reproducible training.
    standardize : bool, default=True
        Learn per-mel-bin mean/std on the training clips.
    tags : sequence of str, optional
        Names stored in checkpoints and reports.

    Attributes
    ----------
    params_ : dict of named weight tensors
    history_ : per-epoch loss (and EER, when validating) records
    feature_mean_, feature_std_ : per-bin standardization vectors
    """

    _kind = "bob"

    def __init__(self, epochs=65, learning_rate=2e-4, batch_size=32,
                 hidden_units=500, n_hidden=3, dropout=0.2, block_len=11,
                 block_hop=1, seed=0, standardize=True, tags=None):
        super().__init__(epochs=epochs, learning_rate=learning_rate,
                         batch_size=batch_size, hidden_units=hidden_units,
                         n_hidden=n_hidden, dropout=dropout, block_len=block_len,
                         block_hop=block_hop, seed=seed, standardize=standardize,
                         tags=tags)


class JointDetectionClassifier(_BlockTagger):
    """Tagger that learns which blocks to attend to.

    A shallow detector scores per-block informativeness per tag; scores
    are normalized over each clip's blocks and weight the classifier's
    block probabilities when pooling to a clip prediction, so the clip
    loss trains both networks and the detector localizes events despite
    seeing only clip-level labels.

    See :class:`BagOfBlocksTagger` for the shared parameters; the default
    epoch count is longer because the joint objective converges slower.
    """

    _kind = "jdc"

    def __init__(self, epochs=110, learning_rate=2e-4, batch_size=32,
                 hidden_units=500, n_hidden=3, dropout=0.2, block_len=11,
                 block_hop=1, seed=0, standardize=True, tags=None):
        super().__init__(epochs=epochs, learning_rate=learning_rate,
                         batch_size=batch_size, hidden_units=hidden_units,
                         n_hidden=n_hidden, dropout=dropout, block_len=block_len,
                         block_hop=block_hop, seed=seed, standardize=standardize,
                         tags=tags)

    def score_maps(self, X) -> list:
        """Per-clip :class:`ScoreMaps` (classifier, detector, normalized
        detector), each (n_tags, n_blocks)."""
        self._check_fitted()
        return [score_maps(blocks, self.params_, self.spec_) for blocks in self._blocks(X)]

    def constant_detector_copy(self) -> "JointDetectionClassifier":
        """A copy whose detector outputs the same score for every block.

        Zeroing the detector layer makes every raw score 0.5, so the
        normalized weights are uniform. Used as the ablation control when
        measuring what the detector itself learned.
        """
        self._check_fitted()
        params = {name: p.data.copy() for name, p in self.params_.items()}
        params["det.w"] = np.zeros_like(params["det.w"])
        params["det.b"] = np.zeros_like(params["det.b"])
        return type(self)._from_checkpoint(self.spec_, self.tags_, self.feature_mean_,
                                           self.feature_std_, params)


def load_tagger(path):
    """Load a checkpoint into the matching estimator class."""
    spec, tags, mean, std, params = ckpt.load_checkpoint(path)
    cls = BagOfBlocksTagger if spec.kind == "bob" else JointDetectionClassifier
    return cls._from_checkpoint(spec, tags, mean, std, params)


__all__ = ["BagOfBlocksTagger", "JointDetectionClassifier", "load_tagger", "ScoreMaps"]
