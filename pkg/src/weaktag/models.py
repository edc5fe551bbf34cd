"""Block-level tagging models: pooling rules, losses, and network graphs.

Two models share a per-block classifier (a fully connected stack with a
sigmoid output per tag):

* bag-of-blocks ("bob"): every block inherits the clip's tags during
  training; at inference the clip probability is the plain average of
  block scores.
* joint detection-classification ("jdc"): a second, shallow network (the
  detector) scores how informative each block is per tag. Detector scores
  are normalized to sum to one over the clip's blocks and used as weights
  when pooling the classifier scores, so the clip loss trains both nets.

Score-map conventions follow (tags, blocks) = (K, M) orientation in the
public numpy functions. The autodiff graphs work in (M, K), the natural
layout for per-block dense layers; helpers transpose at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor

NORM_EPS = 1e-8
BCE_EPS = 1e-7

MODEL_KINDS = ("bob", "jdc")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters shared by training and checkpoints."""

    kind: str = "jdc"
    block_len: int = 11
    n_mels: int = 40
    hidden_units: int = 500
    n_hidden: int = 3
    n_tags: int = 8
    dropout: float = 0.2

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.hidden_units < 1 or self.n_hidden < 1:
            raise ValueError("hidden layer sizes must be positive")
        if self.n_tags < 1:
            raise ValueError("need at least one tag")


@dataclass
class ScoreMaps:
    """Per-clip maps in (K, M) orientation.

    ``classifier`` holds per-block tag probabilities, ``detector`` the raw
    per-block informativeness scores, and ``detector_norm`` the detector
    after per-tag normalization over blocks.
    """

    classifier: np.ndarray
    detector: np.ndarray
    detector_norm: np.ndarray

    @property
    def product(self) -> np.ndarray:
        """The saliency map: normalized detector times classifier."""
        return self.detector_norm * self.classifier


# ---------------------------------------------------------------------------
# Pooling and losses on plain arrays (the quantitative contract).
# ---------------------------------------------------------------------------

def normalize_detector(w: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Normalize raw detector scores so each tag's row sums to one.

    ``w`` is (K, M) with entries in (0, 1); the eps guard keeps the op
    total if a row underflows to zero.
    """
    w = np.asarray(w, dtype=np.float64)
    denom = w.sum(axis=-1, keepdims=True) + eps
    return w / denom


def jdc_pool(w_norm: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Clip probability per tag: detector-weighted average of classifier scores."""
    w_norm = np.asarray(w_norm, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if w_norm.shape != y.shape:
        raise ValueError(f"shape mismatch: weights {w_norm.shape} vs scores {y.shape}")
    return (w_norm * y).sum(axis=-1)


def bob_predict(y: np.ndarray) -> np.ndarray:
    """Clip probability per tag: unweighted mean of block scores over M."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] == 0:
        raise ValueError("cannot pool an empty block axis")
    return y.mean(axis=-1)


def bce(p, t, clip_eps: float = BCE_EPS):
    """Binary cross-entropy with probabilities clamped away from {0, 1}."""
    p = np.clip(np.asarray(p, dtype=np.float64), clip_eps, 1.0 - clip_eps)
    t = np.asarray(t, dtype=np.float64)
    return -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))


def bob_loss(y: np.ndarray, t: np.ndarray) -> float:
    """Training loss for "bob": mean over blocks of the summed per-tag BCE,
    with every block assigned the clip's tags."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != t.shape[0]:
        raise ValueError(f"score map {y.shape} does not match {t.shape[0]} tags")
    m = y.shape[1]
    if m == 0:
        raise ValueError("cannot compute loss over zero blocks")
    return float(bce(y, t[:, None]).sum() / m)


def jdc_loss(p: np.ndarray, t: np.ndarray) -> float:
    """Training loss for "jdc": per-tag BCE of the pooled clip probabilities."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction length {p.shape} != label length {t.shape}")
    return float(bce(p, t).sum())


# ---------------------------------------------------------------------------
# Parameter initialization and autodiff graphs.
# ---------------------------------------------------------------------------

def init_params(spec: ModelSpec, rng: np.random.Generator,
                dtype=np.float32) -> ParamSet:
    """Glorot-uniform weights and zero biases, in a fixed draw order.

    The classifier flattens each (block_len, n_mels) block frame by frame
    into a block_len * n_mels vector; the detector acts on the 40-bin
    time-mean, so its single layer is (n_mels, n_tags).
    """
    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)

    named = []
    d_in = spec.block_len * spec.n_mels
    for i in range(spec.n_hidden):
        d_out = spec.hidden_units
        named.append((f"cls.w{i + 1}", glorot(d_in, d_out)))
        named.append((f"cls.b{i + 1}", np.zeros(d_out, dtype=dtype)))
        d_in = d_out
    named.append(("cls.w_out", glorot(d_in, spec.n_tags)))
    named.append(("cls.b_out", np.zeros(spec.n_tags, dtype=dtype)))
    if spec.kind == "jdc":
        named.append(("det.w", glorot(spec.n_mels, spec.n_tags)))
        named.append(("det.b", np.zeros(spec.n_tags, dtype=dtype)))
    return ad.parameters(named)


def _as_block_stack(blocks, spec: ModelSpec, dtype) -> np.ndarray:
    arr = blocks.data if isinstance(blocks, Tensor) else np.asarray(blocks, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != spec.block_len or arr.shape[2] != spec.n_mels:
        raise ValueError(
            f"blocks must be (M, {spec.block_len}, {spec.n_mels}), got {arr.shape}"
        )
    return arr


def classifier_forward(blocks, params: ParamSet, spec: ModelSpec,
                       mode: str = "eval",
                       rng: np.random.Generator | None = None) -> Tensor:
    """Per-block tag probabilities, shape (M, K).

    ``blocks`` is (M, block_len, n_mels) or a single (block_len, n_mels)
    block. Dropout follows each hidden ReLU in train mode only.
    """
    dtype = params["cls.w1"].data.dtype
    arr = _as_block_stack(blocks, spec, dtype)
    m = arr.shape[0]
    x = blocks if isinstance(blocks, Tensor) else Tensor(arr)
    x = ad.reshape(x, (m, spec.block_len * spec.n_mels))
    for i in range(spec.n_hidden):
        x = ad.relu(ad.dense_forward(x, params[f"cls.w{i + 1}"], params[f"cls.b{i + 1}"]))
        x = ad.dropout(x, spec.dropout, mode, rng)
    return ad.sigmoid(ad.dense_forward(x, params["cls.w_out"], params["cls.b_out"]))


def detector_forward(blocks, params: ParamSet, spec: ModelSpec) -> Tensor:
    """Per-block informativeness scores, shape (M, K).

    Each block is mean-pooled over its frames before a single dense layer
    with sigmoid output; no dropout on this path.
    """
    dtype = params["det.w"].data.dtype
    arr = _as_block_stack(blocks, spec, dtype)
    x = blocks if isinstance(blocks, Tensor) else Tensor(arr)
    if x.data.ndim == 2:
        x = ad.reshape(x, (1,) + x.data.shape)
    pooled = ad.mean_pool_time(x)
    return ad.sigmoid(ad.dense_forward(pooled, params["det.w"], params["det.b"]))


def jdc_forward(blocks, params: ParamSet, spec: ModelSpec, mode: str = "eval",
                rng: np.random.Generator | None = None):
    """Full joint forward pass for one clip.

    Returns tensors ``(y, w, w_norm, p)``: classifier scores (M, K), raw
    detector (M, K), normalized detector (M, K), and the pooled clip
    probabilities (K,). Gradients flow to both networks through the
    normalization and the weighted sum.
    """
    y = classifier_forward(blocks, params, spec, mode, rng)
    w = detector_forward(blocks, params, spec)
    denom = ad.sum_over(w, axis=0, keepdims=True) + NORM_EPS
    w_norm = w / denom
    p = ad.sum_over(w_norm * y, axis=0)
    return y, w, w_norm, p


def _bce_graph(p: Tensor, targets: np.ndarray) -> Tensor:
    t = np.asarray(targets, dtype=p.data.dtype)
    pc = ad.clip_values(p, BCE_EPS, 1.0 - BCE_EPS)
    pos = ad.log(pc) * t
    negt = ad.log(ad.sub(1.0, pc)) * (1.0 - t)
    return ad.neg(ad.sum_all(pos + negt))


def bob_clip_loss(blocks, targets, params: ParamSet, spec: ModelSpec,
                  mode: str = "train",
                  rng: np.random.Generator | None = None) -> tuple:
    """Per-clip "bob" loss graph; returns (scalar loss tensor, y tensor)."""
    y = classifier_forward(blocks, params, spec, mode, rng)
    m = y.data.shape[0]
    t = np.broadcast_to(np.asarray(targets, dtype=y.data.dtype), y.data.shape)
    loss = _bce_graph(y, t) / float(m)
    return loss, y


def jdc_clip_loss(blocks, targets, params: ParamSet, spec: ModelSpec,
                  mode: str = "train",
                  rng: np.random.Generator | None = None) -> tuple:
    """Per-clip "jdc" loss graph; returns (scalar loss tensor, p tensor)."""
    _, _, _, p = jdc_forward(blocks, params, spec, mode, rng)
    return _bce_graph(p, targets), p


def clip_loss(blocks, targets, params: ParamSet, spec: ModelSpec,
              mode: str = "train", rng: np.random.Generator | None = None) -> tuple:
    if spec.kind == "bob":
        return bob_clip_loss(blocks, targets, params, spec, mode, rng)
    return jdc_clip_loss(blocks, targets, params, spec, mode, rng)


def predict_clip(blocks, params: ParamSet, spec: ModelSpec) -> np.ndarray:
    """Clip tag probabilities (K,) with dropout off."""
    if spec.kind == "bob":
        y = classifier_forward(blocks, params, spec, mode="eval")
        return bob_predict(y.data.T)
    _, _, _, p = jdc_forward(blocks, params, spec, mode="eval")
    return p.data.astype(np.float64)


def score_maps(blocks, params: ParamSet, spec: ModelSpec) -> ScoreMaps:
    """Evaluate all per-block maps for one clip, in (K, M) orientation.

    Only defined for "jdc"; the bag-of-blocks model has no detector.
    """
    if spec.kind != "jdc":
        raise ValueError("score maps with a detector require a jdc model")
    y, w, w_norm, _ = jdc_forward(blocks, params, spec, mode="eval")
    return ScoreMaps(
        classifier=y.data.T.astype(np.float64),
        detector=w.data.T.astype(np.float64),
        detector_norm=w_norm.data.T.astype(np.float64),
    )
