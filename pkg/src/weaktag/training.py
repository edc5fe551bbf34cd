"""Adam optimization, the per-clip training loop, and k-fold cross-validation.

Training operates on clips: each step draws a batch of clips, builds one
loss graph per clip (blocks vary in count, so there is no padding),
averages the gradients over the batch, and applies one Adam update.
Given a seed and a dataset order the parameter trajectory is
bit-reproducible in single-threaded use.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet
from .errors import FoldError, NonFiniteError
from .models import ModelSpec, clip_loss, init_params, predict_clip


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    model: str | None = None  # informational; ModelSpec.kind governs

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    """First/second moment accumulators mirroring a ParamSet."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamSet) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: ParamSet, grads: dict, state: AdamState,
              cfg: TrainConfig) -> tuple:
    """One bias-corrected Adam update, in place. Returns (params, state)."""
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param {name} shape {p.data.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        p.data -= (cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)).astype(p.data.dtype)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_eer: float | None
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def write_history_csv(path, history: TrainHistory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_eer", "seconds"])
        for rec in history:
            eer = "" if rec.val_eer is None else f"{rec.val_eer:.6f}"
            writer.writerow([rec.epoch, f"{rec.train_loss:.6f}", eer, f"{rec.seconds:.3f}"])


def _validation_eer(params, spec, validation) -> float | None:
    """Mean per-tag EER on a held-out set, skipping undefined tags."""
    from .evaluation import compute_eer  # local import keeps module deps one-way
    from .errors import UndefinedEerError

    scores = np.stack([predict_clip(blocks, params, spec) for blocks, _ in validation])
    truths = np.stack([t for _, t in validation])
    eers = []
    for k in range(truths.shape[1]):
        try:
            eers.append(compute_eer(scores[:, k], truths[:, k]))
        except UndefinedEerError:
            continue
    return float(np.mean(eers)) if eers else None


def train(spec: ModelSpec, params: ParamSet, dataset: list, cfg: TrainConfig,
          validation: list | None = None) -> tuple:
    """Run the optimization loop; returns (params, TrainHistory).

    ``dataset`` is a list of (blocks, targets) pairs per clip: blocks is a
    float32 (M, block_len, n_mels) stack, targets a (n_tags,) 0/1 vector.
    One rng seeded from ``cfg.seed`` drives both the epoch shuffles and
    the dropout masks, consumed in a fixed clip order.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    for i, (_, t) in enumerate(dataset):
        if np.asarray(t).shape != (spec.n_tags,):
            raise ValueError(f"clip {i}: label has shape {np.asarray(t).shape}, expected ({spec.n_tags},)")
    if cfg.model is not None and cfg.model != spec.kind:
        raise ValueError(f"config model {cfg.model!r} does not match spec kind {spec.kind!r}")

    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(params)
    history = TrainHistory()
    n = len(dataset)
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            ad.zero_grads(params)
            for idx in batch:
                blocks, targets = dataset[idx]
                loss, _ = clip_loss(blocks, targets, params, spec, mode="train", rng=rng)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NonFiniteError(f"loss became non-finite at epoch {epoch}, clip {idx}")
                epoch_losses.append(value)
                ad.backward(loss)
            scale = 1.0 / len(batch)
            grads = {
                name: (p.grad * scale if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()
            }
            adam_step(params, grads, state, cfg)
        val_eer = None if validation is None else _validation_eer(params, spec, validation)
        history.append(EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            val_eer=val_eer,
            seconds=time.perf_counter() - started,
        ))
    return params, history


@dataclass
class CVResult:
    """Per-fold histories plus the epoch-indexed mean validation EER."""

    fold_ids: list
    histories: list
    mean_eer_by_epoch: list
    best_epoch: int
    fold_eers_at_best: list
    mean_eer_at_best: float


def cross_validate(entries: list, spec: ModelSpec, cfg: TrainConfig,
                   folds: tuple = (1, 2, 3, 4, 5)) -> CVResult:
    """Leave-one-fold-out training over ``entries``.

    Each entry is (clip_id, blocks, targets, fold). For every fold f the
    model trains on the other folds (sorted by clip id, so membership and
    results do not depend on the input order) and records the held-out
    EER after each epoch. The best epoch minimizes the mean EER across
    folds.
    """
    if cfg.epochs < 1:
        raise ValueError("cross-validation needs at least one epoch")
    by_fold = {f: [] for f in folds}
    for clip_id, blocks, targets, fold in entries:
        if fold is None:
            raise FoldError(f"clip {clip_id!r} has no fold id")
        if fold not in by_fold:
            raise FoldError(f"clip {clip_id!r} has fold {fold}, expected one of {folds}")
        by_fold[fold].append((clip_id, blocks, targets))
    for f in folds:
        if not by_fold[f]:
            raise FoldError(f"empty fold {f}")
        by_fold[f].sort(key=lambda item: item[0])

    histories = []
    for i, f in enumerate(folds):
        train_set = [(b, t) for g in folds if g != f for _, b, t in by_fold[g]]
        val_set = [(b, t) for _, b, t in by_fold[f]]
        fold_rng = np.random.default_rng(cfg.seed)
        params = init_params(spec, fold_rng)
        fold_cfg = TrainConfig(
            learning_rate=cfg.learning_rate, adam_beta1=cfg.adam_beta1,
            adam_beta2=cfg.adam_beta2, adam_eps=cfg.adam_eps, epochs=cfg.epochs,
            batch_size=cfg.batch_size, seed=cfg.seed + i, model=cfg.model,
        )
        _, history = train(spec, params, train_set, fold_cfg, validation=val_set)
        histories.append(history)

    mean_by_epoch = []
    for e in range(cfg.epochs):
        eers = [h[e].val_eer for h in histories if h[e].val_eer is not None]
        mean_by_epoch.append(float(np.mean(eers)) if eers else float("nan"))
    best = int(np.nanargmin(mean_by_epoch))
    at_best = [h[best].val_eer for h in histories]
    return CVResult(
        fold_ids=list(folds),
        histories=histories,
        mean_eer_by_epoch=mean_by_epoch,
        best_epoch=best,
        fold_eers_at_best=at_best,
        mean_eer_at_best=mean_by_epoch[best],
    )
