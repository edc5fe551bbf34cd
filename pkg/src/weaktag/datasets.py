"""Weak-label index ingestion, synthetic corpus generation, and the
event-localization score.

The synthetic generator exists so the whole pipeline can be exercised at
desk scale: each tag maps to a spectrally disjoint prototype sound, events
are placed at seeded-random times over a quiet noise floor, and the exact
onsets/offsets are kept as hidden ground truth that training never sees.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LabelParseError, PlacementError
from .features import SAMPLE_RATE, AudioClip, block_center_time, write_wav

DEFAULT_TAGS = ("c", "m", "f", "v", "p", "b", "o", "S")
SPLITS = ("development", "evaluation")


@dataclass
class IndexEntry:
    clip_id: str
    label: np.ndarray  # (K,) uint8
    fold: int | None
    split: str


@dataclass
class Event:
    tag: str
    onset: float
    offset: float


def parse_weak_labels(path, tags: tuple = DEFAULT_TAGS) -> list:
    """Parse an index file of ``clip_id,label_string,fold,split`` lines.

    The label string concatenates tag letters (duplicates collapse); an
    empty string is an accepted all-negative label, reported with a
    warning. The fold field may be empty. Malformed lines raise
    ``LabelParseError`` carrying the 1-based line number.
    """
    tag_pos = {t: i for i, t in enumerate(tags)}
    entries = []
    seen = set()
    with open(path, newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise LabelParseError(line_no, f"expected 4 comma-separated fields, got {len(parts)}")
            clip_id, label_string, fold_str, split = (p.strip() for p in parts)
            if not clip_id:
                raise LabelParseError(line_no, "empty clip id")
            if clip_id in seen:
                raise LabelParseError(line_no, f"duplicate clip id {clip_id!r}")
            seen.add(clip_id)
            label = np.zeros(len(tags), dtype=np.uint8)
            for letter in label_string:
                if letter not in tag_pos:
                    raise LabelParseError(line_no, f"unknown tag letter {letter!r}")
                label[tag_pos[letter]] = 1
            if not label_string:
                warnings.warn(f"line {line_no}: clip {clip_id!r} has an empty label", stacklevel=2)
            fold = None
            if fold_str:
                try:
                    fold = int(fold_str)
                except ValueError:
                    raise LabelParseError(line_no, f"fold must be an integer, got {fold_str!r}") from None
            if split not in SPLITS:
                raise LabelParseError(line_no, f"split must be one of {SPLITS}, got {split!r}")
            entries.append(IndexEntry(clip_id=clip_id, label=label, fold=fold, split=split))
    return entries


def write_index(path, entries: list, tags: tuple) -> None:
    with open(path, "w", newline="") as fh:
        for e in entries:
            letters = "".join(t for t, bit in zip(tags, e.label) if bit)
            fold = "" if e.fold is None else str(e.fold)
            fh.write(f"{e.clip_id},{letters},{fold},{e.split}\n")


def write_annotations(path, annotations: dict) -> None:
    """CSV of hidden event-level truth: clip_id, tag, onset, offset."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "tag", "onset", "offset"])
        for clip_id in sorted(annotations):
            for ev in annotations[clip_id]:
                writer.writerow([clip_id, ev.tag, f"{ev.onset:.6f}", f"{ev.offset:.6f}"])


def read_annotations(path) -> dict:
    annotations: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["clip_id", "tag", "onset", "offset"]:
            raise LabelParseError(1, f"unexpected annotation header {header}")
        for row in reader:
            clip_id, tag, onset, offset = row[0], row[1], float(row[2]), float(row[3])
            annotations.setdefault(clip_id, []).append(Event(tag, onset, offset))
    return annotations


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

# Prototype frequency bands, chosen disjoint so each tag is learnable from
# the mel spectrum alone. kind: tone (single frequency), band (filtered
# noise between two edges), chirp (linear sweep).
_PROTOTYPES = (
    ("tone", 500.0, None),
    ("band", 1500.0, 2500.0),
    ("chirp", 3200.0, 4200.0),
    ("tone", 5500.0, None),
    ("band", 6500.0, 7500.0),
)

SYNTH_TAGS = ("a", "b", "c", "d", "e")


@dataclass
class SynthConfig:
    n_clips: int = 200
    n_tags: int = 3
    clip_seconds: float = 4.0
    sample_rate: int = SAMPLE_RATE
    min_events: int = 1
    max_events: int = 3
    min_event_len: float = 0.3
    max_event_len: float = 1.5
    noise_floor: float = 0.005
    event_gain: float = 0.25
    n_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_clips < 0:
            raise ValueError("n_clips must be >= 0")
        if not 1 <= self.n_tags <= len(_PROTOTYPES):
            raise ValueError(f"n_tags must be in 1..{len(_PROTOTYPES)} (one prototype per tag)")
        if self.min_events < 1 or self.max_events < self.min_events:
            raise ValueError("event count range is invalid")
        if self.min_event_len <= 0 or self.max_event_len < self.min_event_len:
            raise ValueError("event length range is invalid")


def _render_event(kind: str, f_lo: float, f_hi: float | None, n: int,
                  sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sample_rate
    if kind == "tone":
        wave = np.sin(2 * np.pi * f_lo * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        sweep = f_lo * t + (f_hi - f_lo) * t * t / (2 * t[-1] if n > 1 else 1.0)
        wave = np.sin(2 * np.pi * sweep + rng.uniform(0, 2 * np.pi))
    elif kind == "band":
        noise = rng.normal(size=n)
        spectrum = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        spectrum[(freqs < f_lo) | (freqs > f_hi)] = 0.0
        wave = np.fft.irfft(spectrum, n=n)
        peak = np.abs(wave).max()
        if peak > 0:
            wave /= peak
    else:
        raise ValueError(f"unknown prototype kind {kind!r}")
    fade = min(int(0.01 * sample_rate), n // 2)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade)
        wave[:fade] *= ramp
        wave[-fade:] *= ramp[::-1]
    return wave


def synth_generate(cfg: SynthConfig) -> tuple:
    """Generate a weakly labelled corpus with hidden event-level truth.

    Returns (clips, entries, annotations): AudioClips, index entries whose
    weak label is the union of the clip's event tags, and a dict mapping
    clip id to its Event list. Fold ids cycle 1..n_folds. The same seed
    reproduces identical audio and annotations.
    """
    rng = np.random.default_rng(cfg.seed)
    tags = SYNTH_TAGS[: cfg.n_tags]
    n_samples = int(round(cfg.clip_seconds * cfg.sample_rate))
    if cfg.max_event_len > cfg.clip_seconds:
        raise PlacementError(
            f"events up to {cfg.max_event_len}s cannot fit in a {cfg.clip_seconds}s clip"
        )
    clips, entries, annotations = [], [], {}
    for i in range(cfg.n_clips):
        clip_id = f"synth{i:05d}"
        samples = rng.normal(0.0, cfg.noise_floor, size=n_samples)
        label = np.zeros(cfg.n_tags, dtype=np.uint8)
        events = []
        n_events = int(rng.integers(cfg.min_events, cfg.max_events + 1))
        for _ in range(n_events):
            k = int(rng.integers(cfg.n_tags))
            length = float(rng.uniform(cfg.min_event_len, cfg.max_event_len))
            onset = float(rng.uniform(0.0, cfg.clip_seconds - length))
            start = int(round(onset * cfg.sample_rate))
            count = min(int(round(length * cfg.sample_rate)), n_samples - start)
            kind, f_lo, f_hi = _PROTOTYPES[k]
            samples[start : start + count] += cfg.event_gain * _render_event(
                kind, f_lo, f_hi, count, cfg.sample_rate, rng
            )
            label[k] = 1
            events.append(Event(tag=tags[k], onset=onset, offset=onset + length))
        np.clip(samples, -1.0, 32767.0 / 32768.0, out=samples)
        clips.append(AudioClip(samples=samples.astype(np.float32),
                               sample_rate=cfg.sample_rate, id=clip_id))
        entries.append(IndexEntry(clip_id=clip_id, label=label,
                                  fold=(i % cfg.n_folds) + 1, split="development"))
        annotations[clip_id] = events
    return clips, entries, annotations


def write_corpus(out_dir, clips: list, entries: list, annotations: dict,
                 tags: tuple) -> None:
    """Materialize a generated corpus: audio/, index.csv, annotations.csv,
    and tags.txt naming the vocabulary (one tag per line, in order)."""
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        write_wav(audio_dir / f"{clip.id}.wav", clip.samples, clip.sample_rate)
    write_index(out_dir / "index.csv", entries, tags)
    write_annotations(out_dir / "annotations.csv", annotations)
    with open(out_dir / "tags.txt", "w") as fh:
        fh.write("".join(f"{t}\n" for t in tags))


def read_vocabulary(path) -> tuple:
    """Read a tags.txt vocabulary file (one tag per line)."""
    with open(path) as fh:
        tags = tuple(line.strip() for line in fh if line.strip())
    if len(set(tags)) != len(tags):
        raise LabelParseError(1, f"duplicate tags in vocabulary file {path}")
    return tags


# ---------------------------------------------------------------------------
# Localization scoring
# ---------------------------------------------------------------------------

def ranked_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC AUC via average ranks; ties contribute half weight."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def block_event_mask(n_blocks: int, events: list, tag: str,
                     block_len: int = 11, frame_len: int = 1024,
                     sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Binary mask over blocks: 1 where the block's center frame midpoint
    falls inside an event of ``tag``."""
    mask = np.zeros(n_blocks, dtype=bool)
    spans = [(ev.onset, ev.offset) for ev in events if ev.tag == tag]
    if not spans:
        return mask
    for m in range(n_blocks):
        center = block_center_time(m, block_len=block_len, frame_len=frame_len,
                                   sample_rate=sample_rate)
        if any(onset <= center < offset for onset, offset in spans):
            mask[m] = True
    return mask


def localization_score(model, clips: list, annotations: dict, tags: tuple,
                       source: str = "product") -> tuple:
    """Per-tag localization AUC of block saliency against hidden events.

    ``model`` must expose ``score_maps`` (a fitted joint model); ``clips``
    is a list of (clip_id, feature_matrix) pairs. Blocks from all clips
    whose weak label contains tag k are pooled; a block is positive when
    its center frame lies inside an event of that tag. ``source`` picks
    the saliency map: "product" (normalized detector times classifier),
    "detector", or "classifier".

    Returns (aucs, skipped): a dict tag -> AUC, and the tags that never
    occur or have single-class masks.
    """
    if not hasattr(model, "score_maps"):
        raise ValueError("localization requires a joint detection-classification model")
    if source not in ("product", "detector", "classifier"):
        raise ValueError(f"unknown saliency source {source!r}")
    ids = [clip_id for clip_id, _ in clips]
    maps = model.score_maps([feat for _, feat in clips])
    block_len = model.block_len
    per_tag_scores: dict = {t: [] for t in tags}
    per_tag_masks: dict = {t: [] for t in tags}
    for clip_id, sm in zip(ids, maps):
        events = annotations.get(clip_id, [])
        clip_tags = {ev.tag for ev in events}
        if source == "product":
            saliency = sm.product
        elif source == "detector":
            saliency = sm.detector_norm
        else:
            saliency = sm.classifier
        n_blocks = saliency.shape[1]
        for k, tag in enumerate(tags):
            if tag not in clip_tags:
                continue
            per_tag_scores[tag].append(saliency[k])
            per_tag_masks[tag].append(block_event_mask(n_blocks, events, tag,
                                                       block_len=block_len))
    aucs, skipped = {}, []
    for tag in tags:
        if not per_tag_scores[tag]:
            skipped.append(tag)
            continue
        scores = np.concatenate(per_tag_scores[tag])
        mask = np.concatenate(per_tag_masks[tag])
        if mask.all() or not mask.any():
            skipped.append(tag)
            continue
        aucs[tag] = ranked_auc(scores, mask)
    return aucs, skipped
