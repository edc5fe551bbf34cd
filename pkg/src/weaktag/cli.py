"""Command-line pipeline: synth, featurize, train, cv, eval, localize, visualize.

Every command writes a manifest.json into its output directory before any
long computation, recording the resolved configuration, the seed, and a
content hash of each input file. Exit codes: 0 success, 2 usage error,
3 data error, 4 numeric failure.

Dataset directory convention: index.csv (clip_id,label_string,fold,split
lines), audio/<clip_id>.wav, optional tags.txt naming the vocabulary and
features/<clip_id>.feat as the default cache. The cache root can also be
set via $WEAKTAG_CACHE or --cache.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import __version__
from .datasets import (
    DEFAULT_TAGS,
    SYNTH_TAGS,
    SynthConfig,
    localization_score,
    parse_weak_labels,
    read_annotations,
    read_vocabulary,
    synth_generate,
    write_corpus,
)
from .errors import NonFiniteError, WeaktagError
from .estimators import BagOfBlocksTagger, JointDetectionClassifier, load_tagger
from .evaluation import evaluate_scores, write_eer_report
from .features import (
    block_time_bounds,
    extract_features,
    load_wav,
    make_blocks,
    read_feature_cache,
    write_feature_cache,
)
from .models import ModelSpec
from .training import TrainConfig, cross_validate, write_history_csv

EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4

CACHE_ENV = "WEAKTAG_CACHE"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, inputs: list) -> None:
    manifest = {
        "tool": "weaktag",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NonFiniteError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC_ERROR)
        except (WeaktagError, FileNotFoundError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_DATA_ERROR)

    return wrapper


def _vocabulary(data_dir: Path, vocab_flag: str) -> tuple:
    """The full tag alphabet of an index: tags.txt when present, else the
    8-letter home-audio vocabulary."""
    if vocab_flag == "chime":
        return DEFAULT_TAGS
    tags_file = data_dir / "tags.txt"
    if tags_file.exists():
        return read_vocabulary(tags_file)
    return DEFAULT_TAGS


def _resolve_tags(exclude: str | None, base: tuple) -> tuple:
    if not exclude:
        return tuple(base)
    dropped = {t.strip() for t in exclude.split(",") if t.strip()}
    unknown = dropped - set(base)
    if unknown:
        raise click.UsageError(f"cannot exclude unknown tags: {sorted(unknown)}")
    kept = tuple(t for t in base if t not in dropped)
    if not kept:
        raise click.UsageError("cannot exclude every tag")
    return kept


def _load_entries(data_dir: Path, tags: tuple, split: str, folds: tuple | None,
                  all_tags: tuple) -> list:
    """Index entries filtered to the requested split/folds, labels projected
    onto the kept tag columns."""
    entries = parse_weak_labels(data_dir / "index.csv", tags=all_tags)
    keep_cols = [all_tags.index(t) for t in tags]
    out = []
    for e in entries:
        if split != "all" and e.split != split:
            continue
        if folds is not None and e.fold not in folds:
            continue
        e.label = e.label[keep_cols]
        out.append(e)
    return out


def _resolve_cache(cache, data_dir: Path | None) -> Path | None:
    if cache:
        return Path(cache)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    if data_dir is not None and (data_dir / "features").is_dir():
        return data_dir / "features"
    return None


def _features_for(entry_id: str, data_dir: Path, cache_dir: Path | None) -> np.ndarray:
    if cache_dir is not None:
        cached = cache_dir / f"{entry_id}.feat"
        if cached.exists():
            return read_feature_cache(cached)
    return extract_features(load_wav(data_dir / "audio" / f"{entry_id}.wav"))


def _parse_folds(text: str | None) -> tuple | None:
    if text is None:
        return None
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise click.UsageError(f"--folds expects comma-separated integers, got {text!r}")


@click.group()
@click.version_option(version=__version__, prog_name="weaktag")
def main():
    """Weakly supervised audio tagging pipeline."""


@main.command()
@click.option("--clips", type=int, required=True, help="Number of clips to generate.")
@click.option("--tags", "n_tags", type=int, default=3, show_default=True,
              help="Number of synthetic tags (each gets a disjoint frequency band).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--clip-seconds", type=float, default=4.0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_handle_errors
def synth(clips, n_tags, seed, clip_seconds, out_dir):
    """Generate a synthetic weakly labelled corpus with hidden event truth."""
    cfg = SynthConfig(n_clips=clips, n_tags=n_tags, clip_seconds=clip_seconds, seed=seed)
    write_manifest(out_dir, "synth", asdict(cfg), inputs=[])
    generated, entries, annotations = synth_generate(cfg)
    write_corpus(out_dir, generated, entries, annotations, SYNTH_TAGS[:n_tags])
    click.echo(f"wrote {len(generated)} clips to {out_dir}")


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True, help="Directory containing index.csv and audio/.")
@click.option("--cache", type=click.Path(path_type=Path), default=None,
              help=f"Feature cache directory (default: ${CACHE_ENV} or DATA/features).")
@click.option("--vocab", type=click.Choice(["auto", "chime"]), default="auto", show_default=True)
@_handle_errors
def featurize(data_dir, cache, vocab):
    """Extract and cache log-mel features for every clip in the index."""
    all_tags = _vocabulary(data_dir, vocab)
    entries = parse_weak_labels(data_dir / "index.csv", tags=all_tags)
    cache_dir = _resolve_cache(cache, None) or data_dir / "features"
    cache_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(cache_dir, "featurize", {"data": str(data_dir), "vocab": vocab},
                   inputs=[data_dir / "index.csv"])
    for e in entries:
        feats = extract_features(load_wav(data_dir / "audio" / f"{e.clip_id}.wav"))
        write_feature_cache(cache_dir / f"{e.clip_id}.feat", feats)
    click.echo(f"cached {len(entries)} feature matrices in {cache_dir}")


_common_train_options = [
    click.option("--model", type=click.Choice(["bob", "jdc"]), required=True),
    click.option("--epochs", type=int, default=None, help="Default: 65 for bob, 110 for jdc."),
    click.option("--lr", type=float, default=2e-4, show_default=True),
    click.option("--batch", type=int, default=32, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--hidden", type=int, default=500, show_default=True),
    click.option("--vocab", type=click.Choice(["auto", "chime"]), default="auto", show_default=True),
    click.option("--exclude-tags", default=None, help="Comma-separated tags to drop (e.g. S)."),
    click.option("--cache", type=click.Path(path_type=Path), default=None),
    click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
                 help="Worker cap; the current pipeline runs single-threaded."),
]


def _with_options(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return deco


def _estimator(model, epochs, lr, batch, seed, hidden, tags):
    cls = BagOfBlocksTagger if model == "bob" else JointDetectionClassifier
    kwargs = dict(learning_rate=lr, batch_size=batch, seed=seed,
                  hidden_units=hidden, tags=list(tags))
    if epochs is not None:
        kwargs["epochs"] = epochs
    return cls(**kwargs)


@main.command(name="train")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True)
@_with_options(_common_train_options)
@click.option("--split", type=click.Choice(["development", "evaluation", "all"]),
              default="development", show_default=True)
@click.option("--folds", default=None, help="Comma-separated fold ids to train on (default: all).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_handle_errors
def train_cmd(data_dir, model, epochs, lr, batch, seed, hidden, vocab, exclude_tags,
              cache, threads, split, folds, out_dir):
    """Train one model and write checkpoint.wtck plus history.csv."""
    all_tags = _vocabulary(data_dir, vocab)
    tags = _resolve_tags(exclude_tags, all_tags)
    fold_ids = _parse_folds(folds)
    write_manifest(out_dir, "train", {
        "model": model, "epochs": epochs, "lr": lr, "batch": batch, "seed": seed,
        "hidden": hidden, "vocab": vocab, "exclude_tags": exclude_tags,
        "split": split, "folds": folds, "threads": threads,
    }, inputs=[data_dir / "index.csv"])
    entries = _load_entries(data_dir, tags, split, fold_ids, all_tags)
    if not entries:
        raise WeaktagError("no clips matched the requested split/folds")
    cache_dir = _resolve_cache(cache, data_dir)
    X = [_features_for(e.clip_id, data_dir, cache_dir) for e in entries]
    y = np.stack([e.label for e in entries])
    est = _estimator(model, epochs, lr, batch, seed, hidden, tags)
    est.fit(X, y)
    est.save(out_dir / "checkpoint.wtck")
    write_history_csv(out_dir / "history.csv", est.history_)
    if len(est.history_):
        click.echo(f"trained {model} for {len(est.history_)} epochs, "
                   f"final loss {est.history_[-1].train_loss:.4f}")
    else:
        click.echo(f"saved untrained (initialized) {model} checkpoint")
    click.echo(f"checkpoint: {out_dir / 'checkpoint.wtck'}")


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True)
@_with_options(_common_train_options)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_handle_errors
def cv(data_dir, model, epochs, lr, batch, seed, hidden, vocab, exclude_tags,
       cache, threads, out_dir):
    """5-fold cross-validation; emits per-fold histories and a summary."""
    all_tags = _vocabulary(data_dir, vocab)
    tags = _resolve_tags(exclude_tags, all_tags)
    if epochs is None:
        epochs = 65 if model == "bob" else 110
    write_manifest(out_dir, "cv", {
        "model": model, "epochs": epochs, "lr": lr, "batch": batch, "seed": seed,
        "hidden": hidden, "vocab": vocab, "exclude_tags": exclude_tags, "threads": threads,
    }, inputs=[data_dir / "index.csv"])
    entries = _load_entries(data_dir, tags, "development", None, all_tags)
    if not entries:
        raise WeaktagError("no development clips in the index")
    cache_dir = _resolve_cache(cache, data_dir)
    feats = {e.clip_id: _features_for(e.clip_id, data_dir, cache_dir) for e in entries}
    stacked = np.concatenate(list(feats.values()), axis=0).astype(np.float64)
    mean, std = stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-6)
    cv_entries = [
        (e.clip_id,
         make_blocks((feats[e.clip_id] - mean) / std).astype(np.float32),
         e.label.astype(np.float32),
         e.fold)
        for e in entries
    ]
    spec = ModelSpec(kind=model, n_mels=stacked.shape[1], hidden_units=hidden,
                     n_tags=len(tags))
    cfg = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch,
                      seed=seed, model=model)
    result = cross_validate(cv_entries, spec, cfg)
    for fold, history in zip(result.fold_ids, result.histories):
        write_history_csv(out_dir / f"history_fold{fold}.csv", history)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch"] + [f"fold_{f}" for f in result.fold_ids] + ["mean"])
        for e in range(epochs):
            row = [e]
            for h in result.histories:
                v = h[e].val_eer
                row.append("" if v is None else f"{v:.6f}")
            row.append(f"{result.mean_eer_by_epoch[e]:.6f}")
            writer.writerow(row)
    click.echo(f"best epoch {result.best_epoch}: mean EER {result.mean_eer_at_best:.4f}")


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True)
@click.option("--split", type=click.Choice(["development", "evaluation", "all"]),
              default="development", show_default=True)
@click.option("--folds", default=None, help="Comma-separated fold ids to evaluate on.")
@click.option("--vocab", type=click.Choice(["auto", "chime"]), default="auto", show_default=True)
@click.option("--eer-pooling", type=click.Choice(["per-tag", "pooled"]), default="per-tag",
              show_default=True)
@click.option("--allow-skipped", is_flag=True, default=False,
              help="Exit 0 even when some tags had undefined EER.")
@click.option("--cache", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True,
              help="Report CSV path.")
@_handle_errors
def eval_cmd(checkpoint, data_dir, split, folds, vocab, eer_pooling, allow_skipped,
             cache, out_path):
    """Evaluate a checkpoint; prints and writes per-tag and mean EER."""
    est = load_tagger(checkpoint)
    all_tags = _vocabulary(data_dir, vocab)
    tags = est.tags_
    missing = [t for t in tags if t not in all_tags]
    if missing:
        raise WeaktagError(f"checkpoint tags {missing} are not in the index vocabulary")
    fold_ids = _parse_folds(folds)
    out_path = Path(out_path)
    write_manifest(out_path.parent if str(out_path.parent) != "" else Path("."), "eval", {
        "checkpoint": str(checkpoint), "split": split, "folds": folds,
        "eer_pooling": eer_pooling, "vocab": vocab,
    }, inputs=[checkpoint, data_dir / "index.csv"])
    entries = _load_entries(data_dir, tags, split, fold_ids, all_tags)
    if not entries:
        raise WeaktagError("no clips matched the requested split/folds")
    cache_dir = _resolve_cache(cache, data_dir)
    X = [_features_for(e.clip_id, data_dir, cache_dir) for e in entries]
    y = np.stack([e.label for e in entries])
    scores = est.predict_proba(X)
    report = evaluate_scores(scores, y, list(tags), pooling=eer_pooling)
    write_eer_report(out_path, report)
    for r in report.per_tag:
        shown = "skipped" if r.eer is None else f"{r.eer:.4f}"
        click.echo(f"{r.tag}: eer={shown} (pos={r.n_pos}, neg={r.n_neg})")
    click.echo(f"mean ({eer_pooling}): {report.mean_eer:.4f}"
               if report.mean_eer is not None else "mean: undefined")
    if report.skipped and not allow_skipped:
        click.echo(f"skipped tags: {', '.join(report.skipped)}", err=True)
        sys.exit(EXIT_DATA_ERROR)


def _write_matrix_csv(path, matrix, row_labels=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, row in enumerate(np.asarray(matrix)):
            label = [] if row_labels is None else [row_labels[i]]
            writer.writerow(label + [f"{v:.6g}" for v in row])


@main.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--wav", type=click.Path(path_type=Path), required=True, help="One clip to map.")
@click.option("--maps", type=click.Choice(["all", "classifier"]), default="all",
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_handle_errors
def visualize(checkpoint, wav, maps, out_dir):
    """Dump per-block score maps for one clip as CSV matrices.

    Writes logmel.csv (frames x bins), classifier.csv, and for joint
    models detector.csv plus product.csv (tags x blocks), along with
    blocks.csv mapping each block to seconds.
    """
    est = load_tagger(checkpoint)
    is_jdc = isinstance(est, JointDetectionClassifier)
    if maps == "all" and not is_jdc:
        raise WeaktagError(
            "this checkpoint has no detector, so detector and product maps are "
            "undefined; rerun with --maps classifier"
        )
    write_manifest(out_dir, "visualize", {
        "checkpoint": str(checkpoint), "wav": str(wav), "maps": maps,
    }, inputs=[checkpoint, wav])
    feats = extract_features(load_wav(wav))
    _write_matrix_csv(out_dir / "logmel.csv", feats)
    tags = list(est.tags_)
    if is_jdc:
        sm = est.score_maps([feats])[0]
        _write_matrix_csv(out_dir / "classifier.csv", sm.classifier, tags)
        if maps == "all":
            _write_matrix_csv(out_dir / "detector.csv", sm.detector_norm, tags)
            _write_matrix_csv(out_dir / "product.csv", sm.product, tags)
        n_blocks = sm.classifier.shape[1]
    else:
        cm = est.classifier_maps([feats])[0]
        _write_matrix_csv(out_dir / "classifier.csv", cm, tags)
        n_blocks = cm.shape[1]
    with open(out_dir / "blocks.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "start_seconds", "end_seconds"])
        for m in range(n_blocks):
            t0, t1 = block_time_bounds(m, block_len=est.block_len)
            writer.writerow([m, f"{t0:.6f}", f"{t1:.6f}"])
    click.echo(f"wrote maps for {n_blocks} blocks to {out_dir}")


@main.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True, help="Corpus with annotations.csv (synthetic).")
@click.option("--folds", default=None)
@click.option("--source", type=click.Choice(["product", "detector", "classifier"]),
              default="product", show_default=True)
@click.option("--cache", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@_handle_errors
def localize(checkpoint, data_dir, folds, source, cache, out_path):
    """Score block saliency against hidden event annotations (AUC per tag)."""
    est = load_tagger(checkpoint)
    if not isinstance(est, JointDetectionClassifier):
        raise WeaktagError("localization requires a jdc checkpoint")
    tags = est.tags_
    all_tags = _vocabulary(data_dir, "auto")
    fold_ids = _parse_folds(folds)
    out_path = Path(out_path)
    write_manifest(out_path.parent, "localize", {
        "checkpoint": str(checkpoint), "folds": folds, "source": source,
    }, inputs=[checkpoint, data_dir / "index.csv", data_dir / "annotations.csv"])
    entries = _load_entries(data_dir, tags, "all", fold_ids, all_tags)
    annotations = read_annotations(data_dir / "annotations.csv")
    cache_dir = _resolve_cache(cache, data_dir)
    clips = [(e.clip_id, _features_for(e.clip_id, data_dir, cache_dir)) for e in entries]
    aucs, skipped = localization_score(est, clips, annotations, tags, source=source)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tag", "auc"])
        for tag in tags:
            writer.writerow([tag, f"{aucs[tag]:.6f}" if tag in aucs else "skipped"])
    for tag in tags:
        click.echo(f"{tag}: auc={aucs[tag]:.4f}" if tag in aucs else f"{tag}: skipped")
    if skipped:
        click.echo(f"skipped tags: {', '.join(skipped)}", err=True)


if __name__ == "__main__":
    main()
