"""Command-line entry point.

Subcommands: data (synth/ingest/split), pretrain, embed, probe (train/eval),
analyze (cohorts/correlate), generate (average), retrieve (knn), impute
(eval/one), export-proj. Every run writes its resolved configuration, a log
and its declared outputs into the --out directory; report paths render a PNG
figure next to each CSV/JSON. Exit codes: 0 success, 2 usage error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import container, figures
from .analysis import cohort_silhouette_ci, cohort_ttest, distance_correlation, shuffled_baseline
from .data import (
    SleepEpoch,
    SleepStage,
    normalize_recording,
    segment_epochs,
    split_dataset,
)
from .edf import ingest_edf
from .errors import DataError, NumericError
from .generate import GeneratedEpoch, generate_average, nearest_neighbor, outlier_rank
from .impute import evaluate_imputation, impute_channel
from .metrics import format_p_value
from .model import ModelConfig, embed_epochs, load_model
from .pretrain import TrainConfig, resume as resume_training, train
from .probe import TASKS, LinearProbe, ProbeConfig, evaluate_probe, select_threshold, task_labels, train_probe
from .seeding import resolve_seed
from .synth import SynthConfig, synth_generate

logger = logging.getLogger("pedsleep")

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 2, 3, 4

STAGE_NAMES = ("WAKE", "N1", "N2", "N3", "REM")
LABEL_CHOICES = STAGE_NAMES + ("oxygen_desaturation", "eeg_arousal", "apnea", "hypopnea", "apnea_hypopnea")


# ---------------------------------------------------------------------------
# run-directory plumbing
# ---------------------------------------------------------------------------

def _setup_run(out_dir: str | Path, resolved: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved-config.json", "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True, default=str)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    return out


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.info("wrote %s", path)


def _resolved(args: argparse.Namespace) -> dict:
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# data loading helpers
# ---------------------------------------------------------------------------

def _load_recordings(data_dir: str | Path) -> list:
    paths = sorted(Path(data_dir).glob("*.psgt"))
    if not paths:
        raise DataError(f"no .psgt recordings found in {data_dir}")
    return [container.read_recording(p) for p in paths]


def _load_epochs(data_dir, samples_per_epoch: int | None = None, epoch_seconds: float | None = None,
                 normalize: bool = True) -> tuple[list[SleepEpoch], list[str], float]:
    recordings = _load_recordings(data_dir)
    epochs: list[SleepEpoch] = []
    names = recordings[0].channel_names
    rate = recordings[0].sample_rate
    for rec in recordings:
        if rec.channel_names != names:
            raise DataError(
                f"recording '{rec.recording_id}' channels {rec.channel_names} differ from '{names}'"
            )
        if normalize:
            rec = normalize_recording(rec)
        if samples_per_epoch is not None:
            seconds = samples_per_epoch / rec.sample_rate
        else:
            seconds = epoch_seconds
        epochs.extend(segment_epochs(rec, epoch_seconds=seconds))
    if samples_per_epoch is not None and epochs and epochs[0].n_samples != samples_per_epoch:
        raise DataError(
            f"segmented epochs have {epochs[0].n_samples} samples, model expects {samples_per_epoch}"
        )
    return epochs, names, rate


def _epoch_key_list(epochs: list[SleepEpoch], indices) -> list[list]:
    return [[epochs[i].recording_id, epochs[i].epoch_index] for i in indices]


def _select_split(epochs: list[SleepEpoch], split_file, which: str) -> list[SleepEpoch]:
    if which == "all" or split_file is None:
        return epochs
    with open(split_file) as f:
        split = json.load(f)
    if which not in split:
        raise DataError(f"split file has no '{which}' section")
    wanted = {(rid, idx) for rid, idx in split[which]}
    picked = [e for e in epochs if e.key in wanted]
    if not picked:
        raise DataError(f"split '{which}' matched no loaded epochs")
    return picked


def _label_predicate(label: str):
    if label in STAGE_NAMES:
        return lambda e: e.label.sleep_stage == SleepStage[label]
    if label in ("oxygen_desaturation", "eeg_arousal", "apnea", "hypopnea", "apnea_hypopnea"):
        return lambda e: bool(getattr(e.label, label))
    raise DataError(f"unknown label '{label}' (choose from {LABEL_CHOICES})")


def _write_embeddings(path: Path, embeddings: np.ndarray, epochs: list[SleepEpoch]) -> None:
    np.savez(
        path,
        embeddings=embeddings,
        recording_ids=np.array([e.recording_id for e in epochs]),
        epoch_indices=np.array([e.epoch_index for e in epochs], dtype=np.int64),
        sleep_stage=np.array([e.label.sleep_stage.value for e in epochs], dtype=np.int64),
        oxygen_desaturation=np.array([e.label.oxygen_desaturation for e in epochs], dtype=np.int64),
        eeg_arousal=np.array([e.label.eeg_arousal for e in epochs], dtype=np.int64),
        apnea=np.array([e.label.apnea for e in epochs], dtype=np.int64),
        hypopnea=np.array([e.label.hypopnea for e in epochs], dtype=np.int64),
    )


def _flat_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        flat = json.load(f)
    if not isinstance(flat, dict):
        raise DataError(f"config {path} must be a flat JSON object")
    return flat


_MODEL_KEYS = {
    "channels", "samples_per_epoch", "patch_size", "embed_dim", "mask_ratio",
    "enc_layers", "dec_layers", "num_heads", "mlp_ratio", "stratified_masking",
}
_TRAIN_KEYS = {"lr", "weight_decay", "batch_size", "iterations_per_epoch", "checkpoint_every", "grad_clip"}


def _configs_from_flat(flat: dict, seed: int) -> tuple[ModelConfig, TrainConfig, dict]:
    unknown = set(flat) - _MODEL_KEYS - _TRAIN_KEYS - {"model_seed", "train_seed", "train_epochs", "split_seed", "split_by", "val_ratio", "test_ratio"}
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    model_kwargs = {k: flat[k] for k in _MODEL_KEYS if k in flat}
    model_kwargs["seed"] = int(flat.get("model_seed", seed))
    train_kwargs = {k: flat[k] for k in _TRAIN_KEYS if k in flat}
    train_kwargs["seed"] = int(flat.get("train_seed", seed))
    if "train_epochs" in flat:
        train_kwargs["epochs"] = int(flat["train_epochs"])
    split = {
        "seed": int(flat.get("split_seed", seed)),
        "by": flat.get("split_by", "recording"),
        "val_ratio": float(flat.get("val_ratio", 0.1)),
        "test_ratio": float(flat.get("test_ratio", 0.1)),
    }
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs), split


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_data_synth(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    cfg = SynthConfig(
        channels=args.channels,
        sample_rate=args.sample_rate,
        epoch_seconds=args.epoch_seconds,
        epochs_per_recording=args.epochs_per_recording,
        n_recordings=args.recordings,
        n_states=args.states,
        noise_sd=args.noise_sd,
    )
    seed = resolve_seed(args.seed)
    for rec in synth_generate(cfg, seed):
        container.write_recording(out / f"{rec.recording_id}.psgt", rec)
    logger.info("wrote %d synthetic recordings to %s", cfg.n_recordings, out)
    return 0


def cmd_data_ingest(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    rec = ingest_edf(args.edf, target_rate=args.rate)
    container.write_recording(out / f"{rec.recording_id}.psgt", rec)
    logger.info("ingested %s (%d channels, %d samples)", args.edf, rec.n_channels, rec.n_samples)
    return 0


def cmd_data_split(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    epochs, _, _ = _load_epochs(args.data, epoch_seconds=args.epoch_seconds, normalize=False)
    seed = resolve_seed(args.seed)
    ratios = (1.0 - args.val_ratio - args.test_ratio, args.val_ratio, args.test_ratio)
    split = split_dataset(epochs, ratios=ratios, seed=seed, by=args.by)
    payload = {
        "seed": seed,
        "by": args.by,
        "ratios": list(ratios),
        "train": _epoch_key_list(epochs, split.train),
        "val": _epoch_key_list(epochs, split.val),
        "test": _epoch_key_list(epochs, split.test),
    }
    _write_json(out / "split.json", payload)
    return 0


def cmd_pretrain(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    seed = resolve_seed(args.seed)
    flat = _flat_config(args.config)
    model_cfg, train_cfg, split_cfg = _configs_from_flat(flat, seed)
    with open(out / "resolved-config.json", "w") as f:
        json.dump(
            {"command": "pretrain", "model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
             "split": split_cfg, "deterministic": args.deterministic, "data": str(args.data)},
            f, indent=2, sort_keys=True,
        )
    epochs, _, _ = _load_epochs(args.data, samples_per_epoch=model_cfg.samples_per_epoch)
    ratios = (1.0 - split_cfg["val_ratio"] - split_cfg["test_ratio"], split_cfg["val_ratio"], split_cfg["test_ratio"])
    split = split_dataset(epochs, ratios=ratios, seed=split_cfg["seed"], by=split_cfg["by"])
    _write_json(out / "split.json", {
        "seed": split_cfg["seed"], "by": split_cfg["by"], "ratios": list(ratios),
        "train": _epoch_key_list(epochs, split.train),
        "val": _epoch_key_list(epochs, split.val),
        "test": _epoch_key_list(epochs, split.test),
    })
    train_set = [epochs[i] for i in split.train]
    val_set = [epochs[i] for i in split.val]
    if args.resume:
        model, log = resume_training(args.resume, train_cfg, train_set, val_set, out_dir=out,
                                     deterministic=args.deterministic)
    else:
        model, log = train(train_cfg, model_cfg, train_set, val_set, out_dir=out,
                           deterministic=args.deterministic)
    log.to_csv(out / "trainlog.csv")
    figures.save_train_curves(log, out / "trainlog.png")
    _write_json(out / "summary.json", {
        "param_count": model.param_count(),
        "initial_val_loss": log.initial_val_loss,
        "final_val_loss": log.final_val_loss,
        "best_val_loss": log.best_val_loss,
        "wall_clock_seconds": log.wall_clock_seconds,
        "events": log.events,
    })
    return 0


def cmd_embed(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, _, _ = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    epochs = _select_split(epochs, args.split_file, args.split)
    data = np.stack([e.data for e in epochs])
    embeddings, _ = embed_epochs(model, data)
    _write_embeddings(out / "embeddings.npz", embeddings, epochs)
    logger.info("embedded %d epochs -> %s", len(epochs), out / "embeddings.npz")
    return 0


def cmd_probe_train(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, _, _ = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    cfg = ProbeConfig(task=args.task, lr=args.lr, epochs=args.epochs,
                      iterations_per_epoch=args.iterations_per_epoch,
                      batch_size=args.batch_size, seed=resolve_seed(args.seed))
    train_epochs = _select_split(epochs, args.split_file, "train")
    val_epochs = _select_split(epochs, args.split_file, "val")

    def embedded(subset):
        emb, _ = embed_epochs(model, np.stack([e.data for e in subset]))
        labels = task_labels([e.label for e in subset], args.task)
        keep = labels >= 0
        return emb[keep], labels[keep]

    x_train, y_train = embedded(train_epochs)
    probe = train_probe(x_train, y_train, cfg)
    threshold = None
    if cfg.n_classes == 2:
        x_val, y_val = embedded(val_epochs)
        threshold = select_threshold(probe, x_val, y_val)
        probe.threshold = threshold
    container.write_checkpoint(
        out / "probe.bin",
        {"task": args.task, "embedding_dim": int(probe.weight.shape[0])},
        {"weight": probe.weight, "bias": probe.bias},
        meta={"threshold": threshold, "probe_config": cfg.to_dict()},
    )
    logger.info("probe for %s trained on %d epochs (threshold=%s)", args.task, len(y_train), threshold)
    return 0


def _load_probe(path) -> LinearProbe:
    cfg, tensors, meta = container.read_checkpoint(path)
    return LinearProbe(
        task=cfg["task"],
        weight=tensors["weight"],
        bias=tensors["bias"],
        threshold=meta.get("threshold"),
    )


def cmd_probe_eval(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    probe = _load_probe(args.probe)
    epochs, _, _ = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    subset = _select_split(epochs, args.split_file, args.split)
    emb, _ = embed_epochs(model, np.stack([e.data for e in subset]))
    labels = task_labels([e.label for e in subset], probe.task)
    keep = labels >= 0
    report = evaluate_probe(probe, emb[keep], labels[keep])
    _write_json(out / "report.json", report)
    if "confusion_row_normalized" in report:
        with open(out / "confusion.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([""] + list(STAGE_NAMES))
            for name, row in zip(STAGE_NAMES, report["confusion_row_normalized"]):
                writer.writerow([name] + [f"{v:.6f}" for v in row])
        figures.save_confusion(report["confusion_row_normalized"], STAGE_NAMES, out / "confusion.png")
    return 0


def cmd_analyze_cohorts(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    emb_a = np.load(args.a)["embeddings"]
    emb_b = np.load(args.b)["embeddings"]
    seed = resolve_seed(args.seed)
    true_result = cohort_silhouette_ci(emb_a, emb_b, args.n_per_cohort, args.repeats, seed=seed, ci=args.ci)
    shuffled = shuffled_baseline(emb_a, emb_b, args.n_per_cohort, args.repeats,
                                 n_shuffles=args.shuffles, seed=seed, ci=args.ci)
    tests = cohort_ttest(true_result, shuffled)
    payload = {
        "true": true_result.to_dict(),
        "shuffled": [r.to_dict() for r in shuffled],
        "welch_tests": [
            {"t": t, "dof": dof, "p": p, "p_display": format_p_value(p)} for t, dof, p in tests
        ],
        "true_ci_disjoint_from_all_shuffles": all(not true_result.overlaps(r) for r in shuffled),
    }
    _write_json(out / "cohorts.json", payload)
    with open(out / "repeat_scores.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["analysis", "repeat", "score"])
        for i, s in enumerate(true_result.per_repeat_scores):
            writer.writerow(["cohorts", i, repr(float(s))])
        for k, r in enumerate(shuffled):
            for i, s in enumerate(r.per_repeat_scores):
                writer.writerow([f"shuffle-{k}", i, repr(float(s))])
    figures.save_silhouette_cis(true_result, shuffled, out / "cohorts.png")
    return 0


def cmd_analyze_correlate(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, _, _ = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    epochs = _select_split(epochs, args.split_file, args.split)
    report = distance_correlation(model, epochs, metric=args.metric, n_samples=args.n_samples,
                                  max_pairs=args.max_pairs, seed=resolve_seed(args.seed))
    _write_json(out / "correlation.json", report.to_dict())
    with open(out / "scatter.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair_i", "pair_j", "embedding_distance", "signal_distance"])
        for i, j, ed, sd in report.scatter:
            writer.writerow([i, j, repr(ed), repr(sd)])
    figures.save_correlation_scatter(report.scatter, report.rho, report.metric, out / "scatter.png")
    return 0


def cmd_generate_average(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, names, rate = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    if args.recording:
        epochs = [e for e in epochs if e.recording_id == args.recording]
        if not epochs:
            raise DataError(f"no epochs from recording '{args.recording}'")
    generated = generate_average(model, epochs, _label_predicate(args.label), description=args.label)
    from .data import Recording

    rec = Recording(
        recording_id=f"generated-average-{args.label}",
        sample_rate=args.sample_rate or rate,
        channel_names=names,
        samples=generated.data.astype(np.float32),
    )
    container.write_recording(out / "generated.psgt", rec, extra_header={"provenance": generated.provenance})
    figures.save_signals(generated.data, names, out / "generated.png", title=f"average: {args.label}")
    _write_json(out / "provenance.json", generated.provenance)
    return 0


def cmd_retrieve_knn(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, names, rate = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    reference_rec = container.read_recording(args.reference)
    header = container.read_header(args.reference)
    reference = GeneratedEpoch(reference_rec.samples, header.get("provenance", {}))
    ranked = nearest_neighbor(model, reference, epochs, space=args.space, metric=args.metric, k=args.k)
    payload = {
        "space": args.space,
        "metric": args.metric,
        "k": args.k,
        "neighbors": [{"recording_id": key[0], "epoch_index": key[1], "distance": d} for key, d in ranked],
    }
    _write_json(out / "neighbors.json", payload)
    best = next(e for e in epochs if e.key == ranked[0][0])
    figures.save_signals(
        np.stack([reference.data[0], best.data[0]]),
        ["reference ch0", f"{best.recording_id}[{best.epoch_index}] ch0"],
        out / "neighbors.png",
        title=f"top-1 of {args.k} ({args.space}, {args.metric})",
    )
    return 0


def cmd_retrieve_outliers(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, _, _ = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    ranked = outlier_rank(model, epochs, space=args.space, metric=args.metric)
    top = ranked if args.top <= 0 else ranked[: args.top]
    payload = {
        "space": args.space,
        "metric": args.metric,
        "outliers": [
            {"recording_id": key[0], "epoch_index": key[1], "distance_to_mean": d} for key, d in top
        ],
    }
    _write_json(out / "outliers.json", payload)
    return 0


def cmd_impute_eval(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, names, rate = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    epochs = _select_split(epochs, args.split_file, args.split)
    report = evaluate_imputation(model, epochs, n_samples=args.n, seed=resolve_seed(args.seed),
                                 channel_names=names)
    _write_json(out / "imputation.json", report.to_dict())
    with open(out / "imputation.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["channel", "mean_mse", "sd_mse", "mean_dtw", "sd_dtw"])
        for row in report.rows:
            writer.writerow([row.channel, repr(row.mean_mse), repr(row.sd_mse),
                             repr(row.mean_dtw), repr(row.sd_dtw)])
    figures.save_imputation_report(report, out / "imputation.png")
    return 0


def cmd_impute_one(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, names, rate = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    if args.channel not in names:
        raise DataError(f"channel '{args.channel}' not in {names}")
    channel = names.index(args.channel)
    matches = [e for e in epochs if e.recording_id == args.recording and e.epoch_index == args.epoch]
    if not matches:
        raise DataError(f"epoch {args.epoch} of recording '{args.recording}' not found")
    epoch = matches[0]
    imputed = impute_channel(model, epoch, channel)
    with open(out / "imputed.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample", "original", "imputed"])
        for i, (o, v) in enumerate(zip(epoch.data[channel], imputed)):
            writer.writerow([i, repr(float(o)), repr(float(v))])
    figures.save_imputation_pair(epoch.data[channel], imputed, args.channel, out / "imputed.png")
    return 0


def cmd_export_proj(args) -> int:
    out = _setup_run(args.out, _resolved(args))
    model, _, _ = load_model(args.ckpt)
    if args.deterministic:
        torch.set_num_threads(1)
    epochs, _, _ = _load_epochs(args.data, samples_per_epoch=model.cfg.samples_per_epoch)
    epochs = _select_split(epochs, args.split_file, args.split)
    data = np.stack([e.data for e in epochs])
    embeddings, _ = embed_epochs(model, data)
    path = out / "embeddings_projection.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        dim = embeddings.shape[1]
        writer.writerow(
            [f"emb_{i}" for i in range(dim)]
            + ["recording_id", "epoch_index", "sleep_stage", "oxygen_desaturation",
               "eeg_arousal", "apnea", "hypopnea", "apnea_hypopnea"]
        )
        for e, row in zip(epochs, embeddings):
            writer.writerow(
                [repr(float(v)) for v in row]
                + [e.recording_id, e.epoch_index, e.label.sleep_stage.name,
                   int(e.label.oxygen_desaturation), int(e.label.eeg_arousal),
                   int(e.label.apnea), int(e.label.hypopnea), int(e.label.apnea_hypopnea)]
            )
    logger.info("wrote %d x %d embedding matrix to %s", embeddings.shape[0], embeddings.shape[1], path)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, ckpt: bool = True, split: bool = True) -> None:
    p.add_argument("--out", required=True, help="run directory for outputs")
    p.add_argument("--seed", type=int, default=None, help="seed (falls back to $PEDSLEEP_SEED, then 0)")
    p.add_argument("--deterministic", action="store_true", help="single-threaded bit-reproducible mode")
    if ckpt:
        p.add_argument("--ckpt", required=True, help="model checkpoint (.psgc)")
    if split:
        p.add_argument("--split-file", default=None, help="split.json restricting the epoch set")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pedsleep", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("data", help="synthesize, ingest and split recordings")
    data_sub = p_data.add_subparsers(dest="data_command", required=True)

    p_synth = data_sub.add_parser("synth", help="generate deterministic synthetic recordings")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--channels", type=int, default=4)
    p_synth.add_argument("--sample-rate", type=float, default=8.0)
    p_synth.add_argument("--epoch-seconds", type=float, default=32.0)
    p_synth.add_argument("--epochs-per-recording", type=int, default=60)
    p_synth.add_argument("--recordings", type=int, default=4)
    p_synth.add_argument("--states", type=int, default=3)
    p_synth.add_argument("--noise-sd", type=float, default=0.1)
    p_synth.set_defaults(func=cmd_data_synth)

    p_ingest = data_sub.add_parser("ingest", help="convert an EDF file to the PSGT container")
    p_ingest.add_argument("--edf", required=True)
    p_ingest.add_argument("--out", required=True)
    p_ingest.add_argument("--rate", type=float, default=128.0, help="common target sample rate")
    p_ingest.set_defaults(func=cmd_data_ingest)

    p_split = data_sub.add_parser("split", help="write a train/val/test split file")
    p_split.add_argument("--data", required=True)
    p_split.add_argument("--out", required=True)
    p_split.add_argument("--seed", type=int, default=None)
    p_split.add_argument("--epoch-seconds", type=float, default=30.0)
    p_split.add_argument("--val-ratio", type=float, default=0.1)
    p_split.add_argument("--test-ratio", type=float, default=0.1)
    p_split.add_argument("--by", choices=("epoch", "recording"), default="recording")
    p_split.set_defaults(func=cmd_data_split)

    p_pre = sub.add_parser("pretrain", help="self-supervised masked reconstruction training")
    p_pre.add_argument("--config", default=None, help="flat JSON config (model_*/train_* keys)")
    p_pre.add_argument("--data", required=True)
    p_pre.add_argument("--out", required=True)
    p_pre.add_argument("--seed", type=int, default=None)
    p_pre.add_argument("--resume", default=None, help="checkpoint to continue from")
    p_pre.add_argument("--deterministic", action="store_true")
    p_pre.set_defaults(func=cmd_pretrain)

    p_embed = sub.add_parser("embed", help="export pooled embeddings for a dataset")
    _add_common(p_embed)
    p_embed.add_argument("--data", required=True)
    p_embed.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p_embed.set_defaults(func=cmd_embed)

    p_probe = sub.add_parser("probe", help="train/evaluate linear probes on frozen embeddings")
    probe_sub = p_probe.add_subparsers(dest="probe_command", required=True)
    p_pt = probe_sub.add_parser("train")
    _add_common(p_pt)
    p_pt.add_argument("--data", required=True)
    p_pt.add_argument("--task", choices=sorted(TASKS), required=True)
    p_pt.add_argument("--lr", type=float, default=1e-3)
    p_pt.add_argument("--epochs", type=int, default=50)
    p_pt.add_argument("--iterations-per-epoch", type=int, default=2000)
    p_pt.add_argument("--batch-size", type=int, default=256)
    p_pt.set_defaults(func=cmd_probe_train)
    p_pe = probe_sub.add_parser("eval")
    _add_common(p_pe)
    p_pe.add_argument("--data", required=True)
    p_pe.add_argument("--probe", required=True, help="probe.bin from 'probe train'")
    p_pe.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p_pe.set_defaults(func=cmd_probe_eval)

    p_an = sub.add_parser("analyze", help="cohort silhouette CIs and distance correlation")
    an_sub = p_an.add_subparsers(dest="analyze_command", required=True)
    p_co = an_sub.add_parser("cohorts")
    p_co.add_argument("--a", required=True, help="cohort A embeddings (.npz)")
    p_co.add_argument("--b", required=True, help="cohort B embeddings (.npz)")
    p_co.add_argument("--out", required=True)
    p_co.add_argument("--seed", type=int, default=None)
    p_co.add_argument("--n-per-cohort", type=int, default=2500)
    p_co.add_argument("--repeats", type=int, default=100)
    p_co.add_argument("--shuffles", type=int, default=20)
    p_co.add_argument("--ci", choices=("normal", "bootstrap"), default="normal")
    p_co.set_defaults(func=cmd_analyze_cohorts)
    p_cr = an_sub.add_parser("correlate")
    _add_common(p_cr)
    p_cr.add_argument("--data", required=True)
    p_cr.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p_cr.add_argument("--metric", choices=("euclidean", "dtw"), default="euclidean")
    p_cr.add_argument("--n-samples", type=int, default=100)
    p_cr.add_argument("--max-pairs", type=int, default=2000)
    p_cr.set_defaults(func=cmd_analyze_correlate)

    p_gen = sub.add_parser("generate", help="decode averaged latents into representative signals")
    gen_sub = p_gen.add_subparsers(dest="generate_command", required=True)
    p_avg = gen_sub.add_parser("average")
    _add_common(p_avg, split=False)
    p_avg.add_argument("--data", required=True)
    p_avg.add_argument("--label", choices=LABEL_CHOICES, required=True)
    p_avg.add_argument("--recording", default=None, help="restrict to one recording id")
    p_avg.add_argument("--sample-rate", type=float, default=None)
    p_avg.set_defaults(func=cmd_generate_average)

    p_ret = sub.add_parser("retrieve", help="nearest-neighbor retrieval against a generated reference")
    ret_sub = p_ret.add_subparsers(dest="retrieve_command", required=True)
    p_knn = ret_sub.add_parser("knn")
    _add_common(p_knn, split=False)
    p_knn.add_argument("--data", required=True)
    p_knn.add_argument("--reference", required=True, help="reference .psgt (e.g. from 'generate average')")
    p_knn.add_argument("--space", choices=("generated_signal", "embedding"), default="generated_signal")
    p_knn.add_argument("--metric", choices=("euclidean", "dtw"), default="euclidean")
    p_knn.add_argument("-k", type=int, default=5)
    p_knn.set_defaults(func=cmd_retrieve_knn)
    p_out = ret_sub.add_parser("outliers", help="epochs ranked by distance from the cohort mean")
    _add_common(p_out, split=False)
    p_out.add_argument("--data", required=True)
    p_out.add_argument("--space", choices=("generated_signal", "embedding"), default="embedding")
    p_out.add_argument("--metric", choices=("euclidean", "dtw"), default="euclidean")
    p_out.add_argument("--top", type=int, default=20, help="rows to report; <=0 for all")
    p_out.set_defaults(func=cmd_retrieve_outliers)

    p_imp = sub.add_parser("impute", help="whole-channel imputation")
    imp_sub = p_imp.add_subparsers(dest="impute_command", required=True)
    p_ie = imp_sub.add_parser("eval")
    _add_common(p_ie)
    p_ie.add_argument("--data", required=True)
    p_ie.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p_ie.add_argument("--n", type=int, required=True, help="epochs sampled per channel row")
    p_ie.set_defaults(func=cmd_impute_eval)
    p_io = imp_sub.add_parser("one")
    _add_common(p_io, split=False)
    p_io.add_argument("--data", required=True)
    p_io.add_argument("--recording", required=True)
    p_io.add_argument("--epoch", type=int, required=True)
    p_io.add_argument("--channel", required=True)
    p_io.set_defaults(func=cmd_impute_one)

    p_exp = sub.add_parser("export-proj", help="embedding matrix CSV with per-row labels for external 2-D projection")
    _add_common(p_exp)
    p_exp.add_argument("--data", required=True)
    p_exp.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p_exp.set_defaults(func=cmd_export_proj)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        logger.error("data error: %s", exc)
        return DATA_ERROR
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return NUMERIC_ERROR
    except FileNotFoundError as exc:
        logger.error("missing file: %s", exc)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
