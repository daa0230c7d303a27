"""Linear probing of frozen embeddings.

A probe is exactly one affine layer trained with class-weighted cross
entropy; it sees embedding vectors only, never the encoder, so probing can
not perturb encoder parameters. Binary probes pick their decision threshold
on the validation split by exhaustive F1 scan.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .data import EventLabel, SleepStage
from .errors import DataError, NumericError
from .metrics import auroc, confusion, f1
from .seeding import derive_rng

# task name -> number of classes
TASKS = {
    "sleep_stage_5": 5,
    "oxygen_desaturation": 2,
    "eeg_arousal": 2,
    "apnea": 2,
    "hypopnea": 2,
    "apnea_hypopnea": 2,
}


def task_labels(labels: list[EventLabel], task: str) -> np.ndarray:
    """Integer labels for a task; sleep stages map WAKE..REM to 0..4 and
    UNLABELED to -1 (callers filter negatives out)."""
    if task not in TASKS:
        raise DataError(f"unknown task '{task}' (choose from {sorted(TASKS)})")
    if task == "sleep_stage_5":
        return np.array([-1 if l.sleep_stage == SleepStage.UNLABELED else l.sleep_stage.value for l in labels])
    if task == "apnea_hypopnea":
        return np.array([int(l.apnea_hypopnea) for l in labels])
    return np.array([int(getattr(l, task)) for l in labels])


@dataclass(frozen=True)
class ProbeConfig:
    task: str = "sleep_stage_5"
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 50
    iterations_per_epoch: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise DataError(f"unknown task '{self.task}' (choose from {sorted(TASKS)})")

    @property
    def n_classes(self) -> int:
        return TASKS[self.task]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LinearProbe:
    """One affine layer [embedding_dim -> K] plus a score threshold for
    binary tasks (positive iff positive-class score >= threshold)."""

    task: str
    weight: np.ndarray
    bias: np.ndarray
    threshold: float | None = None

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def logits(self, embeddings: np.ndarray) -> np.ndarray:
        return np.asarray(embeddings, dtype=np.float64) @ self.weight + self.bias

    def scores(self, embeddings: np.ndarray) -> np.ndarray:
        """Softmax class probabilities [n, K]."""
        z = self.logits(embeddings)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        s = self.scores(embeddings)
        if self.n_classes == 2 and self.threshold is not None:
            return (s[:, 1] >= self.threshold).astype(int)
        return s.argmax(axis=1)


def class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Inverse class frequency, normalized to mean 1."""
    counts = np.array([np.sum(labels == c) for c in range(n_classes)], dtype=float)
    missing = [c for c in range(n_classes) if counts[c] == 0]
    if missing:
        raise DataError(f"classes absent from training labels: {missing}")
    inv = 1.0 / counts
    return inv / inv.mean()


def train_probe(
    embeddings_train: np.ndarray,
    labels_train: np.ndarray,
    cfg: ProbeConfig,
    weighted: bool = True,
) -> LinearProbe:
    """Fit the affine layer with AdamW on (optionally class-weighted) cross
    entropy; minibatches are drawn with replacement each iteration."""
    x = np.asarray(embeddings_train, dtype=np.float32)
    y = np.asarray(labels_train, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError(f"embeddings {x.shape} and labels {y.shape} are misaligned")
    k = cfg.n_classes
    weights = class_weights(y, k) if weighted else np.ones(k)

    rng = derive_rng(cfg.seed, "probe-init", cfg.task)
    layer = nn.Linear(x.shape[1], k)
    with torch.no_grad():
        layer.weight.copy_(torch.from_numpy(rng.normal(0.0, 0.01, size=(k, x.shape[1]))).float())
        layer.bias.zero_()
    opt = torch.optim.AdamW(layer.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    loss_fn = nn.CrossEntropyLoss(weight=torch.from_numpy(weights).float())

    xt = torch.from_numpy(x)
    yt = torch.from_numpy(y)
    n = x.shape[0]
    layer.train()
    for step in range(cfg.epochs * cfg.iterations_per_epoch):
        idx = derive_rng(cfg.seed, "probe-batch", cfg.task, step).integers(0, n, size=cfg.batch_size)
        batch_idx = torch.from_numpy(idx)
        loss = loss_fn(layer(xt[batch_idx]), yt[batch_idx])
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite probe loss at iteration {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    return LinearProbe(
        task=cfg.task,
        weight=layer.weight.detach().numpy().T.astype(np.float64),
        bias=layer.bias.detach().numpy().astype(np.float64),
    )


def select_threshold(probe: LinearProbe, embeddings_val: np.ndarray, labels_val: np.ndarray) -> float:
    """Exhaustive F1 scan over validation scores for binary probes.

    F1 is piecewise constant between consecutive score values, so scanning
    cuts at each unique score (rule: positive iff score >= cut) is exact.
    F1 ties break toward the higher cut; the returned threshold is the
    midpoint between the winning cut and the score below it, which splits
    the margin, or the lowest score itself when everything is positive.
    """
    if probe.n_classes != 2:
        raise DataError("threshold selection applies to binary tasks only")
    y = np.asarray(labels_val, dtype=int)
    if not np.any(y == 1):
        raise DataError("validation labels contain no positive examples")
    s = probe.scores(embeddings_val)[:, 1]
    uniq = np.unique(s)
    best_j, best_f1 = 0, -1.0
    for j, cut in enumerate(uniq):
        score = f1(y, (s >= cut).astype(int), mode="binary")
        if score >= best_f1:  # >= so ties move toward the higher cut
            best_j, best_f1 = j, score
    if best_j == 0:
        return float(uniq[0])
    return float(0.5 * (uniq[best_j - 1] + uniq[best_j]))


def evaluate_probe(probe: LinearProbe, embeddings_test: np.ndarray, labels_test: np.ndarray) -> dict:
    """Test-set report. Binary tasks: accuracy, F1 at the selected threshold,
    AUROC and positive prevalence. The 5-class task: accuracy, weighted F1,
    weighted one-vs-rest AUROC and a row-normalized confusion matrix."""
    y = np.asarray(labels_test, dtype=int)
    scores = probe.scores(embeddings_test)
    preds = probe.predict(embeddings_test)
    report: dict = {
        "task": probe.task,
        "n": int(len(y)),
        "accuracy": float(np.mean(preds == y)),
        "degenerate": False,
    }
    if probe.n_classes == 2:
        report["prevalence"] = float(np.mean(y == 1))
        report["threshold"] = probe.threshold
        report["f1"] = f1(y, preds, mode="binary")
        pos_scores = scores[:, 1]
        if len(np.unique(y)) < 2 or len(np.unique(pos_scores)) < 2:
            report["auroc"] = "undefined"
            report["degenerate"] = True
        else:
            report["auroc"] = auroc(y, pos_scores, mode="binary")
    else:
        report["f1"] = f1(y, preds, mode="weighted")
        try:
            report["auroc"] = auroc(y, scores, mode="weighted_ovr")
        except NumericError:
            report["auroc"] = "undefined"
            report["degenerate"] = True
        cm = confusion(y, preds, probe.n_classes)
        report["confusion_counts"] = cm.counts.tolist()
        report["confusion_row_normalized"] = cm.row_normalized.tolist()
        report["confusion_zero_rows"] = list(cm.zero_rows)
    return report
