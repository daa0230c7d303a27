"""Core data model: recordings, 30-second epochs, labels, normalization and splits.

A Recording is a [channels x samples] float array at one common sample rate.
Epochs are consecutive non-overlapping windows of ``epoch_seconds`` with
per-epoch event labels attached by index.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import DataError
from .seeding import derive_rng

# The 16 channels used at full scale: 7 EEG, CO2, SpO2, 2 respiratory effort,
# snore, CPAP flow, 2 EOG, 1 chin EMG.
CANONICAL_CHANNELS = (
    "EEG C3-M2",
    "EEG O1-M2",
    "EEG O2-M1",
    "EEG CZ-O1",
    "EEG C4-M1",
    "EEG F4-M1",
    "EEG F3-M2",
    "CAPNO",
    "SPO2",
    "RESP THORACIC",
    "RESP ABDOMINAL",
    "SNORE",
    "C-FLOW",
    "EOG LOC-M2",
    "EOG ROC-M1",
    "EMG CHIN1-CHIN2",
)

DEFAULT_SAMPLE_RATE = 128.0
DEFAULT_EPOCH_SECONDS = 30.0


class SleepStage(Enum):
    WAKE = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4
    UNLABELED = 5


# Binary detection tasks carried on each epoch label. "apnea_hypopnea" is
# derived (apnea OR hypopnea), never stored.
BINARY_FLAGS = ("oxygen_desaturation", "eeg_arousal", "apnea", "hypopnea")


@dataclass(frozen=True)
class EventLabel:
    """Per-epoch annotation: sleep stage plus binary event flags."""

    sleep_stage: SleepStage = SleepStage.UNLABELED
    oxygen_desaturation: bool = False
    eeg_arousal: bool = False
    apnea: bool = False
    hypopnea: bool = False

    @property
    def apnea_hypopnea(self) -> bool:
        return self.apnea or self.hypopnea

    def to_dict(self) -> dict:
        return {
            "sleep_stage": self.sleep_stage.name,
            "oxygen_desaturation": self.oxygen_desaturation,
            "eeg_arousal": self.eeg_arousal,
            "apnea": self.apnea,
            "hypopnea": self.hypopnea,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventLabel":
        return cls(
            sleep_stage=SleepStage[d.get("sleep_stage", "UNLABELED")],
            oxygen_desaturation=bool(d.get("oxygen_desaturation", False)),
            eeg_arousal=bool(d.get("eeg_arousal", False)),
            apnea=bool(d.get("apnea", False)),
            hypopnea=bool(d.get("hypopnea", False)),
        )


@dataclass(frozen=True)
class ChannelSpec:
    """A named channel at a fixed row index of the sample array."""

    name: str
    index: int


@dataclass
class Recording:
    """One multichannel recording at a single sample rate.

    samples has shape [n_channels, total_samples]; annotations map epoch
    indices to labels.
    """

    recording_id: str
    sample_rate: float
    channel_names: list[str]
    samples: np.ndarray
    annotations: dict[int, EventLabel] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise DataError(f"samples must be 2-D [channels x samples], got shape {self.samples.shape}")
        if self.samples.shape[0] != len(self.channel_names):
            raise DataError(
                f"channel count mismatch: {self.samples.shape[0]} sample rows "
                f"vs {len(self.channel_names)} channel names"
            )
        if len(set(self.channel_names)) != len(self.channel_names):
            raise DataError("channel names must be unique")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> list[ChannelSpec]:
        return [ChannelSpec(name, i) for i, name in enumerate(self.channel_names)]


@dataclass
class SleepEpoch:
    """One fixed-length window of a recording plus its labels."""

    recording_id: str
    epoch_index: int
    data: np.ndarray  # [n_channels, samples_per_epoch]
    label: EventLabel = field(default_factory=EventLabel)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def key(self) -> tuple[str, int]:
        return (self.recording_id, self.epoch_index)


def normalize_recording(rec: Recording) -> Recording:
    """Z-score each channel over the whole recording (population SD).

    Constant channels become all zeros and a UserWarning is emitted; this
    keeps downstream tensors finite. The input recording is not modified.
    """
    if rec.n_samples < 2:
        raise DataError(f"recording '{rec.recording_id}' needs >= 2 samples to normalize, has {rec.n_samples}")
    x = rec.samples.astype(np.float64)
    mean = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)  # population SD (divide by n)
    out = np.zeros_like(x)
    degenerate = sd[:, 0] == 0.0
    ok = ~degenerate
    out[ok] = (x[ok] - mean[ok]) / sd[ok]
    if degenerate.any():
        names = [rec.channel_names[i] for i in np.flatnonzero(degenerate)]
        warnings.warn(
            f"recording '{rec.recording_id}': zero-variance channels set to zeros: {names}",
            stacklevel=2,
        )
    return replace(rec, samples=out.astype(np.float32), annotations=dict(rec.annotations))


def segment_epochs(rec: Recording, epoch_seconds: float = DEFAULT_EPOCH_SECONDS) -> list[SleepEpoch]:
    """Cut a recording into consecutive non-overlapping epochs.

    The trailing partial window is dropped. Labels are attached by epoch
    index; unannotated epochs get the default (unlabeled) EventLabel.
    """
    samples_per_epoch = int(round(rec.sample_rate * epoch_seconds))
    if samples_per_epoch <= 0:
        raise DataError(f"epoch_seconds={epoch_seconds} yields no samples at rate {rec.sample_rate}")
    n_epochs = rec.n_samples // samples_per_epoch
    epochs = []
    for i in range(n_epochs):
        window = rec.samples[:, i * samples_per_epoch : (i + 1) * samples_per_epoch]
        label = rec.annotations.get(i, EventLabel())
        epochs.append(SleepEpoch(rec.recording_id, i, np.array(window), label))
    return epochs


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, exhaustive index lists for train/val/test."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))


def _partition_counts(n: int, ratios: tuple[float, float, float]) -> list[int]:
    # Floor each share, then hand out the remainder by largest fractional part.
    raw = [n * r for r in ratios]
    counts = [int(np.floor(v)) for v in raw]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(remainder):
        counts[order[i % 3]] += 1
    return counts


def split_dataset(
    epochs: list[SleepEpoch],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    by: str = "epoch",
) -> DatasetSplit:
    """Shuffle and partition epochs into train/val/test.

    by="epoch" assigns individual epochs, giving exact proportions within
    rounding. by="recording" keeps whole recordings together (prevents a
    recording from leaking across splits); proportions are then only as fine
    as recording granularity.
    """
    if not epochs:
        raise DataError("cannot split an empty epoch list")
    total = sum(ratios)
    if abs(total - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios} (sum {total})")
    if any(r < 0 for r in ratios):
        raise DataError(f"split ratios must be nonnegative, got {ratios}")
    rng = derive_rng(seed, "split", by)
    n = len(epochs)
    if by == "epoch":
        perm = rng.permutation(n)
        n_train, n_val, _ = _partition_counts(n, ratios)
        train = perm[:n_train]
        val = perm[n_train : n_train + n_val]
        test = perm[n_train + n_val :]
    elif by == "recording":
        rec_ids = sorted({e.recording_id for e in epochs})
        rec_order = list(rng.permutation(len(rec_ids)))
        targets = _partition_counts(n, ratios)
        buckets: list[list[int]] = [[], [], []]
        filled = [0, 0, 0]
        by_rec = {rid: [i for i, e in enumerate(epochs) if e.recording_id == rid] for rid in rec_ids}
        for j in rec_order:
            members = by_rec[rec_ids[j]]
            # Assign the whole recording to the most underfilled bucket
            # relative to its target, so small buckets are not starved.
            relative = [
                (targets[k] - filled[k]) / targets[k] if targets[k] > 0 else -np.inf
                for k in range(3)
            ]
            k = int(np.argmax(relative))
            buckets[k].extend(members)
            filled[k] += len(members)
        train, val, test = (np.array(sorted(b), dtype=int) for b in buckets)
    else:
        raise DataError(f"unknown split mode '{by}' (expected 'epoch' or 'recording')")
    return DatasetSplit(tuple(int(i) for i in train), tuple(int(i) for i in val), tuple(int(i) for i in test), seed)
