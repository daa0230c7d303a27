"""Whole-channel imputation: mask every token of one channel and reconstruct
it from the remaining channels.

The masked channel's samples are physically excluded from the forward pass
(visible tokens are gathered before the encoder), so imputation cannot read
the channel it predicts: zeroing that channel in the input leaves the output
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import SleepEpoch
from .errors import DataError
from .metrics import dtw, mse
from .model import MaskedAutoencoder, channel_mask
from .seeding import derive_rng


@dataclass(frozen=True)
class ChannelImputationStats:
    channel: str
    mean_mse: float
    sd_mse: float
    mean_dtw: float
    sd_dtw: float


@dataclass(frozen=True)
class ImputationReport:
    """One row per channel: mean/SD of MSE and of (raw, length-T) DTW over
    the same n_samples drawn epochs."""

    rows: list[ChannelImputationStats]
    n_samples: int
    samples_per_epoch: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "samples_per_epoch": self.samples_per_epoch,
            "seed": self.seed,
            "channels": [
                {
                    "channel": r.channel,
                    "mean_mse": r.mean_mse,
                    "sd_mse": r.sd_mse,
                    "mean_dtw": r.mean_dtw,
                    "sd_dtw": r.sd_dtw,
                }
                for r in self.rows
            ],
        }


def impute_channel_batch(model: MaskedAutoencoder, data: np.ndarray, channel_index: int, batch_size: int = 64) -> np.ndarray:
    """Impute one channel for [n, C, T] arrays; returns [n, T]."""
    cfg = model.cfg
    mask = channel_mask(cfg, channel_index)
    data = np.asarray(data, dtype=np.float64 if model.dtype == torch.float64 else np.float32)
    out = np.empty((data.shape[0], cfg.samples_per_epoch), dtype=data.dtype)
    model.eval()
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            x = torch.from_numpy(data[start : start + batch_size]).to(model.dtype)
            recon, _ = model(x, mask)
            out[start : start + batch_size] = (
                recon[:, channel_index].reshape(x.shape[0], -1).cpu().numpy()
            )
    return out


def impute_channel(model: MaskedAutoencoder, epoch: SleepEpoch | np.ndarray, channel_index: int) -> np.ndarray:
    """Reconstruct channel `channel_index` of one epoch from the others.

    Returns the imputed [T] signal; the input epoch is left unmodified.
    """
    data = epoch.data if isinstance(epoch, SleepEpoch) else np.asarray(epoch)
    if data.ndim != 2:
        raise DataError(f"epoch data must be [C, T], got shape {data.shape}")
    return impute_channel_batch(model, data[None], channel_index)[0]


def evaluate_imputation(
    model: MaskedAutoencoder,
    epochs,
    n_samples: int,
    seed: int = 0,
    channel_names: list[str] | None = None,
    dtw_radius: int | None = None,
) -> ImputationReport:
    """Per-channel imputation error over one shared random epoch sample.

    Epochs are drawn without replacement; every channel row is computed on
    the same drawn set so rows are comparable. SD is the population SD.
    """
    data = np.stack([e.data if isinstance(e, SleepEpoch) else np.asarray(e) for e in epochs])
    cfg = model.cfg
    if n_samples <= 0:
        raise DataError("n_samples must be positive")
    if n_samples > data.shape[0]:
        raise DataError(f"n_samples={n_samples} exceeds available epochs ({data.shape[0]})")
    if channel_names is None:
        channel_names = [f"CH{c:02d}" for c in range(cfg.channels)]
    if len(channel_names) != cfg.channels:
        raise DataError(f"{len(channel_names)} channel names for {cfg.channels} channels")
    pick = derive_rng(seed, "impute-sample").choice(data.shape[0], size=n_samples, replace=False)
    sample = data[np.sort(pick)]

    rows = []
    for c in range(cfg.channels):
        imputed = impute_channel_batch(model, sample, c)
        mses = np.array([mse(imputed[i], sample[i, c]) for i in range(n_samples)])
        dtws = np.array([dtw(imputed[i], sample[i, c], radius=dtw_radius) for i in range(n_samples)])
        rows.append(
            ChannelImputationStats(
                channel=channel_names[c],
                mean_mse=float(mses.mean()),
                sd_mse=float(mses.std()),
                mean_dtw=float(dtws.mean()),
                sd_dtw=float(dtws.std()),
            )
        )
    return ImputationReport(rows=rows, n_samples=n_samples, samples_per_epoch=cfg.samples_per_epoch, seed=seed)
