"""Decoder-side applications: full-signal generation, averaged-latent
synthesis, nearest-neighbor retrieval and outlier ranking.

Averaging happens on full latent token grids (the decoder consumes token
grids, so that is the only representation an "average" can be decoded from);
pooled vectors are used for embedding-space retrieval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import SleepEpoch
from .errors import DataError
from .metrics import dtw_multichannel
from .model import MaskedAutoencoder, embed_epochs, empty_mask, pool_embedding, unpatchify


@dataclass(frozen=True)
class GeneratedEpoch:
    """A decoder-produced [C, T] signal, where it came from, and (when known)
    the latent grid it was decoded from."""

    data: np.ndarray
    provenance: dict = field(default_factory=dict)
    latent: np.ndarray | None = None


def full_decode_batch(model: MaskedAutoencoder, data: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Mask-free encode + decode-all for [n, C, T] arrays; returns [n, C, T]."""
    data = np.asarray(data, dtype=np.float64 if model.dtype == torch.float64 else np.float32)
    cfg = model.cfg
    mask = empty_mask(cfg)
    out = np.empty_like(data)
    model.eval()
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            x = torch.from_numpy(data[start : start + batch_size]).to(model.dtype)
            recon, _ = model(x, mask)
            out[start : start + batch_size] = recon.reshape(x.shape[0], cfg.channels, -1).cpu().numpy()
    return out


def full_decode(model: MaskedAutoencoder, epoch: SleepEpoch | np.ndarray) -> GeneratedEpoch:
    """Encode with an empty mask, decode every position, stitch patches."""
    data = epoch.data if isinstance(epoch, SleepEpoch) else np.asarray(epoch)
    cfg = model.cfg
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(
            np.asarray(data, dtype=np.float64 if model.dtype == torch.float64 else np.float32)[None]
        ).to(model.dtype)
        latent = model.encode(x, empty_mask(cfg))
        decoded = model.decode(latent)[0].reshape(cfg.channels, -1).cpu().numpy()
    prov = {"kind": "full_decode"}
    if isinstance(epoch, SleepEpoch):
        prov["epoch_ids"] = [list(epoch.key)]
    return GeneratedEpoch(decoded, prov, latent=latent[0].cpu().numpy())


def decode_latent(model: MaskedAutoencoder, latent: np.ndarray) -> np.ndarray:
    """Latent grid [C, N, d] -> signal [C, T]."""
    cfg = model.cfg
    latent = np.asarray(latent)
    if latent.shape != (cfg.channels, cfg.n_patches, cfg.embed_dim):
        raise DataError(
            f"latent shape {latent.shape} does not match config "
            f"({cfg.channels}, {cfg.n_patches}, {cfg.embed_dim})"
        )
    model.eval()
    with torch.no_grad():
        grid = torch.from_numpy(latent).to(model.dtype).unsqueeze(0)
        patches = model.decode(grid)[0].cpu().numpy()
    return unpatchify(patches)


def average_latent(latents: list[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of identically shaped latent grids."""
    if not len(latents):
        raise DataError("average_latent needs at least one latent grid")
    stack = np.stack([np.asarray(l) for l in latents])
    return stack.mean(axis=0)


def generate_average(
    model: MaskedAutoencoder,
    epochs: list[SleepEpoch],
    selector,
    description: str = "<predicate>",
) -> GeneratedEpoch:
    """Average the latent grids of all selector-matched epochs and decode.

    With a single match this is exactly full_decode of that epoch.
    """
    matched = [e for e in epochs if selector(e)]
    if not matched:
        raise DataError(f"no epochs matched selector {description}")
    data = np.stack([e.data for e in matched])
    _, latents = embed_epochs(model, data)
    mean_latent = average_latent(list(latents))
    signal = decode_latent(model, mean_latent)
    return GeneratedEpoch(
        signal,
        {"kind": "average", "selector": description, "epoch_ids": [list(e.key) for e in matched]},
        latent=mean_latent,
    )


def _representations(model: MaskedAutoencoder, data: np.ndarray, space: str) -> np.ndarray:
    if space == "generated_signal":
        return full_decode_batch(model, data)
    if space == "embedding":
        return embed_epochs(model, data)[0]
    raise DataError(f"unknown space '{space}' (expected 'generated_signal' or 'embedding')")


def _reference_representation(model: MaskedAutoencoder, reference: GeneratedEpoch, space: str) -> np.ndarray:
    if space == "generated_signal":
        return np.asarray(reference.data)
    if reference.latent is not None:
        # A generated reference lives in latent space by construction; its
        # pooled latent IS its embedding (re-encoding the decoded signal
        # would shift it off the real-data manifold).
        return pool_embedding(reference.latent)
    return embed_epochs(model, np.asarray(reference.data)[None])[0][0]


def _distance(a: np.ndarray, b: np.ndarray, metric: str, space: str) -> float:
    if metric == "euclidean":
        return float(np.linalg.norm(np.asarray(a, dtype=float).ravel() - np.asarray(b, dtype=float).ravel()))
    if metric == "dtw":
        if space == "embedding":
            # Pooled vectors are channel-major token sequences; warp per channel.
            raise DataError("dtw retrieval applies to generated_signal space")
        return dtw_multichannel(a, b)
    raise DataError(f"unknown metric '{metric}'")


def nearest_neighbor(
    model: MaskedAutoencoder,
    reference: GeneratedEpoch,
    candidates: list[SleepEpoch],
    space: str = "generated_signal",
    metric: str = "euclidean",
    k: int = 5,
) -> list[tuple[tuple[str, int], float]]:
    """k nearest candidates to the reference in the chosen space, ascending
    by distance with deterministic ties (epoch key order)."""
    if not candidates:
        raise DataError("no candidate epochs")
    if k > len(candidates):
        raise DataError(f"k={k} exceeds candidate count {len(candidates)}")
    data = np.stack([e.data for e in candidates])
    reps = _representations(model, data, space)
    ref = _reference_representation(model, reference, space)
    ranked = sorted(
        ((_distance(ref, reps[i], metric, space), candidates[i].key) for i in range(len(candidates))),
        key=lambda item: (item[0], item[1]),
    )
    return [(key, float(dist)) for dist, key in ranked[:k]]


def outlier_rank(
    model: MaskedAutoencoder,
    epochs: list[SleepEpoch],
    space: str = "embedding",
    metric: str = "euclidean",
) -> list[tuple[tuple[str, int], float]]:
    """Epochs ranked by distance from the cohort-mean representation,
    farthest first (candidates for clinician review)."""
    if len(epochs) < 2:
        raise DataError("outlier ranking needs >= 2 epochs")
    data = np.stack([e.data for e in epochs])
    reps = _representations(model, data, space)
    mean_rep = reps.mean(axis=0)
    ranked = sorted(
        ((_distance(mean_rep, reps[i], metric, space), epochs[i].key) for i in range(len(epochs))),
        key=lambda item: (-item[0], item[1]),
    )
    return [(key, float(dist)) for dist, key in ranked]
