"""Self-supervised training loop: AdamW on the masked reconstruction loss.

"Iterations per epoch" means batches are drawn uniformly with replacement
from the training pool; an epoch is a bookkeeping unit, not a sweep. Every
stochastic draw (batch indices, training masks) is keyed by the global step,
and validation masks are keyed by validation-epoch index, so a resumed run
replays exactly the same trajectory as an uninterrupted one.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import SleepEpoch
from .errors import DataError, NumericError
from .model import MaskedAutoencoder, ModelConfig, config_hash, sample_mask, reconstruction_loss, state_tensors
from .seeding import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule. Defaults are the full-scale settings."""

    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 600
    iterations_per_epoch: int = 2000
    seed: int = 0
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = off
    grad_clip: float | None = None  # off by default

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.iterations_per_epoch < 1:
            raise DataError("batch_size, epochs and iterations_per_epoch must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise DataError("lr and weight_decay must be nonnegative")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iterations_per_epoch

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    """Append-only loss history; reproducible given (seed, config, data)."""

    seed: int
    config_hash: str
    iterations: list[int] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    val_iterations: list[int] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def record_train(self, iteration: int, loss: float) -> None:
        self.iterations.append(iteration)
        self.train_losses.append(loss)

    def record_val(self, iteration: int, loss: float) -> None:
        self.val_iterations.append(iteration)
        self.val_losses.append(loss)

    @property
    def initial_val_loss(self) -> float:
        return self.val_losses[0]

    @property
    def final_val_loss(self) -> float:
        return self.val_losses[-1]

    @property
    def best_val_loss(self) -> float:
        return min(self.val_losses)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("iteration,split,loss\n")
            for it, loss in zip(self.iterations, self.train_losses):
                f.write(f"{it},train,{loss!r}\n")
            for it, loss in zip(self.val_iterations, self.val_losses):
                f.write(f"{it},val,{loss!r}\n")


def _as_array(epochs, cfg: ModelConfig) -> np.ndarray:
    if isinstance(epochs, np.ndarray):
        data = epochs.astype(np.float32)
    else:
        if not len(epochs):
            raise DataError("epoch list is empty")
        data = np.stack([e.data if isinstance(e, SleepEpoch) else np.asarray(e) for e in epochs]).astype(np.float32)
    if data.ndim != 3 or data.shape[1] != cfg.channels or data.shape[2] != cfg.samples_per_epoch:
        raise DataError(
            f"epoch array shape {data.shape} does not match model config "
            f"[n, {cfg.channels}, {cfg.samples_per_epoch}]"
        )
    return data


def _batch_masks(cfg: ModelConfig, rng: np.random.Generator, batch: int) -> np.ndarray:
    return np.stack([sample_mask(cfg, rng).masked for _ in range(batch)])


def validation_loss(model: MaskedAutoencoder, val_data: np.ndarray, seed: int, batch_size: int = 64) -> float:
    """Masked MSE over the validation pool with fixed seeded masks (one mask
    per validation epoch, stable across calls for comparability)."""
    cfg = model.cfg
    masks = np.stack(
        [sample_mask(cfg, derive_rng(seed, "valmask", i)).masked for i in range(val_data.shape[0])]
    )
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, val_data.shape[0], batch_size):
            stop = min(start + batch_size, val_data.shape[0])
            x = torch.from_numpy(val_data[start:stop]).to(model.dtype)
            recon, _ = model(x, masks[start:stop])
            target = x.reshape(x.shape[0], cfg.channels, cfg.n_patches, cfg.patch_size)
            loss = reconstruction_loss(recon, target, masks[start:stop])
            total += float(loss) * (stop - start)
            count += stop - start
    return total / count


def _make_optimizer(model: MaskedAutoencoder, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def _optimizer_tensors(model: MaskedAutoencoder, opt: torch.optim.AdamW) -> dict[str, np.ndarray]:
    out = {}
    names = [name for name, _ in model.named_parameters()]
    params = list(model.parameters())
    for name, param in zip(names, params):
        state = opt.state.get(param)
        if not state:
            continue
        out[f"opt/{name}/step"] = np.array([float(state["step"])], dtype=np.float64)
        out[f"opt/{name}/exp_avg"] = state["exp_avg"].detach().cpu().numpy().astype(np.float64)
        out[f"opt/{name}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy().astype(np.float64)
    return out


def _restore_optimizer(model: MaskedAutoencoder, opt: torch.optim.AdamW, tensors: dict[str, np.ndarray]) -> None:
    for name, param in model.named_parameters():
        key = f"opt/{name}/step"
        if key not in tensors:
            continue
        for field_name in ("exp_avg", "exp_avg_sq"):
            arr = tensors[f"opt/{name}/{field_name}"]
            if tuple(arr.shape) != tuple(param.shape):
                raise DataError(
                    f"optimizer tensor 'opt/{name}/{field_name}' has shape {tuple(arr.shape)}, "
                    f"parameter expects {tuple(param.shape)}"
                )
        opt.state[param] = {
            "step": torch.tensor(float(tensors[key][0])),
            "exp_avg": torch.from_numpy(tensors[f"opt/{name}/exp_avg"]).to(param.dtype),
            "exp_avg_sq": torch.from_numpy(tensors[f"opt/{name}/exp_avg_sq"]).to(param.dtype),
        }


def save_training_checkpoint(path, model: MaskedAutoencoder, opt, train_cfg: TrainConfig, step: int, log: TrainLog) -> None:
    from .model import save_model

    meta = {
        "train_config": train_cfg.to_dict(),
        "global_step": step,
        "val_losses": log.val_losses,
        "val_iterations": log.val_iterations,
    }
    save_model(path, model, meta=meta, extra=_optimizer_tensors(model, opt))


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_epochs,
    val_epochs,
    out_dir=None,
    deterministic: bool = False,
    start_model: MaskedAutoencoder | None = None,
    start_optimizer_tensors: dict[str, np.ndarray] | None = None,
    start_step: int = 0,
    log: TrainLog | None = None,
) -> tuple[MaskedAutoencoder, TrainLog]:
    """Run the SSL loop from start_step to the configured total step count.

    Returns the best-validation model together with the full log; the final
    state is saved alongside when out_dir is given.
    """
    if deterministic:
        torch.set_num_threads(1)
    train_data = _as_array(train_epochs, model_cfg)
    val_data = _as_array(val_epochs, model_cfg) if val_epochs is not None and len(val_epochs) else None
    if train_data.shape[0] == 0:
        raise DataError("training set is empty")

    model = start_model if start_model is not None else MaskedAutoencoder(model_cfg)
    opt = _make_optimizer(model, train_cfg)
    if start_optimizer_tensors:
        _restore_optimizer(model, opt, start_optimizer_tensors)
    seed = train_cfg.seed
    if log is None:
        log = TrainLog(seed=seed, config_hash=config_hash(model_cfg, train_cfg.to_dict()))

    started = time.perf_counter()
    best_state = None
    best_val = np.inf
    if val_data is not None and start_step == 0:
        v0 = validation_loss(model, val_data, seed, train_cfg.batch_size)
        log.record_val(0, v0)
        best_val, best_state = v0, state_tensors(model)
        logger.info("initial validation loss %.6f", v0)

    cfg = model.cfg
    n = train_data.shape[0]
    model.train()
    start_epoch = start_step // train_cfg.iterations_per_epoch
    for epoch in range(start_epoch, train_cfg.epochs):
        for it in range(train_cfg.iterations_per_epoch):
            step = epoch * train_cfg.iterations_per_epoch + it
            if step < start_step:
                continue
            batch_idx = derive_rng(seed, "batch", step).integers(0, n, size=train_cfg.batch_size)
            masks = _batch_masks(cfg, derive_rng(seed, "mask", step), train_cfg.batch_size)
            x = torch.from_numpy(train_data[batch_idx]).to(model.dtype)
            try:
                recon, _ = model(x, masks)
                target = x.reshape(x.shape[0], cfg.channels, cfg.n_patches, cfg.patch_size)
                loss = reconstruction_loss(recon, target, masks)
                value = float(loss.detach())
            except NumericError as exc:
                raise NumericError(
                    f"{exc} at iteration {step}; batch epoch ids: {batch_idx.tolist()}"
                ) from exc
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss at iteration {step}; batch epoch ids: {batch_idx.tolist()}"
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if train_cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            opt.step()
            log.record_train(step + 1, value)
        if val_data is not None:
            v = validation_loss(model, val_data, seed, train_cfg.batch_size)
            log.record_val((epoch + 1) * train_cfg.iterations_per_epoch, v)
            logger.info("epoch %d validation loss %.6f", epoch + 1, v)
            if v < best_val:
                best_val, best_state = v, state_tensors(model)
            model.train()
        if out_dir is not None and train_cfg.checkpoint_every and (epoch + 1) % train_cfg.checkpoint_every == 0:
            save_training_checkpoint(
                f"{out_dir}/checkpoint_epoch{epoch + 1:04d}.psgc",
                model,
                opt,
                train_cfg,
                (epoch + 1) * train_cfg.iterations_per_epoch,
                log,
            )
    log.wall_clock_seconds += time.perf_counter() - started

    if out_dir is not None:
        save_training_checkpoint(f"{out_dir}/checkpoint_final.psgc", model, opt, train_cfg, train_cfg.total_steps, log)
    if best_state is not None and best_val < np.inf:
        best_model = MaskedAutoencoder(model.cfg)
        best_model.load_state_dict({k: torch.from_numpy(v) for k, v in best_state.items()})
        if out_dir is not None:
            from .model import save_model

            save_model(
                f"{out_dir}/checkpoint_best.psgc",
                best_model,
                meta={"train_config": train_cfg.to_dict(), "best_val_loss": best_val},
            )
    return model, log


def resume(
    checkpoint_path,
    train_cfg: TrainConfig,
    train_epochs,
    val_epochs,
    out_dir=None,
    deterministic: bool = False,
    expected_model_cfg: ModelConfig | None = None,
) -> tuple[MaskedAutoencoder, TrainLog]:
    """Continue a checkpointed run up to train_cfg's total step count.

    Raises DataError if expected_model_cfg is given and disagrees with the
    checkpoint's architecture. Train-config changes (e.g. a larger batch
    size) are permitted and recorded in the log's event list.
    """
    from .model import load_model

    model, meta, extra = load_model(checkpoint_path)
    if expected_model_cfg is not None and expected_model_cfg != model.cfg:
        differing = [
            key
            for key in expected_model_cfg.to_dict()
            if expected_model_cfg.to_dict()[key] != model.cfg.to_dict()[key]
        ]
        raise DataError(
            f"checkpoint model config disagrees with the requested one on: {differing}"
        )
    saved_cfg = meta.get("train_config", {})
    step = int(meta.get("global_step", 0))
    log = TrainLog(seed=train_cfg.seed, config_hash=config_hash(model.cfg, train_cfg.to_dict()))
    for it, loss in zip(meta.get("val_iterations", []), meta.get("val_losses", [])):
        log.record_val(int(it), float(loss))
    changed = {
        key: (saved_cfg.get(key), value)
        for key, value in train_cfg.to_dict().items()
        if key in saved_cfg and saved_cfg[key] != value
    }
    for key, (old, new) in changed.items():
        log.events.append(f"resume changed {key}: {old} -> {new}")
        logger.info("resume config change: %s: %r -> %r", key, old, new)
    return train(
        train_cfg,
        model.cfg,
        train_epochs,
        val_epochs,
        out_dir=out_dir,
        deterministic=deterministic,
        start_model=model,
        start_optimizer_tensors=extra,
        start_step=step,
        log=log,
    )


def sweep(
    base_train_cfg: TrainConfig,
    base_model_cfg: ModelConfig,
    train_epochs,
    val_epochs,
    mask_ratios=(0.5, 0.75),
    patch_sizes=(8, 16),
) -> dict[tuple[float, int], TrainLog]:
    """Masking-ratio x patch-size grid; one trained cell per combination."""
    from dataclasses import replace as dc_replace

    results = {}
    for ratio in mask_ratios:
        for patch in patch_sizes:
            cell_cfg = dc_replace(base_model_cfg, mask_ratio=ratio, patch_size=patch)
            _, cell_log = train(base_train_cfg, cell_cfg, train_epochs, val_epochs)
            results[(ratio, patch)] = cell_log
    return results
