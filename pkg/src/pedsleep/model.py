"""Multichannel masked autoencoder.

Each channel's signal is cut into patches of ``patch_size`` samples, linearly
projected to ``embed_dim``, and laid out as one flattened sequence of
channels x patches tokens with learned absolute positional embeddings, so
attention sees intra- and inter-channel structure in a single pass. The
encoder runs on visible tokens only; the decoder sees encoder outputs
re-inserted at their grid positions, a learned mask token elsewhere, and
positional embeddings re-added, then maps every token back to patch samples.

Masked patch values never enter the computation: visible tokens are gathered
before the encoder, which is what makes whole-channel imputation a strict
information barrier.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import container
from .errors import DataError, NumericError
from .seeding import derive_rng


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are the full-scale settings;
    desk-scale runs override freely."""

    channels: int = 16
    samples_per_epoch: int = 3840
    patch_size: int = 8
    embed_dim: int = 64
    mask_ratio: float = 0.5
    enc_layers: int = 3
    dec_layers: int = 3
    num_heads: int = 4
    mlp_ratio: float = 4.0
    seed: int = 0
    stratified_masking: bool = False

    def __post_init__(self) -> None:
        if self.samples_per_epoch % self.patch_size != 0:
            raise DataError(
                f"samples_per_epoch={self.samples_per_epoch} is not divisible by "
                f"patch_size={self.patch_size}"
            )
        if not 0.0 <= self.mask_ratio < 1.0:
            raise DataError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.embed_dim <= self.patch_size:
            raise DataError(f"embed_dim ({self.embed_dim}) must exceed patch_size ({self.patch_size})")
        if self.embed_dim % self.num_heads != 0:
            raise DataError(f"embed_dim ({self.embed_dim}) must be divisible by num_heads ({self.num_heads})")

    @property
    def n_patches(self) -> int:
        return self.samples_per_epoch // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.channels * self.n_patches

    @property
    def embedding_dim(self) -> int:
        # Pooled embedding length: one value per (channel, patch) token.
        return self.channels * self.n_patches

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# patch grid
# ---------------------------------------------------------------------------

def patchify(data: np.ndarray, patch_size: int) -> np.ndarray:
    """[C, T] -> [C, T/p, p] view of consecutive patches; exact."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise DataError(f"patchify expects [channels, samples], got shape {data.shape}")
    c, t = data.shape
    if t % patch_size != 0:
        raise DataError(f"samples per epoch T={t} not divisible by patch size p={patch_size}")
    return data.reshape(c, t // patch_size, patch_size)


def unpatchify(grid: np.ndarray) -> np.ndarray:
    """[C, N, p] -> [C, N*p]; exact inverse of patchify."""
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise DataError(f"unpatchify expects [channels, patches, patch_size], got shape {grid.shape}")
    c, n, p = grid.shape
    return grid.reshape(c, n * p)


@dataclass(frozen=True)
class MaskSpec:
    """Boolean mask over the [channels, patches] token grid."""

    masked: np.ndarray  # bool [C, N]

    @property
    def ratio(self) -> float:
        return float(self.masked.mean())

    @property
    def count(self) -> int:
        return int(self.masked.sum())

    @property
    def flat(self) -> np.ndarray:
        return self.masked.reshape(-1)


def sample_mask(cfg: ModelConfig, rng: np.random.Generator) -> MaskSpec:
    """Uniform random token subset of size round(mask_ratio * C * N).

    With stratified_masking, each channel gets round(mask_ratio * N) masked
    tokens instead of drawing over the flat grid.
    """
    c, n = cfg.channels, cfg.n_patches
    masked = np.zeros((c, n), dtype=bool)
    if cfg.stratified_masking:
        per_channel = round(cfg.mask_ratio * n)
        for ch in range(c):
            idx = rng.choice(n, size=per_channel, replace=False)
            masked[ch, idx] = True
    else:
        k = round(cfg.mask_ratio * c * n)
        idx = rng.choice(c * n, size=k, replace=False)
        masked.reshape(-1)[idx] = True
    return MaskSpec(masked)


def empty_mask(cfg: ModelConfig) -> MaskSpec:
    return MaskSpec(np.zeros((cfg.channels, cfg.n_patches), dtype=bool))


def channel_mask(cfg: ModelConfig, channel_index: int) -> MaskSpec:
    """All tokens of one channel masked, the rest visible."""
    if not 0 <= channel_index < cfg.channels:
        raise DataError(f"channel index {channel_index} out of range [0, {cfg.channels})")
    masked = np.zeros((cfg.channels, cfg.n_patches), dtype=bool)
    masked[channel_index] = True
    return MaskSpec(masked)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class _Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class _Block(nn.Module):
    """Pre-norm transformer block: attention then MLP, both residual."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], sd: float = 0.02) -> np.ndarray:
    out = rng.normal(0.0, sd, size=shape)
    for _ in range(8):
        bad = np.abs(out) > 2.0 * sd
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, sd, size=int(bad.sum()))
    return np.clip(out, -2.0 * sd, 2.0 * sd)


class MaskedAutoencoder(nn.Module):
    """Encoder/decoder over the flattened channels x patches token grid."""

    def __init__(self, cfg: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_proj = nn.Linear(cfg.patch_size, d)
        self.pos_embed = nn.Parameter(torch.zeros(cfg.n_tokens, d))
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.encoder = nn.ModuleList(_Block(d, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.enc_layers))
        self.encoder_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(_Block(d, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.dec_layers))
        self.decoder_norm = nn.LayerNorm(d)
        self.output_head = nn.Linear(d, cfg.patch_size)
        self._init_parameters()
        self.to(dtype)

    def _init_parameters(self) -> None:
        # All initial values come from seed-keyed numpy streams, one per
        # parameter name, so initialization is reproducible byte for byte
        # regardless of torch's global RNG.
        for name, param in self.named_parameters():
            rng = derive_rng(self.cfg.seed, "init", name)
            if name.endswith("bias") or "norm" in name:
                continue  # LayerNorm (1, 0) and zero biases: torch defaults for LN, explicit zeros below
            values = _trunc_normal(rng, tuple(param.shape))
            with torch.no_grad():
                param.copy_(torch.from_numpy(values))
        for name, param in self.named_parameters():
            if name.endswith("bias"):
                with torch.no_grad():
                    param.zero_()

    @property
    def dtype(self) -> torch.dtype:
        return self.patch_proj.weight.dtype

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # -- forward pieces ----------------------------------------------------

    def _tokens(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t = x.shape
        cfg = self.cfg
        if c != cfg.channels or t != cfg.samples_per_epoch:
            raise DataError(
                f"epoch shape [{c}, {t}] does not match config "
                f"[{cfg.channels}, {cfg.samples_per_epoch}]"
            )
        patches = x.reshape(b, c, cfg.n_patches, cfg.patch_size)
        return self.patch_proj(patches).reshape(b, cfg.n_tokens, cfg.embed_dim) + self.pos_embed

    @staticmethod
    def _batch_mask(mask: MaskSpec | np.ndarray, batch: int) -> np.ndarray:
        m = mask.masked if isinstance(mask, MaskSpec) else np.asarray(mask)
        if m.ndim == 2:
            m = np.broadcast_to(m, (batch,) + m.shape)
        counts = m.reshape(batch, -1).sum(axis=1)
        if len(np.unique(counts)) != 1:
            raise DataError("all masks in a batch must mask the same number of tokens")
        return m.reshape(batch, -1)

    def encode(self, x: torch.Tensor, mask: MaskSpec | np.ndarray) -> torch.Tensor:
        """Visible-token encoding scattered back onto the full grid, with the
        mask token at masked positions: the latent grid [B, C, N, d]."""
        b = x.shape[0]
        cfg = self.cfg
        tokens = self._tokens(x)
        flat = self._batch_mask(mask, b)
        n_visible = cfg.n_tokens - int(flat[0].sum())
        if n_visible == 0:
            raise DataError("mask leaves no visible tokens")
        visible_idx = np.stack([np.flatnonzero(~row) for row in flat])
        idx = torch.from_numpy(visible_idx).to(x.device)
        gathered = torch.gather(tokens, 1, idx.unsqueeze(-1).expand(-1, -1, cfg.embed_dim))
        z = gathered
        for block in self.encoder:
            z = block(z)
        z = self.encoder_norm(z)
        self._check_finite(z, "encoder")
        grid = self.mask_token.to(z.dtype).expand(b, cfg.n_tokens, cfg.embed_dim).clone()
        grid.scatter_(1, idx.unsqueeze(-1).expand(-1, -1, cfg.embed_dim), z)
        return grid.reshape(b, cfg.channels, cfg.n_patches, cfg.embed_dim)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """Latent grid [B, C, N, d] -> reconstructed patches [B, C, N, p]."""
        b = latent.shape[0]
        cfg = self.cfg
        z = latent.reshape(b, cfg.n_tokens, cfg.embed_dim) + self.pos_embed
        for block in self.decoder:
            z = block(z)
        z = self.decoder_norm(z)
        self._check_finite(z, "decoder")
        return self.output_head(z).reshape(b, cfg.channels, cfg.n_patches, cfg.patch_size)

    def forward(self, x: torch.Tensor, mask: MaskSpec | np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (reconstruction [B, C, N, p], latent grid [B, C, N, d])."""
        latent = self.encode(x, mask)
        return self.decode(latent), latent

    def _check_finite(self, z: torch.Tensor, stage: str) -> None:
        if torch.isfinite(z).all():
            return
        bad = (~torch.isfinite(z)).nonzero()
        first = bad[0].tolist()
        raise NumericError(
            f"non-finite activations after {stage} "
            f"(first at batch={first[0]}, token={first[1]}, dim={first[-1]})"
        )


def reconstruction_loss(
    reconstruction: torch.Tensor, target: torch.Tensor, mask: MaskSpec | np.ndarray | torch.Tensor
) -> torch.Tensor:
    """MSE over masked patch entries only; with an empty mask, MSE over all
    entries (used by the mask-free full-decode evaluation)."""
    if reconstruction.shape != target.shape:
        raise DataError(f"shape mismatch: {tuple(reconstruction.shape)} vs {tuple(target.shape)}")
    if isinstance(mask, MaskSpec):
        mask = mask.masked
    if isinstance(mask, np.ndarray):
        mask = torch.from_numpy(np.ascontiguousarray(mask))
    mask = mask.to(reconstruction.device)
    if mask.dim() == 2:
        mask = mask.unsqueeze(0).expand(reconstruction.shape[0], -1, -1)
    diff = (reconstruction - target) ** 2
    if not bool(mask.any()):
        return diff.mean()
    weights = mask.to(reconstruction.dtype).unsqueeze(-1)
    return (diff * weights).sum() / (weights.sum() * reconstruction.shape[-1])


def pool_embedding(latent: np.ndarray | torch.Tensor) -> np.ndarray:
    """Per-token mean over the embedding axis, flattened channel-major:
    [C, N, d] -> [C*N] (or batched [B, C, N, d] -> [B, C*N])."""
    if isinstance(latent, torch.Tensor):
        latent = latent.detach().cpu().numpy()
    latent = np.asarray(latent)
    if latent.ndim == 3:
        return latent.mean(axis=-1).reshape(-1)
    if latent.ndim == 4:
        return latent.mean(axis=-1).reshape(latent.shape[0], -1)
    raise DataError(f"latent grid must be [C, N, d] or [B, C, N, d], got shape {latent.shape}")


def embed_epochs(model: MaskedAutoencoder, data: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Mask-free encoding of [n, C, T] arrays.

    Returns (pooled embeddings [n, C*N], latent grids [n, C, N, d]).
    """
    data = np.asarray(data, dtype=np.float64 if model.dtype == torch.float64 else np.float32)
    if data.ndim == 2:
        data = data[None]
    mask = empty_mask(model.cfg)
    embeddings = []
    latents = []
    model.eval()
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            x = torch.from_numpy(data[start : start + batch_size]).to(model.dtype)
            latent = model.encode(x, mask)
            latents.append(latent.cpu().numpy())
            embeddings.append(pool_embedding(latent))
    return np.concatenate(embeddings, axis=0), np.concatenate(latents, axis=0)


def embed_epoch(model: MaskedAutoencoder, data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-epoch embedding: ([C*N], [C, N, d])."""
    emb, lat = embed_epochs(model, np.asarray(data)[None])
    return emb[0], lat[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def state_tensors(model: MaskedAutoencoder) -> dict[str, np.ndarray]:
    return {name: param.detach().cpu().numpy() for name, param in model.state_dict().items()}


def save_model(path, model: MaskedAutoencoder, meta: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> None:
    tensors = state_tensors(model)
    if extra:
        tensors.update({f"extra/{k}": v for k, v in extra.items()})
    container.write_checkpoint(path, model.cfg.to_dict(), tensors, meta=meta)


def load_model(path, dtype: torch.dtype = torch.float32) -> tuple[MaskedAutoencoder, dict, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint, validating every tensor's shape.

    Returns (model, meta, extra tensors such as optimizer state).
    """
    cfg_dict, tensors, meta = container.read_checkpoint(path)
    cfg = ModelConfig.from_dict(cfg_dict)
    model = MaskedAutoencoder(cfg, dtype=dtype)
    expected = model.state_dict()
    extra = {k[len("extra/") :]: v for k, v in tensors.items() if k.startswith("extra/")}
    missing = [k for k in expected if k not in tensors]
    if missing:
        raise DataError(f"checkpoint {path} is missing tensors: {missing}")
    state = {}
    for name, ref in expected.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise DataError(
                f"checkpoint tensor '{name}' has shape {tuple(arr.shape)}, "
                f"model built from its config expects {tuple(ref.shape)}"
            )
        state[name] = torch.from_numpy(arr).to(ref.dtype)
    model.load_state_dict(state)
    return model, meta, extra


def config_hash(cfg: ModelConfig, extra: dict | None = None) -> str:
    import hashlib

    payload = {"model": cfg.to_dict()}
    if extra:
        payload["extra"] = extra
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
