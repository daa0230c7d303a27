"""Central finite-difference gradient oracle for the autoencoder."""

from __future__ import annotations

import torch

from pedsleep.model import MaskedAutoencoder, reconstruction_loss


def _loss(model: MaskedAutoencoder, x: torch.Tensor, target: torch.Tensor, mask) -> torch.Tensor:
    recon, _ = model(x, mask)
    return reconstruction_loss(recon, target, mask)


def finite_difference_check(model: MaskedAutoencoder, x, mask, eps: float = 1e-5) -> dict[str, float]:
    """Relative error between autograd and central differences, per parameter.

    The model must be float64. Returns {parameter name: relative error}, where
    the error is ||g_fd - g_auto|| / max(||g_fd||, ||g_auto||, 1e-12).
    """
    assert model.dtype == torch.float64, "gradient check requires a float64 model"
    cfg = model.cfg
    x = torch.as_tensor(x, dtype=torch.float64)
    if x.dim() == 2:
        x = x.unsqueeze(0)
    target = x.reshape(x.shape[0], cfg.channels, cfg.n_patches, cfg.patch_size)

    model.zero_grad(set_to_none=True)
    loss = _loss(model, x, target, mask)
    loss.backward()
    analytic = {name: p.grad.detach().clone() for name, p in model.named_parameters()}

    errors = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.reshape(-1)
            fd = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = _loss(model, x, target, mask).item()
                flat[i] = orig - eps
                down = _loss(model, x, target, mask).item()
                flat[i] = orig
                fd[i] = (up - down) / (2.0 * eps)
            fd = fd.reshape(param.shape)
            g = analytic[name]
            denom = max(fd.norm().item(), g.norm().item(), 1e-12)
            errors[name] = (fd - g).norm().item() / denom
    return errors
