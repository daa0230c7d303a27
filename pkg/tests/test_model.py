"""Autoencoder correctness: patch grid, masking, forward contracts, loss
semantics, pooling, permutation indexing, gradients, checkpoints."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import finite_difference_check
from pedsleep.errors import DataError, NumericError
from pedsleep.model import (
    MaskedAutoencoder,
    ModelConfig,
    channel_mask,
    empty_mask,
    load_model,
    patchify,
    pool_embedding,
    reconstruction_loss,
    sample_mask,
    save_model,
    unpatchify,
    embed_epoch,
    embed_epochs,
)
from pedsleep.seeding import derive_rng

DESK = ModelConfig(channels=4, samples_per_epoch=256, patch_size=8, embed_dim=16,
                   enc_layers=2, dec_layers=2, num_heads=4, seed=0)
PAPER = ModelConfig()  # 16 channels, 3840 samples, p=8, d=64


class TestConfig:
    def test_paper_scale_token_grid(self):
        assert PAPER.n_patches == 480
        assert PAPER.n_tokens == 7680
        assert PAPER.embedding_dim == 7680

    def test_indivisible_patch_rejected(self):
        with pytest.raises(DataError, match="divisible"):
            ModelConfig(channels=2, samples_per_epoch=100, patch_size=8, embed_dim=16)

    def test_embed_dim_must_exceed_patch(self):
        with pytest.raises(DataError, match="exceed"):
            ModelConfig(channels=2, samples_per_epoch=64, patch_size=8, embed_dim=8)

    def test_mask_ratio_range(self):
        with pytest.raises(DataError, match="mask_ratio"):
            ModelConfig(channels=2, samples_per_epoch=64, patch_size=8, embed_dim=16, mask_ratio=1.0)


class TestPatchGrid:
    def test_paper_scale_shape(self):
        grid = patchify(np.zeros((16, 3840)), 8)
        assert grid.shape == (16, 480, 8)

    def test_single_patch_per_channel(self):
        grid = patchify(np.zeros((3, 64)), 64)
        assert grid.shape == (3, 1, 64)

    def test_grid_indexing(self):
        data = np.arange(2 * 32, dtype=float).reshape(2, 32)
        grid = patchify(data, 8)
        assert np.array_equal(grid[1, 2], data[1, 16:24])

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 96)).astype(np.float32)
        assert np.array_equal(unpatchify(patchify(x, 8)), x)

    @given(st.integers(1, 6), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_round_trip_property(self, c, n, p, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(c, n * p))
        assert np.array_equal(unpatchify(patchify(x, p)), x)

    def test_indivisible_rejected_naming_sizes(self):
        with pytest.raises(DataError, match="T=100.*p=8"):
            patchify(np.zeros((2, 100)), 8)


class TestMasking:
    def test_paper_scale_exact_count(self):
        mask = sample_mask(PAPER, derive_rng(0, "m"))
        assert mask.count == 3840
        assert mask.masked.shape == (16, 480)

    def test_zero_ratio_empty(self):
        cfg = ModelConfig(channels=2, samples_per_epoch=64, patch_size=8, embed_dim=16, mask_ratio=0.0)
        assert sample_mask(cfg, derive_rng(0, "m")).count == 0

    def test_deterministic_given_stream(self):
        a = sample_mask(DESK, derive_rng(7, "mask", 3)).masked
        b = sample_mask(DESK, derive_rng(7, "mask", 3)).masked
        assert np.array_equal(a, b)

    def test_counts_across_ratios(self):
        for ratio in (0.25, 0.5, 0.75):
            cfg = ModelConfig(channels=4, samples_per_epoch=256, patch_size=8, embed_dim=16,
                              mask_ratio=ratio)
            mask = sample_mask(cfg, derive_rng(1, "m"))
            assert mask.count == round(ratio * cfg.n_tokens)

    def test_stratified_masks_per_channel(self):
        cfg = ModelConfig(channels=4, samples_per_epoch=256, patch_size=8, embed_dim=16,
                          mask_ratio=0.5, stratified_masking=True)
        mask = sample_mask(cfg, derive_rng(2, "m"))
        assert np.all(mask.masked.sum(axis=1) == 16)

    def test_channel_mask(self):
        mask = channel_mask(DESK, 2)
        assert mask.count == DESK.n_patches
        assert np.all(mask.masked[2])
        assert not mask.masked[[0, 1, 3]].any()
        with pytest.raises(DataError):
            channel_mask(DESK, 9)


def _model(cfg=DESK, dtype=torch.float32):
    return MaskedAutoencoder(cfg, dtype=dtype)


def _epoch_batch(cfg, n=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, cfg.channels, cfg.samples_per_epoch)).astype(np.float32)


class TestForward:
    def test_empty_mask_shapes(self):
        model = _model()
        x = torch.from_numpy(_epoch_batch(DESK))
        recon, latent = model(x, empty_mask(DESK))
        assert recon.shape == (2, 4, 32, 8)
        assert latent.shape == (2, 4, 32, 16)

    def test_fresh_init_outputs_finite(self):
        model = _model()
        x = torch.from_numpy(_epoch_batch(DESK, seed=3))
        recon, latent = model(x, sample_mask(DESK, derive_rng(0, "m")))
        assert torch.isfinite(recon).all() and torch.isfinite(latent).all()

    def test_deterministic_given_state(self):
        model = _model()
        x = torch.from_numpy(_epoch_batch(DESK, seed=4))
        mask = sample_mask(DESK, derive_rng(1, "m"))
        r1, l1 = model(x, mask)
        r2, l2 = model(x, mask)
        assert torch.equal(r1, r2) and torch.equal(l1, l2)

    def test_shape_mismatch_rejected(self):
        model = _model()
        with pytest.raises(DataError, match="does not match config"):
            model(torch.zeros(1, 3, 256), empty_mask(DESK))

    def test_unequal_mask_counts_rejected(self):
        model = _model()
        x = torch.from_numpy(_epoch_batch(DESK))
        masks = np.zeros((2, 4, 32), dtype=bool)
        masks[0, 0, 0] = True
        with pytest.raises(DataError, match="same number"):
            model(x, masks)

    def test_seeded_init_reproducible(self):
        a = _model()
        b = _model()
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        import dataclasses

        a = _model()
        b = MaskedAutoencoder(dataclasses.replace(DESK, seed=1))
        assert not torch.equal(a.patch_proj.weight, b.patch_proj.weight)

    def test_nonfinite_activation_diagnosed(self):
        model = _model()
        with torch.no_grad():
            model.patch_proj.weight[0, 0] = float("nan")
        x = torch.from_numpy(_epoch_batch(DESK))
        with pytest.raises(NumericError, match="encoder"):
            model(x, empty_mask(DESK))

    def test_param_count_positive_and_stable(self):
        model = _model()
        count = model.param_count()
        assert count == sum(p.numel() for p in model.parameters())
        assert count > 0


class TestLoss:
    def test_exact_reconstruction_is_zero(self):
        target = torch.randn(1, 2, 4, 8, dtype=torch.float64)
        mask = np.zeros((2, 4), dtype=bool)
        mask[0, 1] = True
        assert reconstruction_loss(target.clone(), target, mask).item() == 0.0

    def test_single_masked_patch_unit_error(self):
        recon = torch.zeros(1, 2, 4, 8)
        target = torch.ones(1, 2, 4, 8)
        mask = np.zeros((2, 4), dtype=bool)
        mask[1, 2] = True
        assert reconstruction_loss(recon, target, mask).item() == pytest.approx(1.0)

    def test_unmasked_positions_do_not_matter(self):
        rng = np.random.default_rng(5)
        target = torch.from_numpy(rng.normal(size=(1, 3, 8, 4)))
        recon = torch.from_numpy(rng.normal(size=(1, 3, 8, 4)))
        mask = np.zeros((3, 8), dtype=bool)
        mask[0, :4] = True
        base = reconstruction_loss(recon, target, mask).item()
        perturbed = recon.clone()
        perturbed[0, 2, 7] += 1000.0  # unmasked patch
        assert reconstruction_loss(perturbed, target, mask).item() == base

    def test_empty_mask_averages_everything(self):
        rng = np.random.default_rng(6)
        target = torch.from_numpy(rng.normal(size=(2, 3, 8, 4)))
        recon = torch.from_numpy(rng.normal(size=(2, 3, 8, 4)))
        mask = np.zeros((3, 8), dtype=bool)
        expected = ((recon - target) ** 2).mean().item()
        assert reconstruction_loss(recon, target, mask).item() == pytest.approx(expected)

    def test_masked_mean_value(self):
        recon = torch.zeros(1, 1, 2, 2)
        target = torch.tensor([[[[1.0, 1.0], [3.0, 3.0]]]])
        mask = np.array([[True, True]])
        assert reconstruction_loss(recon, target, mask).item() == pytest.approx((1 + 1 + 9 + 9) / 4)


class TestPooling:
    def test_paper_scale_vector_length(self):
        latent = np.zeros((16, 480, 64))
        assert pool_embedding(latent).shape == (7680,)

    def test_constant_latent(self):
        latent = np.full((2, 3, 4), 2.5)
        assert np.allclose(pool_embedding(latent), 2.5)

    def test_single_token_mean(self):
        latent = np.zeros((1, 2, 4))
        latent[0, 1] = [1.0, 2.0, 3.0, 4.0]
        pooled = pool_embedding(latent)
        assert pooled[1] == pytest.approx(2.5)

    def test_channel_major_flattening(self):
        latent = np.zeros((2, 3, 2))
        latent[1, 0] = [7.0, 7.0]
        pooled = pool_embedding(latent)
        assert pooled[3] == 7.0  # index c*N + n = 1*3 + 0


class TestEmbedding:
    def test_vector_length_any_config(self):
        model = _model()
        emb, latent = embed_epoch(model, _epoch_batch(DESK, n=1)[0])
        assert emb.shape == (DESK.embedding_dim,)
        assert latent.shape == (4, 32, 16)

    def test_deterministic(self):
        model = _model()
        x = _epoch_batch(DESK, n=1)[0]
        a, _ = embed_epoch(model, x)
        b, _ = embed_epoch(model, x)
        assert np.array_equal(a, b)

    def test_batched_equals_single(self):
        model = _model()
        xs = _epoch_batch(DESK, n=5, seed=8)
        batched, _ = embed_epochs(model, xs)
        singles = np.stack([embed_epoch(model, x)[0] for x in xs])
        assert np.allclose(batched, singles, atol=1e-6)

    def test_channel_difference_changes_embedding(self):
        model = _model()
        x = _epoch_batch(DESK, n=1, seed=9)[0]
        y = x.copy()
        y[2] += 1.0
        ex, _ = embed_epoch(model, x)
        ey, _ = embed_epoch(model, y)
        assert not np.allclose(ex, ey)

    def test_pooled_matches_latent_mean(self):
        model = _model()
        emb, latent = embed_epoch(model, _epoch_batch(DESK, n=1, seed=10)[0])
        assert np.allclose(emb, latent.mean(axis=-1).reshape(-1), atol=1e-7)


class TestPermutationConsistency:
    def test_channel_permutation_permutes_latent(self):
        cfg = ModelConfig(channels=3, samples_per_epoch=64, patch_size=8, embed_dim=16,
                          enc_layers=1, dec_layers=1, num_heads=2, seed=0)
        model = MaskedAutoencoder(cfg, dtype=torch.float64)
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 3, 64))
        perm = np.array([2, 0, 1])

        _, latent = model(torch.from_numpy(x), empty_mask(cfg))

        permuted_model = MaskedAutoencoder(cfg, dtype=torch.float64)
        permuted_model.load_state_dict(model.state_dict())
        with torch.no_grad():
            pos = model.pos_embed.reshape(cfg.channels, cfg.n_patches, cfg.embed_dim)
            permuted_model.pos_embed.copy_(pos[perm].reshape(cfg.n_tokens, cfg.embed_dim))
        _, latent_perm = permuted_model(torch.from_numpy(x[:, perm]), empty_mask(cfg))

        assert torch.allclose(latent_perm, latent[:, perm], atol=1e-10)


class TestGradients:
    def test_finite_differences_all_parameter_groups(self):
        # Tiny config: 2 channels, 32 samples, d=8, one layer each side.
        # patch_size=4 keeps the d > p architectural invariant satisfiable.
        cfg = ModelConfig(channels=2, samples_per_epoch=32, patch_size=4, embed_dim=8,
                          enc_layers=1, dec_layers=1, num_heads=2, mlp_ratio=2.0, seed=0)
        model = MaskedAutoencoder(cfg, dtype=torch.float64)
        rng = np.random.default_rng(12)
        x = rng.normal(size=(1, 2, 32))
        mask = sample_mask(cfg, derive_rng(3, "m"))
        errors = finite_difference_check(model, x, mask)
        worst = max(errors.values())
        assert worst <= 1e-3, f"worst relative error {worst}: {errors}"


class TestCheckpointIO:
    def test_round_trip_bit_exact(self, tmp_path):
        model = _model()
        path = tmp_path / "m.psgc"
        save_model(path, model, meta={"note": "x"})
        back, meta, extra = load_model(path)
        assert meta == {"note": "x"}
        for (na, pa), (nb, pb) in zip(model.named_parameters(), back.named_parameters()):
            assert na == nb
            assert pa.detach().numpy().tobytes() == pb.detach().numpy().tobytes()

    def test_shape_mismatch_names_tensor(self, tmp_path):
        from pedsleep import container

        model = _model()
        path = tmp_path / "m.psgc"
        save_model(path, model)
        cfg_dict, tensors, meta = container.read_checkpoint(path)
        tensors["pos_embed"] = tensors["pos_embed"][:-1]
        container.write_checkpoint(path, cfg_dict, tensors, meta=meta)
        with pytest.raises(DataError, match="pos_embed"):
            load_model(path)

    def test_missing_tensor_rejected(self, tmp_path):
        from pedsleep import container

        model = _model()
        path = tmp_path / "m.psgc"
        save_model(path, model)
        cfg_dict, tensors, meta = container.read_checkpoint(path)
        tensors.pop("mask_token")
        container.write_checkpoint(path, cfg_dict, tensors, meta=meta)
        with pytest.raises(DataError, match="missing"):
            load_model(path)

    def test_loaded_model_same_outputs(self, tmp_path):
        model = _model()
        x = torch.from_numpy(_epoch_batch(DESK, seed=13))
        recon, _ = model(x, empty_mask(DESK))
        save_model(tmp_path / "m.psgc", model)
        back, _, _ = load_model(tmp_path / "m.psgc")
        recon2, _ = back(x, empty_mask(DESK))
        assert torch.equal(recon, recon2)
