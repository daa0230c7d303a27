"""Decoder applications: full decode, latent averaging, retrieval, outliers.

Contract tests run on an untrained (seeded) model; generation-quality
behavior of the trained desk model is covered by the acceptance gate.
"""

import numpy as np
import pytest

from pedsleep.data import SleepEpoch
from pedsleep.errors import DataError
from pedsleep.generate import (
    average_latent,
    decode_latent,
    full_decode,
    full_decode_batch,
    generate_average,
    nearest_neighbor,
    outlier_rank,
)
from pedsleep.model import MaskedAutoencoder, ModelConfig

CFG = ModelConfig(channels=3, samples_per_epoch=64, patch_size=8, embed_dim=16,
                  enc_layers=1, dec_layers=1, num_heads=2, seed=0)


@pytest.fixture(scope="module")
def model():
    return MaskedAutoencoder(CFG)


def _epochs(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return [
        SleepEpoch("r0", i, rng.normal(size=(CFG.channels, CFG.samples_per_epoch)).astype(np.float32))
        for i in range(n)
    ]


class TestFullDecode:
    def test_output_shape_matches_input(self, model):
        epoch = _epochs(1)[0]
        out = full_decode(model, epoch)
        assert out.data.shape == epoch.data.shape
        assert out.latent.shape == (CFG.channels, CFG.n_patches, CFG.embed_dim)
        assert out.provenance["kind"] == "full_decode"
        assert out.provenance["epoch_ids"] == [["r0", 0]]

    def test_deterministic(self, model):
        epoch = _epochs(1)[0]
        a = full_decode(model, epoch)
        b = full_decode(model, epoch)
        assert np.array_equal(a.data, b.data)

    def test_batch_matches_single(self, model):
        epochs = _epochs(4)
        data = np.stack([e.data for e in epochs])
        batched = full_decode_batch(model, data)
        for i, e in enumerate(epochs):
            assert np.allclose(batched[i], full_decode(model, e).data, atol=1e-6)


class TestAverageLatent:
    def test_mean_of_copies_is_identity(self):
        rng = np.random.default_rng(1)
        grid = rng.normal(size=(2, 4, 8))
        assert np.array_equal(average_latent([grid.copy()]), grid)  # mean of one is exact
        assert np.allclose(average_latent([grid.copy() for _ in range(5)]), grid, atol=1e-12)

    def test_opposite_grids_cancel(self):
        rng = np.random.default_rng(2)
        grid = rng.normal(size=(2, 4, 8))
        assert np.allclose(average_latent([grid, -grid]), 0.0)

    def test_elementwise_mean(self):
        a = np.full((1, 2, 2), 1.0)
        b = np.full((1, 2, 2), 3.0)
        assert np.array_equal(average_latent([a, b]), np.full((1, 2, 2), 2.0))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        grids = [rng.normal(size=(2, 3, 4)) for _ in range(4)]
        assert np.allclose(average_latent(grids), average_latent(grids[::-1]))

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            average_latent([])


class TestGenerateAverage:
    def test_single_match_equals_full_decode_exactly(self, model):
        epochs = _epochs(5)
        target = epochs[2]
        out = generate_average(model, epochs, lambda e: e.epoch_index == 2, description="idx==2")
        reference = full_decode(model, target)
        assert np.array_equal(out.data, reference.data)
        assert out.provenance["epoch_ids"] == [["r0", 2]]

    def test_provenance_counts_matches(self, model):
        epochs = _epochs(6)
        out = generate_average(model, epochs, lambda e: e.epoch_index % 2 == 0, description="even")
        assert len(out.provenance["epoch_ids"]) == 3
        assert out.provenance["selector"] == "even"

    def test_empty_selection_names_predicate(self, model):
        with pytest.raises(DataError, match="stage==REM"):
            generate_average(model, _epochs(3), lambda e: False, description="stage==REM")

    def test_decode_latent_validates_shape(self, model):
        with pytest.raises(DataError, match="latent shape"):
            decode_latent(model, np.zeros((1, 2, 3)))


class TestNearestNeighbor:
    def test_decoded_candidate_ranks_first_with_zero_distance(self, model):
        epochs = _epochs(6)
        ref = full_decode(model, epochs[3])
        ranked = nearest_neighbor(model, ref, epochs, space="generated_signal", k=3)
        assert ranked[0][0] == ("r0", 3)
        assert ranked[0][1] == 0.0

    def test_embedding_space_with_latent_reference(self, model):
        epochs = _epochs(6)
        ref = full_decode(model, epochs[1])
        ranked = nearest_neighbor(model, ref, epochs, space="embedding", k=1)
        assert ranked[0][0] == ("r0", 1)
        assert ranked[0][1] == pytest.approx(0.0, abs=1e-6)

    def test_k_equals_total_gives_total_ordering(self, model):
        epochs = _epochs(5)
        ranked = nearest_neighbor(model, full_decode(model, epochs[0]), epochs, k=5)
        assert len(ranked) == 5
        dists = [d for _, d in ranked]
        assert dists == sorted(dists)
        assert {key for key, _ in ranked} == {e.key for e in epochs}

    def test_tie_break_by_epoch_key(self, model):
        base = _epochs(1)[0]
        twins = [
            SleepEpoch("r0", 4, base.data.copy()),
            SleepEpoch("r0", 1, base.data.copy()),
            SleepEpoch("a0", 2, base.data.copy()),
        ]
        ranked = nearest_neighbor(model, full_decode(model, base), twins, k=3)
        assert [key for key, _ in ranked] == [("a0", 2), ("r0", 1), ("r0", 4)]

    def test_k_too_large_rejected(self, model):
        with pytest.raises(DataError):
            nearest_neighbor(model, full_decode(model, _epochs(1)[0]), _epochs(2), k=3)

    def test_empty_candidates_rejected(self, model):
        with pytest.raises(DataError):
            nearest_neighbor(model, full_decode(model, _epochs(1)[0]), [], k=1)

    def test_dtw_in_embedding_space_rejected(self, model):
        epochs = _epochs(3)
        with pytest.raises(DataError):
            nearest_neighbor(model, full_decode(model, epochs[0]), epochs,
                             space="embedding", metric="dtw", k=1)


class TestOutlierRank:
    def test_perturbed_epoch_ranks_first(self, model):
        rng = np.random.default_rng(4)
        base = rng.normal(size=(CFG.channels, CFG.samples_per_epoch)).astype(np.float32)
        epochs = [SleepEpoch("r0", i, base.copy()) for i in range(5)]
        burst = base.copy()
        burst[0, 10:20] += 5.0
        epochs.append(SleepEpoch("r0", 5, burst))
        ranked = outlier_rank(model, epochs, space="generated_signal")
        assert ranked[0][0] == ("r0", 5)

    def test_two_epochs_symmetric(self, model):
        epochs = _epochs(2)
        ranked = outlier_rank(model, epochs, space="embedding")
        assert len(ranked) == 2
        assert ranked[0][1] == pytest.approx(ranked[1][1], rel=1e-5)

    def test_permutation_invariant(self, model):
        epochs = _epochs(6, seed=5)
        a = outlier_rank(model, epochs, space="embedding")
        b = outlier_rank(model, epochs[::-1], space="embedding")
        assert [k for k, _ in a] == [k for k, _ in b]

    def test_needs_two_epochs(self, model):
        with pytest.raises(DataError):
            outlier_rank(model, _epochs(1))
