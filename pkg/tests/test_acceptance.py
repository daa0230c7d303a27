"""Acceptance gate: one test per primary criterion, at stated tolerances.

Each test prints one `ACCEPTANCE <criterion>: PASS` line on success; the
terminal summary hook in conftest repeats a PASS/FAIL line per criterion.
Paper-scale table values are data-dependent and out of scope; these are the
property-based criteria plus desk-scale analogues on the synthetic corpus.
"""

import json
import time

import numpy as np
import pytest
import scipy.stats
import torch
from sklearn.metrics import f1_score, roc_auc_score

from conftest import DESK_MODEL
from gradcheck import finite_difference_check
from oracle_dtw import all_sequences, brute_force_dtw_batch
from pedsleep import container
from pedsleep.analysis import cohort_silhouette_ci, cohort_ttest, distance_correlation, shuffled_baseline
from pedsleep.cli import main as cli_main
from pedsleep.data import EventLabel, Recording, SleepStage
from pedsleep.errors import PedsleepError
from pedsleep.impute import evaluate_imputation, impute_channel
from pedsleep.metrics import auroc, dtw, f1, pearson, silhouette, welch_t
from pedsleep.model import (
    MaskedAutoencoder,
    ModelConfig,
    embed_epochs,
    patchify,
    reconstruction_loss,
    sample_mask,
    unpatchify,
)
from pedsleep.probe import ProbeConfig, evaluate_probe, select_threshold, task_labels, train_probe
from pedsleep.seeding import derive_rng
from test_edf import write_edf


def _ok(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS")


# ---------------------------------------------------------------------------
# 1. metric oracle suite
# ---------------------------------------------------------------------------

class TestMetricOracleSuite:
    def test_metric_oracles(self):
        started = time.perf_counter()

        # DTW: exhaustive brute-force enumeration, all pairs of length <= 5
        # over the alphabet {0, 1, 2}.
        seqs = all_sequences((0.0, 1.0, 2.0), 5)
        by_len: dict[int, list[np.ndarray]] = {}
        for s in seqs:
            by_len.setdefault(len(s), []).append(s)
        checked = 0
        for la, group_a in by_len.items():
            arr_a = np.stack(group_a)
            for lb, group_b in by_len.items():
                arr_b = np.stack(group_b)
                ia, ib = np.meshgrid(np.arange(len(group_a)), np.arange(len(group_b)), indexing="ij")
                pa = arr_a[ia.ravel()]
                pb = arr_b[ib.ravel()]
                expected = brute_force_dtw_batch(pa, pb)
                actual = np.array([dtw(a, b) for a, b in zip(pa, pb)])
                assert np.allclose(actual, expected, atol=1e-12)
                checked += len(pa)
        assert checked == 363 * 363

        # Silhouette: the 4-point line example, to 1e-12.
        result = silhouette(np.array([[0.0], [1.0], [10.0], [11.0]]), [0, 0, 1, 1])
        expected = np.array([9.5 / 10.5, 8.5 / 9.5, 8.5 / 9.5, 9.5 / 10.5])
        assert np.allclose(result.scores, expected, atol=1e-12)
        assert abs(result.mean_score - expected.mean()) <= 1e-12

        # pearson / welch_t / f1 / auroc on 100 random small instances each.
        for trial in range(100):
            rng = np.random.default_rng(10_000 + trial)
            n = int(rng.integers(3, 40))
            x, y = rng.normal(size=n), rng.normal(size=n)
            assert pearson(x, y) == pytest.approx(scipy.stats.pearsonr(x, y).statistic, abs=1e-10)

            a = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), int(rng.integers(2, 30)))
            b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), int(rng.integers(2, 30)))
            t, dof, p = welch_t(a, b)
            ref = scipy.stats.ttest_ind(a, b, equal_var=False)
            assert t == pytest.approx(ref.statistic, rel=1e-9)
            assert p == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-300)

            m = int(rng.integers(4, 40))
            yt, yp = rng.integers(0, 2, m), rng.integers(0, 2, m)
            assert f1(yt, yp) == pytest.approx(f1_score(yt, yp, zero_division=0), abs=1e-12)

            yt = rng.integers(0, 2, m)
            yt[:2] = [0, 1]
            scores = np.round(rng.uniform(size=m), 2)
            assert auroc(yt, scores) == pytest.approx(roc_auc_score(yt, scores), abs=1e-12)

        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"metric oracle suite took {elapsed:.1f}s"
        _ok("metric-oracle-suite")


# ---------------------------------------------------------------------------
# 2. model correctness
# ---------------------------------------------------------------------------

class TestModelCorrectness:
    def test_model_correctness(self):
        started = time.perf_counter()

        # patchify/unpatchify exact round trip
        rng = np.random.default_rng(0)
        x = rng.normal(size=(16, 3840)).astype(np.float32)
        assert np.array_equal(unpatchify(patchify(x, 8)), x)

        # exact mask counts at m=0.5 on the full-scale token grid
        paper = ModelConfig()
        mask = sample_mask(paper, derive_rng(1, "acc-mask"))
        assert paper.n_tokens == 7680
        assert mask.count == 3840

        # masked-only loss invariance
        target = torch.from_numpy(rng.normal(size=(1, 4, 8, 8)))
        recon = torch.from_numpy(rng.normal(size=(1, 4, 8, 8)))
        loss_mask = np.zeros((4, 8), dtype=bool)
        loss_mask[1, :4] = True
        base = reconstruction_loss(recon, target, loss_mask).item()
        tampered = recon.clone()
        tampered[0, 3, 7] += 1e6  # unmasked position
        assert reconstruction_loss(tampered, target, loss_mask).item() == base

        # finite-difference gradient check on the tiny config
        tiny = ModelConfig(channels=2, samples_per_epoch=32, patch_size=4, embed_dim=8,
                           enc_layers=1, dec_layers=1, num_heads=2, mlp_ratio=2.0, seed=0)
        model = MaskedAutoencoder(tiny, dtype=torch.float64)
        errors = finite_difference_check(
            model, rng.normal(size=(1, 2, 32)), sample_mask(tiny, derive_rng(2, "acc-grad"))
        )
        worst = max(errors.values())
        assert worst <= 1e-3, f"worst gradient relative error {worst:.2e}"

        elapsed = time.perf_counter() - started
        assert elapsed < 120.0, f"model correctness took {elapsed:.1f}s"
        _ok("model-correctness")


# ---------------------------------------------------------------------------
# 3. desk-scale SSL
# ---------------------------------------------------------------------------

class TestDeskScaleSSL:
    def test_desk_scale_ssl(self, trained_desk):
        log = trained_desk["log"]
        cfg = DESK_MODEL
        assert (cfg.channels, cfg.samples_per_epoch, cfg.patch_size, cfg.embed_dim) == (4, 256, 8, 16)
        assert cfg.enc_layers == cfg.dec_layers == 2
        initial = log.val_losses[0]
        at_2000 = log.val_losses[4]  # validation after 2,000 steps (4 epochs x 500)
        assert log.val_iterations[4] == 2000
        assert at_2000 < 0.5 * initial, f"val at 2k steps {at_2000:.4f} vs initial {initial:.4f}"
        assert at_2000 < 1.0, "must beat the unit-variance mean-imputation analogue"
        assert trained_desk["train_seconds"] < 600.0
        _ok("desk-scale-ssl")


# ---------------------------------------------------------------------------
# 4. probing
# ---------------------------------------------------------------------------

def _embed_split(model, subset, task):
    emb, _ = embed_epochs(model, np.stack([e.data for e in subset]))
    labels = task_labels([e.label for e in subset], task)
    keep = labels >= 0
    return emb[keep], labels[keep]


def _assert_threshold_optimal(probe, emb_val, labels_val, threshold):
    scores = probe.scores(emb_val)[:, 1]
    achieved = f1(labels_val, (scores >= threshold).astype(int))
    uniq = np.unique(scores)
    candidates = np.concatenate([uniq, (uniq[:-1] + uniq[1:]) / 2.0]) if len(uniq) > 1 else uniq
    best = max(f1(labels_val, (scores >= c).astype(int)) for c in candidates)
    assert achieved >= best - 1e-12


class TestProbing:
    def test_probing(self, trained_desk, desk_corpus):
        model = trained_desk["model"]
        binary_tasks = ("oxygen_desaturation", "eeg_arousal", "apnea", "hypopnea", "apnea_hypopnea")
        results = {}
        for task in binary_tasks:
            x_tr, y_tr = _embed_split(model, desk_corpus["train"], task)
            x_va, y_va = _embed_split(model, desk_corpus["val"], task)
            x_te, y_te = _embed_split(model, desk_corpus["test"], task)
            cfg = ProbeConfig(task=task, batch_size=64, lr=1e-3, epochs=2,
                              iterations_per_epoch=300, seed=1)
            probe = train_probe(x_tr, y_tr, cfg)
            probe.threshold = select_threshold(probe, x_va, y_va)
            _assert_threshold_optimal(probe, x_va, y_va, probe.threshold)
            report = evaluate_probe(probe, x_te, y_te)
            results[task] = report
            assert report["f1"] > report["prevalence"], (
                f"{task}: F1 {report['f1']:.3f} does not beat prevalence {report['prevalence']:.3f}"
            )
        easy = results["oxygen_desaturation"]
        assert easy["auroc"] >= 0.9, f"easy-task AUC {easy['auroc']:.3f} below 0.9"
        _ok("probing")


# ---------------------------------------------------------------------------
# 5. cohort analysis
# ---------------------------------------------------------------------------

class TestCohortAnalysis:
    def test_cohort_analysis(self):
        rng = np.random.default_rng(42)
        # planted clusters: well separated relative to sqrt(2*dim) intra spread
        a = rng.normal(size=(200, 6))
        b = rng.normal(size=(200, 6))
        b[:, 0] += 30.0
        true_result = cohort_silhouette_ci(a, b, n_per_cohort=60, repeats=100, seed=7)
        shuffles = shuffled_baseline(a, b, n_per_cohort=60, repeats=100, n_shuffles=20, seed=7)
        assert len(shuffles) == 20
        assert all(not true_result.overlaps(s) for s in shuffles), "true CI must be disjoint from all shuffles"
        tests = cohort_ttest(true_result, shuffles)
        assert all(p < 1e-10 for _, _, p in tests), f"max p {max(p for _, _, p in tests):.2e}"

        # exchangeable cohorts: overlapping CIs containing ~0
        c = rng.normal(size=(200, 6))
        d = rng.normal(size=(200, 6))
        null_result = cohort_silhouette_ci(c, d, n_per_cohort=60, repeats=100, seed=8)
        null_shuffles = shuffled_baseline(c, d, n_per_cohort=60, repeats=100, n_shuffles=20, seed=8)
        everything = [null_result] + null_shuffles
        for r in everything:
            assert r.ci_lo - 0.05 <= 0.0 <= r.ci_hi + 0.05
            assert abs(r.mean_score) < 0.05
        assert all(
            s.ci_lo - 0.05 <= t.ci_hi + 0.05 and t.ci_lo - 0.05 <= s.ci_hi + 0.05
            for s in everything for t in everything
        )
        _ok("cohort-analysis")


# ---------------------------------------------------------------------------
# 6. distance correlation
# ---------------------------------------------------------------------------

class TestDistanceCorrelation:
    def test_distance_correlation(self, trained_desk, desk_corpus):
        model = trained_desk["model"]
        test_epochs = desk_corpus["test"]
        report_e = distance_correlation(model, test_epochs, metric="euclidean",
                                        n_samples=40, max_pairs=2000, seed=9)
        assert report_e.rho >= 0.7, f"euclidean rho {report_e.rho:.3f}"
        report_d = distance_correlation(model, test_epochs, metric="dtw",
                                        n_samples=40, max_pairs=2000, seed=9)
        assert report_d.rho >= 0.7, f"dtw rho {report_d.rho:.3f}"
        with pytest.raises(PedsleepError):
            distance_correlation(model, test_epochs, n_samples=2, seed=10)
        _ok("distance-correlation")


# ---------------------------------------------------------------------------
# 7. imputation
# ---------------------------------------------------------------------------

class TestImputation:
    def test_imputation(self, trained_desk, desk_corpus):
        model = trained_desk["model"]
        test_epochs = desk_corpus["test"]

        # strict information barrier on the trained model
        epoch = test_epochs[0]
        for channel in range(DESK_MODEL.channels):
            zeroed = epoch.data.copy()
            zeroed[channel] = 0.0
            assert np.array_equal(
                impute_channel(model, epoch, channel),
                impute_channel(model, zeroed, channel),
            ), f"information barrier violated for channel {channel}"

        report = evaluate_imputation(model, test_epochs, n_samples=30, seed=4,
                                     channel_names=[f"CH{c:02d}" for c in range(4)])
        # Table-style schema: one row per channel, mean/SD of MSE and DTW.
        assert report.n_samples == 30
        assert len(report.rows) == DESK_MODEL.channels
        payload = report.to_dict()
        for row in payload["channels"]:
            assert {"channel", "mean_mse", "sd_mse", "mean_dtw", "sd_dtw"} <= set(row)
        # coupled channels (0 <-> 1 share a latent) beat the mean-imputation
        # baseline of 1.0 on normalized signals
        assert report.rows[0].mean_mse < 1.0
        assert report.rows[1].mean_mse < 1.0
        _ok("imputation")


# ---------------------------------------------------------------------------
# 8. determinism
# ---------------------------------------------------------------------------

TINY_CLI_CONFIG = {
    "channels": 4, "samples_per_epoch": 256, "patch_size": 8, "embed_dim": 16,
    "enc_layers": 1, "dec_layers": 1, "num_heads": 2, "model_seed": 0,
    "lr": 1e-3, "batch_size": 8, "train_epochs": 2, "iterations_per_epoch": 10,
    "train_seed": 5, "split_seed": 3, "split_by": "recording",
}


class TestDeterminism:
    def test_determinism(self, tmp_path):
        synth_args = ["data", "synth", "--channels", "4", "--sample-rate", "8",
                      "--epoch-seconds", "32", "--epochs-per-recording", "10",
                      "--recordings", "3", "--states", "3", "--seed", "11"]
        data_a, data_b = tmp_path / "data-a", tmp_path / "data-b"
        assert cli_main(synth_args + ["--out", str(data_a)]) == 0
        assert cli_main(synth_args + ["--out", str(data_b)]) == 0
        for pa in sorted(data_a.glob("*.psgt")):
            pb = data_b / pa.name
            assert pa.read_bytes() == pb.read_bytes(), f"synth not reproducible: {pa.name}"

        config = tmp_path / "config.json"
        config.write_text(json.dumps(TINY_CLI_CONFIG))
        run_a, run_b = tmp_path / "run-a", tmp_path / "run-b"
        for run in (run_a, run_b):
            assert cli_main(["pretrain", "--config", str(config), "--data", str(data_a),
                             "--out", str(run), "--deterministic"]) == 0
        for name in ("checkpoint_final.psgc", "checkpoint_best.psgc", "trainlog.csv"):
            assert (run_a / name).read_bytes() == (run_b / name).read_bytes(), name

        emb_a, emb_b = tmp_path / "emb-a", tmp_path / "emb-b"
        for out in (emb_a, emb_b):
            assert cli_main(["embed", "--ckpt", str(run_a / "checkpoint_final.psgc"),
                             "--data", str(data_a), "--out", str(out), "--deterministic"]) == 0
        assert (emb_a / "embeddings.npz").read_bytes() == (emb_b / "embeddings.npz").read_bytes()

        imp_a, imp_b = tmp_path / "imp-a", tmp_path / "imp-b"
        for out in (imp_a, imp_b):
            assert cli_main(["impute", "eval", "--ckpt", str(run_a / "checkpoint_final.psgc"),
                             "--data", str(data_a), "--n", "4", "--seed", "2",
                             "--out", str(out), "--deterministic"]) == 0
        assert (imp_a / "imputation.json").read_bytes() == (imp_b / "imputation.json").read_bytes()
        _ok("determinism")


# ---------------------------------------------------------------------------
# 9. format round trips
# ---------------------------------------------------------------------------

class TestFormatRoundTrips:
    def test_format_round_trips(self, tmp_path):
        # PSGT container
        rng = np.random.default_rng(3)
        rec = Recording(
            recording_id="fmt",
            sample_rate=128.0,
            channel_names=["A", "B"],
            samples=rng.normal(size=(2, 777)).astype(np.float32),
            annotations={0: EventLabel(sleep_stage=SleepStage.N3, hypopnea=True)},
        )
        path = tmp_path / "fmt.psgt"
        container.write_recording(path, rec)
        back = container.read_recording(path)
        assert back.samples.tobytes() == rec.samples.tobytes()
        assert back.annotations == rec.annotations
        assert back.channel_names == rec.channel_names

        # checkpoint container
        tensors = {
            "w": rng.normal(size=(7, 3)).astype(np.float32),
            "v": rng.normal(size=(5,)).astype(np.float64),
            "steps": np.array([42], dtype=np.int64),
        }
        ck = tmp_path / "fmt.psgc"
        container.write_checkpoint(ck, {"embed_dim": 8}, tensors, meta={"k": 1})
        cfg, back_tensors, meta = container.read_checkpoint(ck)
        assert cfg == {"embed_dim": 8} and meta == {"k": 1}
        for name, arr in tensors.items():
            assert back_tensors[name].tobytes() == arr.tobytes()
            assert back_tensors[name].dtype == arr.dtype

        # EDF: crafted 2-signal fixture, hand-computed linear scaling
        digital = np.array([-32768, 0, 32767, 100], dtype=np.int16)
        edf = write_edf(tmp_path / "fmt.edf", ["SIG A", "SIG B"],
                        [digital, digital], [4, 4], 1)
        from pedsleep.edf import read_edf

        parsed = read_edf(edf)
        gain = 500.0 / 65535.0
        offset = -250.0 - gain * (-32768.0)
        for sig in parsed["signals"]:
            assert sig[0] == pytest.approx(-250.0, abs=1e-9)
            assert sig[1] == pytest.approx(gain * 0 + offset, abs=1e-12)
            assert sig[1] == pytest.approx(0.0038, abs=1e-4)
            assert sig[2] == pytest.approx(250.0, abs=1e-9)
            assert sig[3] == pytest.approx(gain * 100 + offset, abs=1e-12)
        _ok("format-round-trips")
