"""Shared fixtures: the desk-scale synthetic corpus and a trained model.

Training runs once per session (a few minutes of CPU); everything downstream
(probing, analysis, generation, imputation, acceptance) reuses it.
"""

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracle helpers importable as modules

from pedsleep.data import normalize_recording, segment_epochs, split_dataset
from pedsleep.model import ModelConfig
from pedsleep.pretrain import TrainConfig, train
from pedsleep.synth import SynthConfig, synth_generate

DESK_SYNTH = SynthConfig(
    channels=4,
    sample_rate=8.0,
    epoch_seconds=32.0,
    epochs_per_recording=60,
    n_recordings=6,
    n_states=3,
)
DESK_SEED = 11

DESK_MODEL = ModelConfig(
    channels=4,
    samples_per_epoch=256,
    patch_size=8,
    embed_dim=16,
    enc_layers=2,
    dec_layers=2,
    num_heads=4,
    seed=0,
)
# 10 epochs x 500 iterations: the acceptance SSL criterion reads the
# 2,000-step point of this log; generation-quality tests use the final model.
DESK_TRAIN = TrainConfig(
    lr=1e-3,
    weight_decay=5e-4,
    batch_size=16,
    epochs=10,
    iterations_per_epoch=500,
    seed=5,
)


@pytest.fixture(scope="session")
def desk_corpus():
    """Normalized epochs plus a recording-level split of the synthetic set."""
    recordings = [normalize_recording(r) for r in synth_generate(DESK_SYNTH, DESK_SEED)]
    epochs = [e for r in recordings for e in segment_epochs(r, epoch_seconds=DESK_SYNTH.epoch_seconds)]
    split = split_dataset(epochs, seed=3, by="recording")
    return {
        "recordings": recordings,
        "epochs": epochs,
        "split": split,
        "train": [epochs[i] for i in split.train],
        "val": [epochs[i] for i in split.val],
        "test": [epochs[i] for i in split.test],
    }


@pytest.fixture(scope="session")
def trained_desk(desk_corpus):
    """The desk-scale SSL run shared by downstream tests; its log carries the
    2,000-step point the SSL acceptance criterion reads."""
    started = time.perf_counter()
    model, log = train(
        DESK_TRAIN,
        DESK_MODEL,
        desk_corpus["train"],
        desk_corpus["val"],
        deterministic=True,
    )
    elapsed = time.perf_counter() - started
    return {"model": model, "log": log, "train_seconds": elapsed}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", None) != "call":
                continue
            if "test_acceptance.py" not in report.nodeid:
                continue
            name = report.nodeid.split("::")[-1].replace("test_", "", 1).replace("_", "-")
            rows.append((name, outcome == "passed"))
    if rows:
        terminalreporter.section("acceptance criteria")
        for name, passed in sorted(rows):
            terminalreporter.write_line(f"{name}: {'PASS' if passed else 'FAIL'}")
