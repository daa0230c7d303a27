"""Deterministic synthetic multichannel sleep-like recordings.

Each 30-second window is driven by a hidden discrete state that picks the
frequency band and amplitude of every channel's sinusoid. Channels 0 and 1
are deterministic functions of one shared latent oscillation (up to a tiny
jitter), so imputing either one from the other is learnable by construction.
Event labels are emitted from the hidden state, which makes linear probing
solvable and gives tests a recoverable ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EventLabel, Recording, SleepStage
from .errors import DataError
from .seeding import derive_rng

# State -> stage assignment; distinct stages per state let tests recover the
# hidden state from the emitted labels.
_STAGE_CYCLE = (SleepStage.WAKE, SleepStage.N2, SleepStage.N3, SleepStage.REM, SleepStage.N1)


@dataclass(frozen=True)
class SynthConfig:
    """Shape and dynamics of the generated corpus.

    States modulate both carrier frequency (disjoint bands) and amplitude
    (geometric ladder with ratio amp_contrast), so epochs of different states
    are well separated in signal space, not just spectrally.
    """

    channels: int = 4
    sample_rate: float = 8.0
    epoch_seconds: float = 32.0
    epochs_per_recording: int = 60
    n_recordings: int = 4
    n_states: int = 3
    state_probs: tuple[float, ...] | None = None  # None -> uniform
    noise_sd: float = 0.1
    coupled_noise_sd: float = 0.02
    coupled_gain: float = 0.8
    amp_contrast: float = 2.0  # amplitude ratio between consecutive states

    @property
    def samples_per_epoch(self) -> int:
        return int(round(self.sample_rate * self.epoch_seconds))

    def validate(self) -> None:
        if self.channels < 2:
            raise DataError("synthetic generator needs >= 2 channels (imputation requires a coupled pair)")
        if not (2 <= self.n_states <= 5):
            raise DataError(f"n_states must be in [2, 5], got {self.n_states}")
        if self.state_probs is not None:
            if len(self.state_probs) != self.n_states:
                raise DataError("state_probs length must equal n_states")
            if abs(sum(self.state_probs) - 1.0) > 1e-9:
                raise DataError("state_probs must sum to 1")
        if self.epochs_per_recording < 1 or self.n_recordings < 1:
            raise DataError("need at least one epoch and one recording")


def state_label(state: int, n_states: int) -> EventLabel:
    """Map a hidden state to its emitted per-epoch label."""
    return EventLabel(
        sleep_stage=_STAGE_CYCLE[state],
        oxygen_desaturation=state == 0,
        eeg_arousal=state == 1,
        apnea=state == n_states - 1,
        hypopnea=state == n_states - 2,
    )


def stage_to_state(stage: SleepStage) -> int:
    """Invert state_label's stage assignment (test oracle helper)."""
    return _STAGE_CYCLE.index(stage)


def _state_bands(cfg: SynthConfig) -> np.ndarray:
    """Disjoint frequency bands per state, kept well under Nyquist."""
    f_lo, f_hi = 0.05 * cfg.sample_rate, 0.35 * cfg.sample_rate
    edges = np.linspace(f_lo, f_hi, cfg.n_states + 1)
    return np.stack([edges[:-1], edges[1:]], axis=1)


def synth_generate(cfg: SynthConfig, seed: int) -> list[Recording]:
    """Generate the corpus. Pure function of (cfg, seed)."""
    cfg.validate()
    bands = _state_bands(cfg)
    table_rng = derive_rng(seed, "synth", "tables")
    # Per (channel, state) carrier frequency inside the state band, and amplitude.
    freq = np.empty((cfg.channels, cfg.n_states))
    amp = np.empty((cfg.channels, cfg.n_states))
    state_scale = cfg.amp_contrast ** np.arange(cfg.n_states)
    for s in range(cfg.n_states):
        lo, hi = bands[s]
        freq[:, s] = table_rng.uniform(lo, hi, size=cfg.channels)
        amp[:, s] = state_scale[s] * table_rng.uniform(0.8, 1.2, size=cfg.channels)
    # The coupled pair rides one shared latent: same frequency, same phase.
    freq[1, :] = freq[0, :]
    amp[1, :] = cfg.coupled_gain * amp[0, :]

    probs = np.full(cfg.n_states, 1.0 / cfg.n_states) if cfg.state_probs is None else np.asarray(cfg.state_probs)
    T = cfg.samples_per_epoch
    t = np.arange(T) / cfg.sample_rate

    recordings = []
    for r in range(cfg.n_recordings):
        rec_rng = derive_rng(seed, "synth", "recording", r)
        states = rec_rng.choice(cfg.n_states, size=cfg.epochs_per_recording, p=probs)
        chunks = np.empty((cfg.channels, cfg.epochs_per_recording * T), dtype=np.float64)
        annotations = {}
        for e, s in enumerate(states):
            shared_phase = rec_rng.uniform(0.0, 2.0 * np.pi)
            phases = rec_rng.uniform(0.0, 2.0 * np.pi, size=cfg.channels)
            phases[0] = shared_phase
            phases[1] = shared_phase
            noise = rec_rng.normal(0.0, 1.0, size=(cfg.channels, T))
            block = amp[:, s, None] * np.sin(2.0 * np.pi * freq[:, s, None] * t[None, :] + phases[:, None])
            block[0] += cfg.coupled_noise_sd * noise[0]
            block[1] += cfg.coupled_noise_sd * noise[1]
            block[2:] += cfg.noise_sd * noise[2:]
            chunks[:, e * T : (e + 1) * T] = block
            annotations[e] = state_label(int(s), cfg.n_states)
        recordings.append(
            Recording(
                recording_id=f"synth-{seed}-{r:03d}",
                sample_rate=cfg.sample_rate,
                channel_names=[f"CH{c:02d}" for c in range(cfg.channels)],
                samples=chunks.astype(np.float32),
                annotations=annotations,
            )
        )
    return recordings
