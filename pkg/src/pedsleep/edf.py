"""Minimal EDF reader: fixed-width ASCII header, 16-bit little-endian samples.

Signals are converted to physical units with the per-signal linear mapping
declared in the header, resampled to one common rate, and matched against the
canonical channel list (case-insensitive, with an alias table for the naming
variations seen in clinical exports).
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .data import CANONICAL_CHANNELS, DEFAULT_SAMPLE_RATE, Recording
from .errors import FormatError

logger = logging.getLogger(__name__)

# Common clinical spellings -> canonical names. Keys are compared after
# lowercasing and whitespace collapse.
DEFAULT_ALIASES = {
    "spo2": "SPO2",
    "sao2": "SPO2",
    "capno": "CAPNO",
    "etco2": "CAPNO",
    "resp thor": "RESP THORACIC",
    "thor": "RESP THORACIC",
    "resp abd": "RESP ABDOMINAL",
    "abdo": "RESP ABDOMINAL",
    "cflow": "C-FLOW",
    "c flow": "C-FLOW",
    "snore": "SNORE",
    "chin1-chin2": "EMG CHIN1-CHIN2",
    "emg chin": "EMG CHIN1-CHIN2",
    "loc-m2": "EOG LOC-M2",
    "roc-m1": "EOG ROC-M1",
}


def _norm_name(name: str) -> str:
    return " ".join(name.lower().split())


class _HeaderReader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, field: str) -> str:
        chunk = self.raw[self.pos : self.pos + n]
        if len(chunk) < n:
            raise FormatError(
                f"{self.path}: truncated header while reading '{field}' "
                f"(needed {n} bytes at offset {self.pos}, file ends first)"
            )
        self.pos += n
        return chunk.decode("ascii", errors="replace").strip()

    def take_int(self, n: int, field: str) -> int:
        text = self.take(n, field)
        try:
            return int(text)
        except ValueError as exc:
            raise FormatError(f"{self.path}: header field '{field}' is not an integer: {text!r}") from exc

    def take_float(self, n: int, field: str) -> float:
        text = self.take(n, field)
        try:
            return float(text)
        except ValueError as exc:
            raise FormatError(f"{self.path}: header field '{field}' is not a number: {text!r}") from exc


def read_edf(path: str | Path) -> dict:
    """Parse an EDF file into {labels, signals (physical units), rates, ...}.

    Raises FormatError naming the offending header field on malformed input.
    """
    path = Path(path)
    raw = path.read_bytes()
    h = _HeaderReader(raw, path)
    h.take(8, "version")
    h.take(80, "patient_id")
    h.take(80, "recording_id")
    h.take(8, "startdate")
    h.take(8, "starttime")
    header_bytes = h.take_int(8, "header_bytes")
    h.take(44, "reserved")
    n_records = h.take_int(8, "n_records")
    record_seconds = h.take_float(8, "record_duration")
    ns = h.take_int(4, "n_signals")
    if ns <= 0:
        raise FormatError(f"{path}: header field 'n_signals' must be positive, got {ns}")
    if n_records < 0:
        raise FormatError(f"{path}: header field 'n_records' must be nonnegative, got {n_records}")
    if record_seconds <= 0:
        raise FormatError(f"{path}: header field 'record_duration' must be positive, got {record_seconds}")

    labels = [h.take(16, f"label[{i}]") for i in range(ns)]
    _ = [h.take(80, f"transducer[{i}]") for i in range(ns)]
    _ = [h.take(8, f"physical_dim[{i}]") for i in range(ns)]
    phys_min = np.array([h.take_float(8, f"physical_min[{i}]") for i in range(ns)])
    phys_max = np.array([h.take_float(8, f"physical_max[{i}]") for i in range(ns)])
    dig_min = np.array([h.take_int(8, f"digital_min[{i}]") for i in range(ns)], dtype=np.float64)
    dig_max = np.array([h.take_int(8, f"digital_max[{i}]") for i in range(ns)], dtype=np.float64)
    _ = [h.take(80, f"prefilter[{i}]") for i in range(ns)]
    samples_per_record = np.array([h.take_int(8, f"samples_per_record[{i}]") for i in range(ns)])
    _ = [h.take(32, f"reserved[{i}]") for i in range(ns)]

    expected_header = 256 + 256 * ns
    if header_bytes != expected_header:
        raise FormatError(
            f"{path}: header field 'header_bytes' is {header_bytes}, "
            f"but {ns} signals imply {expected_header}"
        )
    if np.any(samples_per_record <= 0):
        bad = int(np.flatnonzero(samples_per_record <= 0)[0])
        raise FormatError(f"{path}: header field 'samples_per_record[{bad}]' must be positive")
    zero_range = dig_max == dig_min
    if zero_range.any():
        bad = int(np.flatnonzero(zero_range)[0])
        raise FormatError(
            f"{path}: header fields 'digital_min[{bad}]'/'digital_max[{bad}]' define a zero "
            f"digital range ({int(dig_min[bad])})"
        )

    record_nbytes = int(samples_per_record.sum()) * 2
    body = raw[header_bytes:]
    expected_bytes = n_records * record_nbytes
    if len(body) < expected_bytes:
        raise FormatError(
            f"{path}: truncated data records: expected {expected_bytes} bytes "
            f"for {n_records} records, found {len(body)}"
        )

    gain = (phys_max - phys_min) / (dig_max - dig_min)
    offset = phys_min - gain * dig_min
    signals = [np.empty(n_records * int(spr), dtype=np.float64) for spr in samples_per_record]
    pos = 0
    for rec_i in range(n_records):
        for sig_i, spr in enumerate(samples_per_record):
            spr = int(spr)
            digital = np.frombuffer(body, dtype="<i2", count=spr, offset=pos)
            signals[sig_i][rec_i * spr : (rec_i + 1) * spr] = gain[sig_i] * digital + offset[sig_i]
            pos += spr * 2

    return {
        "labels": labels,
        "signals": signals,
        "rates": samples_per_record / record_seconds,
        "n_records": n_records,
        "record_seconds": record_seconds,
        "recording_id": path.stem,
    }


def _resample(x: np.ndarray, rate_in: float, rate_out: float) -> np.ndarray:
    """Linear-interpolation resampling onto the target rate's time grid."""
    if abs(rate_in - rate_out) < 1e-12:
        return x
    duration = len(x) / rate_in
    n_out = int(np.floor(duration * rate_out))
    t_out = np.arange(n_out) / rate_out
    t_in = np.arange(len(x)) / rate_in
    return np.interp(t_out, t_in, x)


def ingest_edf(
    path: str | Path,
    target_rate: float = DEFAULT_SAMPLE_RATE,
    canonical: tuple[str, ...] = CANONICAL_CHANNELS,
    aliases: dict[str, str] | None = None,
) -> Recording:
    """Load an EDF file as a Recording on the canonical channel grid.

    Channels are matched case-insensitively, through the alias table for
    non-standard spellings. Unmatched signals are dropped; canonical channels
    absent from the file are logged. All kept channels are resampled to
    target_rate and truncated to a common length.
    """
    parsed = read_edf(path)
    alias_map = {_norm_name(k): v for k, v in (aliases or DEFAULT_ALIASES).items()}
    canon_by_norm = {_norm_name(name): name for name in canonical}

    matched: dict[str, np.ndarray] = {}
    dropped = []
    for label, signal, rate in zip(parsed["labels"], parsed["signals"], parsed["rates"]):
        norm = _norm_name(label)
        name = canon_by_norm.get(norm) or alias_map.get(norm)
        if name is None or name not in canonical or name in matched:
            dropped.append(label)
            continue
        matched[name] = _resample(signal, float(rate), target_rate)
    missing = [name for name in canonical if name not in matched]
    if dropped:
        logger.info("%s: dropped %d unmatched signals: %s", path, len(dropped), dropped)
    if missing:
        logger.warning("%s: missing canonical channels: %s", path, missing)
    if not matched:
        raise FormatError(f"{path}: no signals matched the canonical channel list")

    names = [name for name in canonical if name in matched]
    n = min(len(matched[name]) for name in names)
    samples = np.stack([matched[name][:n] for name in names]).astype(np.float32)
    return Recording(
        recording_id=parsed["recording_id"],
        sample_rate=target_rate,
        channel_names=names,
        samples=samples,
    )
