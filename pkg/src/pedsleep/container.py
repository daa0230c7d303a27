"""Binary containers: the PSGT signal format and the model checkpoint format.

PSGT layout (native signal container):
    bytes 0..3   magic b"PSGT"
    bytes 4..7   header length L, unsigned 32-bit little-endian
    bytes 8..8+L UTF-8 JSON header: {recording_id, sample_rate,
                 channel_names[], shape [C, n], dtype "f32le", annotations[]}
    then         row-major little-endian float32 samples

Checkpoint layout (magic b"PSGC") reuses the same framing: a JSON header with
a format version, the model config, optional training metadata and a tensor
index (name/shape/dtype), followed by the tensors' raw little-endian bytes in
index order. Both containers round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import EventLabel, Recording
from .errors import FormatError

PSGT_MAGIC = b"PSGT"
CKPT_MAGIC = b"PSGC"
CKPT_VERSION = 1

_DTYPES = {
    "f32le": np.dtype("<f4"),
    "f64le": np.dtype("<f8"),
    "i64le": np.dtype("<i8"),
}


def _dtype_tag(arr: np.ndarray) -> str:
    for tag, dt in _DTYPES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return tag
    raise FormatError(f"unsupported tensor dtype {arr.dtype}; supported: {sorted(_DTYPES)}")


def _write_framed(path: Path, magic: bytes, header: dict, payload: bytes) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)


def _read_framed(path: Path, magic: bytes) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}, got {raw[:4]!r}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise FormatError(f"{path}: truncated header, declared {hlen} bytes, file has {len(raw) - 8}")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid UTF-8 JSON: {exc}") from exc
    return header, raw[8 + hlen :]


def write_recording(path: str | Path, rec: Recording, extra_header: dict | None = None) -> None:
    """Serialize a recording to a PSGT file. float32 payload, bit-exact."""
    data = np.ascontiguousarray(rec.samples, dtype="<f4")
    header = {
        "recording_id": rec.recording_id,
        "sample_rate": rec.sample_rate,
        "channel_names": list(rec.channel_names),
        "shape": [int(s) for s in data.shape],
        "dtype": "f32le",
        "annotations": [[int(i), lab.to_dict()] for i, lab in sorted(rec.annotations.items())],
    }
    if extra_header:
        header.update(extra_header)
    _write_framed(Path(path), PSGT_MAGIC, header, data.tobytes())


def read_recording(path: str | Path) -> Recording:
    """Parse a PSGT file back into a Recording."""
    header, payload = _read_framed(Path(path), PSGT_MAGIC)
    for key in ("recording_id", "sample_rate", "channel_names", "shape", "dtype"):
        if key not in header:
            raise FormatError(f"{path}: header missing required field '{key}'")
    if header["dtype"] != "f32le":
        raise FormatError(f"{path}: unsupported dtype '{header['dtype']}', expected 'f32le'")
    shape = tuple(int(s) for s in header["shape"])
    if len(shape) != 2:
        raise FormatError(f"{path}: shape must be [channels, samples], got {shape}")
    expected = shape[0] * shape[1] * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header shape implies {expected}")
    samples = np.frombuffer(payload, dtype="<f4").reshape(shape)
    annotations = {int(i): EventLabel.from_dict(d) for i, d in header.get("annotations", [])}
    return Recording(
        recording_id=header["recording_id"],
        sample_rate=float(header["sample_rate"]),
        channel_names=list(header["channel_names"]),
        samples=samples.copy(),
        annotations=annotations,
    )


def read_header(path: str | Path) -> dict:
    """Header JSON of either container (provenance inspection)."""
    raw = Path(path).read_bytes()
    if raw[:4] not in (PSGT_MAGIC, CKPT_MAGIC):
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    return json.loads(raw[8 : 8 + hlen].decode("utf-8"))


def write_checkpoint(
    path: str | Path,
    model_config: dict,
    tensors: dict[str, np.ndarray],
    meta: dict | None = None,
) -> None:
    """Write named tensors plus the model config as a versioned checkpoint."""
    index = []
    chunks = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        tag = _dtype_tag(arr)
        index.append({"name": name, "shape": [int(s) for s in arr.shape], "dtype": tag})
        chunks.append(arr.astype(_DTYPES[tag], copy=False).tobytes())
    header = {
        "format_version": CKPT_VERSION,
        "model_config": model_config,
        "meta": meta or {},
        "tensors": index,
    }
    _write_framed(Path(path), CKPT_MAGIC, header, b"".join(chunks))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Return (model_config, tensors by name, meta) from a checkpoint file."""
    header, payload = _read_framed(Path(path), CKPT_MAGIC)
    version = header.get("format_version")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}, expected {CKPT_VERSION}")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header.get("tensors", []):
        dt = _DTYPES.get(entry.get("dtype"))
        if dt is None:
            raise FormatError(f"{path}: tensor '{entry.get('name')}' has unknown dtype '{entry.get('dtype')}'")
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape)) * dt.itemsize if shape else dt.itemsize
        if offset + nbytes > len(payload):
            raise FormatError(
                f"{path}: tensor '{entry['name']}' needs {nbytes} bytes at offset {offset}, "
                f"payload has {len(payload)}"
            )
        tensors[entry["name"]] = np.frombuffer(payload[offset : offset + nbytes], dtype=dt).reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes after last tensor")
    return header["model_config"], tensors, header.get("meta", {})
