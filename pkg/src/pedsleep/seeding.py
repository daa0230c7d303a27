"""Deterministic RNG derivation.

Every stochastic operation takes an explicit seed or Generator; nothing uses
global RNG state. Streams are derived from (seed, *labels) so that parallel
and serial execution, as well as resumed runs, draw identical values.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

ENV_SEED_VAR = "PEDSLEEP_SEED"
DEFAULT_SEED = 0


def derive_rng(seed: int, *labels: object) -> np.random.Generator:
    """Return a Generator keyed by the seed plus a label path.

    Labels may be ints or strings; strings are hashed to stable 64-bit words
    so stream identity does not depend on Python's randomized hash.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, (int, np.integer)):
            words.append(int(label) & 0xFFFFFFFFFFFFFFFF)
        else:
            digest = hashlib.sha256(str(label).encode("utf-8")).digest()
            words.append(int.from_bytes(digest[:8], "little"))
    return np.random.default_rng(np.random.SeedSequence(words))


def resolve_seed(seed: int | None) -> int:
    """Explicit seed, else the PEDSLEEP_SEED env var, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(ENV_SEED_VAR)
    if env is not None:
        return int(env)
    return DEFAULT_SEED


def array_key(arr: np.ndarray) -> int:
    """Stable 64-bit key of an array's contents (used for order-independent
    stream assignment, e.g. sampling the same subset from a cohort no matter
    which argument slot it arrives in)."""
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(np.ascontiguousarray(arr).tobytes())
    return int.from_bytes(h.digest()[:8], "little")
