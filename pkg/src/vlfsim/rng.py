"""Counter-based random numbers keyed by (seed, trial, attempt, step, stream).

Every uniform is a pure function of its key, so a trial's randomness does not
depend on how trials are batched or which worker runs them. The encoder and
decoder share the partition stream; this is the common randomness the random
message partition needs.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV53 = 2.0**-53

STREAM_MESSAGE = 1
STREAM_PARTITION = 2
STREAM_NOISE = 3
STREAM_WALK = 4


def splitmix64(x):
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def hash_key(seed: int, *words) -> np.ndarray:
    """Fold integer words (scalars or broadcastable arrays) into 64-bit hashes."""
    h = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    for w in words:
        h = splitmix64(h ^ np.asarray(w, dtype=np.uint64))
    return h


def to_uniform(h: np.ndarray) -> np.ndarray:
    """Map 64-bit hashes to doubles in [0, 1)."""
    return (h >> _S11).astype(np.float64) * _INV53


def uniforms(seed: int, *words) -> np.ndarray:
    return to_uniform(hash_key(seed, *words))


class SharedStream:
    """The per-trial view of the common randomness used by one transmission."""

    def __init__(self, seed: int, trial: int = 0):
        self.seed = int(seed)
        self.trial = int(trial)

    def message(self, M: int) -> int:
        u = float(uniforms(self.seed, STREAM_MESSAGE, self.trial))
        return min(int(u * M), M - 1)

    def partition(self, attempt: int, step: int, M: int) -> np.ndarray:
        return uniforms(self.seed, STREAM_PARTITION, self.trial, attempt, step, np.arange(M, dtype=np.uint64))

    def noise(self, attempt: int, step: int) -> float:
        return float(uniforms(self.seed, STREAM_NOISE, self.trial, attempt, step))
