"""Counter-based randomness.

Every random draw is a pure function of (master seed, stream tags, index),
computed with the splitmix64 finalizer:

    key  = mix(seed, tag_1, ..., tag_k)      # fold tags left to right
    u(i) = (splitmix64(key ^ splitmix64(i)) >> 11) * 2**-53

`mix(a, b) = splitmix64(a ^ (b + 0x9E3779B97F4A7C15))`. Because draws are
indexed rather than consumed from a sequential stream, results do not depend
on iteration order or on how work is split across trials, phases or
components.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix(seed: int, *tags: int) -> int:
    key = splitmix64(seed & _MASK)
    for t in tags:
        key = splitmix64(key ^ ((int(t) + _GOLDEN) & _MASK))
    return key


def _splitmix64_array(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(_GOLDEN)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def uniforms(seed: int, tag: int | tuple[int, ...], index: np.ndarray) -> np.ndarray:
    """Uniform reals in [0, 1), one per entry of `index`, for stream (seed, tag)."""
    tags = tag if isinstance(tag, tuple) else (tag,)
    key = np.uint64(mix(seed, *tags))
    idx = _splitmix64_array(np.asarray(index, dtype=np.int64).astype(np.uint64))
    bits = _splitmix64_array(idx ^ key)
    return (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


class Stream:
    """A named substream; `child` derives sub-substreams, `uniforms` draws by index."""

    def __init__(self, seed: int, *tags: int):
        self.seed = int(seed) & _MASK
        self.tags = tuple(int(t) for t in tags)

    def child(self, *tags: int) -> "Stream":
        return Stream(self.seed, *self.tags, *tags)

    def uniforms(self, index: np.ndarray) -> np.ndarray:
        return uniforms(self.seed, self.tags, index)

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(mix(self.seed, *self.tags))

    def __repr__(self) -> str:
        return f"Stream(seed={self.seed}, tags={self.tags})"
