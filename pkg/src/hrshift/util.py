"""Shared plumbing: error types and named, reproducible RNG substreams."""
from __future__ import annotations

import zlib

import numpy as np

__all__ = [
    "ConfigError",
    "DataError",
    "PosiFailure",
    "substream",
]


class ConfigError(ValueError):
    """A study configuration is malformed or inconsistent."""


class DataError(ValueError):
    """Input data violate a documented precondition."""


class PosiFailure(RuntimeError):
    """The post-selection sampler failed for every unit it was asked about."""


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("substream integer keys must be non-negative")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"substream keys must be str or int, got {type(key)!r}")


def substream(master_seed: int, *keys) -> np.random.Generator:
    """Return an independent generator for (master seed, named purpose).

    Substreams are identified by a mix of strings (hashed stably with crc32)
    and non-negative integers (subject index, repetition index, ...), so the
    same master seed always reproduces the same stream for the same purpose
    while distinct purposes are statistically independent.
    """
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=spawn_key))
