"""Reproducible parallel random streams.

Streams are Philox4x64 generators (counter-based) keyed by the 128-bit pair
``(master_seed, stream_id)``, so any worker can reconstruct its stream from
the two integers alone, in any implementation of the published Philox
algorithm. Exponential variates are produced by the inverse transform
``-log(1 - u) / rate`` from the stream's uniforms, which pins the exact draw
sequence, not just the distribution.
"""

from __future__ import annotations

import numpy as np

__all__ = ["philox_stream", "exponential_from_uniform"]


def philox_stream(master_seed: int, stream_id: int) -> np.random.Generator:
    """Generator for the (master_seed, stream_id) Philox stream."""
    key = np.array([np.uint64(master_seed & (2**64 - 1)), np.uint64(stream_id & (2**64 - 1))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def exponential_from_uniform(u, rate):
    """Exp(rate) variate from a uniform in [0, 1) by inverse transform."""
    return -np.log1p(-np.asarray(u, dtype=float)) / rate
