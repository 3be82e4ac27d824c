"""Deterministic random-number streams for reproducible simulations.

Every stochastic draw in the package goes through a Philox counter-based
generator keyed by (seed, *stream). Streams derived from the same seed but
different stream indices are statistically independent, so per-pixel or
per-trial work can be evaluated in any order (or in parallel) and still
produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_rng"]


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return an independent generator for the given (seed, stream...) key.

    seed     -- the experiment-level seed (any non-negative integer)
    stream   -- integer indices identifying the consumer, e.g.
                (pixel_row, pixel_col) or (trial_index,)
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
