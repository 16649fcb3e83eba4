"""Counter-based random streams.

Every random quantity in the package is drawn from a Philox generator keyed
by ``(seed, stream)``. Philox is counter-based: the i-th draw of a keyed
stream is a pure function of (seed, stream, i), independent of how the work
is scheduled across threads. Consumers draw whole blocks up front and index
into them, so serial and parallel execution see identical numbers.

Stream identifiers are fixed constants; changing them changes every
downstream artifact, so treat them as part of the on-disk contract.
"""

from __future__ import annotations

import numpy as np

# Dataset plumbing
STREAM_SPLIT = 0
# Conformal scoring: calibration and test u-draws are disjoint sub-streams.
STREAM_CAL_U = 1
STREAM_TEST_U = 2
# Metrics
STREAM_WSC = 3
# Synthetic generation
STREAM_SYNTH_LABELS = 10
STREAM_SYNTH_NOISE = 11
STREAM_SYNTH_SCALE = 12
STREAM_SYNTH_CONFUSION = 13
STREAM_RINGS = 20
STREAM_MLP_INIT = 21
STREAM_MLP_BATCH = 22


def generator(seed: int, stream: int) -> np.random.Generator:
    """Return a Generator over the Philox stream keyed by (seed, stream)."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform_block(seed: int, stream: int, n: int) -> np.ndarray:
    """n float64 uniforms in [0, 1); element i is a function of (seed, stream, i)."""
    return generator(seed, stream).random(n)
