"""Counter-based splittable random streams.

Every stochastic routine in the package draws from a Philox generator keyed
by (master seed, integer path...). Substreams derived from the same key are
bit-identical no matter how work is chunked across workers, which is what
makes every estimator reproducible under any parallel schedule.
"""

from __future__ import annotations

import numpy as np

# Fixed tags namespace the substreams of a single master seed so that e.g.
# path simulation and resampling never share a stream.
TAG_PATH = 1
TAG_PROPAGATE = 2
TAG_RESAMPLE = 3
TAG_INIT = 4
TAG_JUMP = 5
TAG_SCENARIO = 6


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator addressed by (seed, *key).

    The same (seed, key) always yields the same stream; distinct keys give
    statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Deterministically derive a child integer seed from (seed, *key)."""
    ss = np.random.SeedSequence(entropy=(int(seed),) + tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
