"""Counter-based random streams.

All stochastic code draws from Philox4x64 generators keyed by
``(seed, replica_index)``, so replica r of a seeded experiment produces the
same numbers no matter how replicas are chunked across workers.  Samplers
consume one uniform per composition part / chain step, in part/step order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def stream(seed: int, replica: int = 0) -> np.random.Generator:
    """Generator for one replica of a seeded experiment."""
    key = np.array([int(seed) & MASK64, int(replica) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
