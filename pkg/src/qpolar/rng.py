"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, index)``; the purpose tag
lives in the counter so that trial ``i`` of a simulation and trajectory ``i`` of
a path sampler never share draws.  Streams do not depend on evaluation order.
"""

import numpy as np

TRIAL = 1
PATH = 2
FROZEN = 3
MESSAGE = 4
CHANNEL = 5

_MASK = (1 << 64) - 1


def stream(seed: int, index: int = 0, purpose: int = 0) -> np.random.Generator:
    key = np.array([seed & _MASK, index & _MASK], dtype=np.uint64)
    counter = np.array([0, 0, 0, purpose & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
