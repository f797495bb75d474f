"""Named, counter-based random streams.

Every stochastic step in the package draws from a Philox generator keyed by
(root seed, purpose, index), so reports can record the root seed and any run
can be replayed stream by stream without cross-talk between purposes.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

_PURPOSES = {
    "data": 0,
    "split": 1,
    "folds": 2,
    "perm": 3,
    "bootstrap": 4,
    "probe": 5,
    "regions": 6,
    "starts": 7,
    "conditional": 8,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return the generator for one (seed, purpose, index) stream."""
    if purpose not in _PURPOSES:
        raise ParameterError(f"unknown rng purpose {purpose!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_PURPOSES[purpose], int(index)))
    return np.random.Generator(np.random.Philox(ss))


def describe(seed: int) -> dict:
    """Stream layout recorded in reports for replay."""
    return {"bit_generator": "Philox", "seed": int(seed), "purposes": dict(_PURPOSES)}
