"""Named, independent RNG streams derived from one master seed."""

import numpy as np

STREAMS = {"env": 1, "policy-init": 2, "action": 3, "attack": 4, "eval": 5, "eval-attack": 6, "minibatch": 7}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))
