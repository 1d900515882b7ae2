"""Counter-based random streams derived from one master seed.

Every random draw in the package comes from ``stream(seed, purpose, index)``,
so a result only depends on *which* sample it belongs to and never on the
order in which workers happen to process samples.
"""
import numpy as np

# stream purposes
NOMINAL = 0
BALL = 1
AMLS = 2
PROBE = 3
REPLICATE = 4
BENCH = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))
