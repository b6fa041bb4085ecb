"""Named random sub-streams derived from a single command seed."""
import zlib

import numpy as np

STREAMS = ("data", "model-init", "masking", "sampling", "metrics", "split")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for ``name`` under ``seed``.

    The stream id is a CRC of the name, so adding a new stream never
    perturbs the draws of an existing one.
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
