import zlib
from typing import Union

import numpy as np


def _name_key(name: Union[str, int]) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def named_rng(root_seed: int, *names: Union[str, int]) -> np.random.Generator:
    """
    Independent generator for a named substream of one root seed.

    named_rng(7, "obs") and named_rng(7, "init") never share draws, and the
    same (seed, names) always yields the same stream.
    """
    entropy = [int(root_seed)] + [_name_key(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(root_seed: int, *names: Union[str, int]) -> int:
    """Integer seed for components that take a plain int (network init, shuffling)"""
    return int(named_rng(root_seed, *names).integers(0, 2**31 - 1))
