"""Module with seed splitting and thread control helpers."""

import logging

import numpy as np
import torch

logger = logging.getLogger(__name__)


def derive_seed(base: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from a base seed and integer keys.

    Args:
        base (int): Root seed.
        *keys (int): Path of non-negative integers identifying the stream.

    Returns:
        int: A 64-bit unsigned seed.
    """
    sequence = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def numpy_rng(base: int, *keys: int) -> np.random.Generator:
    """Build a numpy generator on the stream identified by ``(base, *keys)``."""
    return np.random.default_rng(derive_seed(base, *keys))


def torch_generator(base: int, *keys: int) -> torch.Generator:
    """Build a CPU torch generator on the stream identified by ``(base, *keys)``."""
    generator = torch.Generator()
    # torch seeds must fit in a signed 64-bit integer
    generator.manual_seed(derive_seed(base, *keys) & 0x7FFFFFFFFFFFFFFF)
    return generator


def set_threads(threads: int) -> None:
    """Cap torch worker threads; a single thread also turns on deterministic kernels.

    Args:
        threads (int): Number of intra-op threads, at least 1.
    """
    threads = max(1, int(threads))
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(threads == 1)
    logger.debug("Torch threads set to %s (deterministic=%s)", threads, threads == 1)
