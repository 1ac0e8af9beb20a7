"""Seeding and environment plumbing.

All randomness flows from one seed through named substreams so that CLI
reruns with the same --seed are byte-identical. GIC_THREADS caps the numba
worker count; GIC_DETERMINISTIC=1 forces sequential grid reductions.
"""

import os
import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the master seed."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def thread_count() -> int:
    """Worker count honoring the GIC_THREADS cap."""
    import numba

    n = numba.get_num_threads()
    cap = os.environ.get("GIC_THREADS")
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            pass
    return n


def deterministic_mode() -> bool:
    return os.environ.get("GIC_DETERMINISTIC", "") == "1"
