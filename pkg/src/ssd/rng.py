"""Counter-based random streams for replayable oracle queries.

Every stochastic oracle query draws from its own generator, keyed by
``(master seed, oracle id, iteration, destination tag)``.  Because Philox is a
counter-based generator, the same key always yields the same draws no matter
in which order queries happen, which makes runs replayable and lets tests
audit which keys were consumed.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    """Hash integers into a 64-bit seed (stable across platforms and runs)."""
    payload = ",".join(str(int(p)) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


class OracleStreams:
    """Factory of per-query generators.

    Parameters
    ----------
    seed : int
        Master seed of the run.
    record : bool
        If true, every requested key is appended to :attr:`keys`.
    """

    def __init__(self, seed: int, record: bool = False):
        self.seed = int(seed) & _MASK64
        self.record = record
        self.keys: list[tuple[int, int, int]] = []

    def generator(self, oracle_id: int, t: int, tag: int) -> np.random.Generator:
        if self.record:
            self.keys.append((oracle_id, t, tag))
        if not (0 <= oracle_id < 1 << 16 and 0 <= tag < 1 << 8 and 0 <= t < 1 << 40):
            raise ValueError(f"stream key out of range: {(oracle_id, t, tag)}")
        low = (oracle_id << 48) | (tag << 40) | t
        return np.random.Generator(np.random.Philox(key=(self.seed << 64) | low))
