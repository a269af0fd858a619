"""Deterministic seed derivation for nested stochastic tasks.

Every stochastic operation takes an explicit seed; the harness derives
per-task seeds by hashing the master seed together with structural
coordinates (protocol, repetition, grid indices, ...).  Results are
therefore independent of execution order and worker count.
"""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *parts: int | str) -> int:
    """A 64-bit seed determined by the master seed and task coordinates.

    Parts should be ints or strings (avoid floats: their repr is
    platform-stable but grid *indices* are the intended coordinates).
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(repr((int(master_seed),) + tuple(parts)).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")
