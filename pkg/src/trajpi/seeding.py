"""Deterministic seed derivation.

Every random stream in the package is keyed by a master seed plus a path
of labels (e.g. ``(seed, "traj", 17)``), so results never depend on how
work is scheduled across workers.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_seed", "stream"]


def _key(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"seed components must be nonnegative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    raise TypeError(f"unsupported seed component {part!r}")


def derive_seed(*parts) -> int:
    """64-bit seed that is a pure function of ``parts``."""
    ss = np.random.SeedSequence([_key(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def stream(*parts) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``parts``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([_key(p) for p in parts])))
