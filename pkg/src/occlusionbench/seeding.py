"""Deterministic seed derivation.

Every random draw in the toolkit flows from a single run seed through
named sub-streams, so adding an occlusion kind or a degree to a sweep
never perturbs the random numbers of the other cells.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Derive a stable 63-bit seed from the given parts.

    Uses SHA-256 over a canonical string form, so results do not depend
    on ``PYTHONHASHSEED`` or the process. Floats are canonicalized via
    ``repr`` (0.1 and 0.10 hash identically, 0.1 and 0.2 do not).
    """
    text = "\x1f".join(_canonical(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def derive_rng(*parts) -> np.random.Generator:
    """A fresh generator seeded from the named sub-stream."""
    return np.random.default_rng(derive_seed(*parts))


def _canonical(part) -> str:
    if isinstance(part, float):
        return repr(part)
    return str(part)
