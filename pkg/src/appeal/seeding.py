"""Stable seed derivation.

Every random stream in the pipeline is derived from (run_seed, *labels) via
sha256, so outputs never depend on worker scheduling or platform RNG quirks
and any sample can be regenerated from its manifest row.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map an arbitrary label tuple to a stable 64-bit seed."""
    key = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
