"""
Counter-based seed derivation for reproducible parallel ensembles
"""
import hashlib

import numpy as np

SEED_BITS = 64


def derive_seed(master_seed: int, *indices: int) -> int:
    """
    Derive a 64-bit seed from a master seed and a tuple of work-item indices.

    Intent:
    Every trajectory owns its random stream, identified only by the master
    seed and its position (trajectory index, and for spectra also the
    wavenumber index). Because the derivation is a pure hash of those
    integers, any schedule of workers produces the same streams.

    The digest is SHA-256 over the decimal rendering of the integers, so the
    mapping is stable across platforms and numpy versions.

    Args:
        master_seed: User-supplied experiment seed
        *indices: Position of the work item (outermost index first)

    Returns:
        Unsigned 64-bit integer seed
    """
    key = ":".join(str(int(value)) for value in (master_seed, *indices))
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[: SEED_BITS // 8], "big")


def derive_seeds(master_seed: int, count: int, *prefix: int) -> np.ndarray:
    """Seeds for work items ``prefix + (0,) ... prefix + (count - 1,)`` as a uint64 array."""
    return np.array(
        [derive_seed(master_seed, *prefix, index) for index in range(count)], dtype=np.uint64
    )


def generator_for(seed: int) -> np.random.Generator:
    """Numpy generator owned by a single trajectory."""
    return np.random.default_rng(int(seed))
