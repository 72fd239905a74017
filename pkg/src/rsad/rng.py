"""Counter-based Gaussian stream.

Standard normals are addressed by ``(key, position)``: entry ``p`` of a stream
depends only on the key and on ``p``, never on how many values were drawn
before it. The underlying generator is Philox4x64-10 (numpy's ``Philox``
bit generator), whose output word ``w`` lives in counter block ``w // 4``.
Normals are produced pairwise by Box-Muller from two consecutive words, so
normals ``2j`` and ``2j + 1`` come from words ``2j`` and ``2j + 1``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_WORDS_PER_BLOCK = 4


def hash_label(label: str) -> int:
    """Stable 64-bit hash of a text label (blake2b, little-endian)."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_key(master_seed: int, label: str, index: int) -> tuple[int, int]:
    """Philox key for stream ``index`` of ``label`` under ``master_seed``."""
    if not 0 <= master_seed <= _MASK64:
        raise ValueError(f"master_seed must fit in 64 bits, got {master_seed}")
    if not 0 <= index <= _MASK64:
        raise ValueError(f"index must fit in 64 bits, got {index}")
    return (master_seed ^ hash_label(label)) & _MASK64, index


def raw_words(key: tuple[int, int], start: int, count: int) -> np.ndarray:
    """``count`` raw 64-bit words beginning at word position ``start``."""
    block, offset = divmod(start, _WORDS_PER_BLOCK)
    counter = np.array([block & _MASK64, block >> 64, 0, 0], dtype=np.uint64)
    bg = np.random.Philox(key=np.array(key, dtype=np.uint64), counter=counter)
    words = bg.random_raw(offset + count)
    return np.asarray(words[offset:], dtype=np.uint64)


def _unit_open(words: np.ndarray) -> np.ndarray:
    # 53 high bits, centred in their bucket: values lie strictly inside (0, 1).
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(key: tuple[int, int], start: int, count: int) -> np.ndarray:
    """Standard normal entries ``start .. start + count - 1`` of a stream."""
    if start < 0 or count < 0:
        raise ValueError("start and count must be non-negative")
    if count == 0:
        return np.empty(0, dtype=np.float64)
    first_pair = start // 2
    last_pair = (start + count - 1) // 2
    words = raw_words(key, 2 * first_pair, 2 * (last_pair - first_pair + 1))
    u1 = _unit_open(words[0::2])
    u2 = _unit_open(words[1::2])
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    pairs = np.empty((u1.size, 2), dtype=np.float64)
    pairs[:, 0] = radius * np.cos(theta)
    pairs[:, 1] = radius * np.sin(theta)
    flat = pairs.reshape(-1)
    lead = start - 2 * first_pair
    return flat[lead : lead + count].copy()
