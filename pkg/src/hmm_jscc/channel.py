"""Binary symmetric channel and bit-word helpers.

Bit words are 1-D ``uint8`` arrays; index 0 is the first bit emitted by the
encoder. For the hot decoding loops words of up to 63 bits are also packed into
integers with bit 0 stored as the most significant bit.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def as_bits(word) -> np.ndarray:
    """Coerce a sequence or ``'0101'`` string into a uint8 bit array."""
    if isinstance(word, str):
        word = [int(c) for c in word]
    bits = np.asarray(word, dtype=np.uint8)
    if bits.ndim != 1:
        raise ParameterError(f"bit word must be 1-D, got shape {bits.shape}")
    if np.any(bits > 1):
        raise ParameterError("bit word contains symbols other than 0/1")
    return bits


def bits_to_str(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits).ravel())


def transmit(x, p_b: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each bit of ``x`` independently with probability ``p_b``.

    ``x`` may be a single word or a 2-D batch of words (one per row).
    """
    if not 0.0 <= p_b <= 1.0:
        raise ParameterError(f"bit error probability {p_b} outside [0, 1]")
    x = np.asarray(x, dtype=np.uint8)
    flips = (rng.random(x.shape) < p_b).astype(np.uint8)
    return x ^ flips


def hamming_distance(x, y) -> int:
    x = np.asarray(x, dtype=np.uint8)
    y = np.asarray(y, dtype=np.uint8)
    if x.shape != y.shape:
        raise ParameterError(f"length mismatch: {x.shape} vs {y.shape}")
    return int(np.count_nonzero(x != y))


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack the last axis of a bit array into int64 values (bit 0 = MSB)."""
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[-1]
    if n > 63:
        raise ParameterError(f"cannot pack {n} bits into int64")
    weights = np.left_shift(np.int64(1), np.arange(n - 1, -1, -1, dtype=np.int64))
    return bits @ weights


def unpack_bits(values, n: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def packed_distance(a, b) -> np.ndarray:
    """Hamming distance between packed words, broadcasting like ``a ^ b``."""
    return np.bitwise_count(np.bitwise_xor(a, b))
