"""Binary BCH codes of length 31 and their shortened / punctured descendants.

Polynomials over GF(2) are ints with bit ``i`` holding the coefficient of
``x**i``. Codewords are systematic: the payload occupies the first positions,
parity follows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ..errors import CodeDesignError, ParameterError

PARENT_LENGTH = 31
PRIMITIVE_POLY = 0b100101  # x^5 + x^2 + 1
# (information bits, designed distance, correctable errors t)
PARENT_LADDER = ((26, 3, 1), (21, 5, 2), (16, 7, 3), (11, 11, 5), (6, 15, 7))


@lru_cache(maxsize=None)
def _gf32_tables() -> tuple[tuple[int, ...], tuple[int, ...]]:
    exp = [0] * (2 * PARENT_LENGTH)
    log = [0] * (PARENT_LENGTH + 1)
    v = 1
    for i in range(PARENT_LENGTH):
        exp[i] = exp[i + PARENT_LENGTH] = v
        log[v] = i
        v <<= 1
        if v & 0b100000:
            v ^= PRIMITIVE_POLY
    return tuple(exp), tuple(log)


def _gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    exp, log = _gf32_tables()
    return exp[log[a] + log[b]]


def _minimal_polynomial(power: int) -> int:
    """Minimal polynomial of alpha**power as a GF(2) int."""
    exp, _ = _gf32_tables()
    coset = []
    j = power % PARENT_LENGTH
    while j not in coset:
        coset.append(j)
        j = (2 * j) % PARENT_LENGTH
    # multiply out prod (x + alpha^j) with GF(32) coefficients, lowest degree first
    coeffs = [1]
    for j in coset:
        root = exp[j]
        nxt = [0] * (len(coeffs) + 1)
        for i, c in enumerate(coeffs):
            nxt[i + 1] ^= c
            nxt[i] ^= _gf_mul(c, root)
        coeffs = nxt
    if any(c not in (0, 1) for c in coeffs):
        raise AssertionError("minimal polynomial left GF(2)")
    return sum(c << i for i, c in enumerate(coeffs))


def _poly_mul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def _poly_mod(a: int, m: int) -> int:
    dm = m.bit_length() - 1
    while a and a.bit_length() - 1 >= dm:
        a ^= m << (a.bit_length() - 1 - dm)
    return a


@lru_cache(maxsize=None)
def bch_generator(t: int) -> int:
    """Generator polynomial of the narrow-sense length-31 BCH code correcting ``t`` errors."""
    seen: set[int] = set()
    g = 1
    for power in range(1, 2 * t + 1):
        mp = _minimal_polynomial(power)
        if mp not in seen:
            seen.add(mp)
            g = _poly_mul(g, mp)
    return g


@dataclass(frozen=True)
class LinearBlockCode:
    """Systematic binary block code with an optional puncture pattern."""

    payload_len: int
    full_len: int
    generator: np.ndarray = field(repr=False, compare=False)
    puncture_pattern: tuple[int, ...] = ()
    designed_distance: int = 1
    parent: tuple[int, int] | None = None

    @property
    def parity_len(self) -> int:
        return self.full_len - self.payload_len

    @property
    def output_len(self) -> int:
        return self.full_len - len(self.puncture_pattern)

    @property
    def kept_positions(self) -> np.ndarray:
        mask = np.ones(self.full_len, dtype=bool)
        mask[list(self.puncture_pattern)] = False
        return np.flatnonzero(mask)

    def encode_full(self, payload) -> np.ndarray:
        payload = np.asarray(payload, dtype=np.int64)
        if payload.shape[-1] != self.payload_len:
            raise ParameterError(
                f"payload has {payload.shape[-1]} bits, code expects {self.payload_len}"
            )
        return ((payload @ self.generator) % 2).astype(np.uint8)

    def encode(self, payload) -> np.ndarray:
        """Encode one payload (or a batch, one per row) and drop punctured positions."""
        return self.encode_full(payload)[..., self.kept_positions]

    def punctured(self, positions) -> LinearBlockCode:
        extra = tuple(int(p) for p in positions)
        if any(not 0 <= p < self.full_len for p in extra):
            raise CodeDesignError(f"puncture positions {extra} out of range")
        pattern = tuple(sorted(set(self.puncture_pattern) | set(extra)))
        return replace(self, puncture_pattern=pattern)


def systematic_generator(payload_len: int, parity_len: int, g: int) -> np.ndarray:
    G = np.zeros((payload_len, payload_len + parity_len), dtype=np.uint8)
    for j in range(payload_len):
        G[j, j] = 1
        # payload bit j is the coefficient of x^(parity_len + payload_len - 1 - j)
        rem = _poly_mod(1 << (parity_len + payload_len - 1 - j), g) if parity_len else 0
        for i in range(parity_len):
            G[j, payload_len + i] = (rem >> (parity_len - 1 - i)) & 1
    return G


def build_shortened_code(payload_len: int, target_len: int) -> LinearBlockCode:
    """Shortened, possibly punctured, BCH code mapping ``payload_len`` bits to ``target_len``.

    The parent is the length-31 BCH code with the fewest parity bits ``r``
    satisfying ``payload_len + r >= target_len``; it is shortened to
    ``(payload_len + r, payload_len)`` and any surplus trailing parity bits are
    punctured. ``payload_len == target_len`` yields the uncoded identity map.
    """
    if payload_len < 0 or target_len < 1:
        raise CodeDesignError(f"invalid lengths k'={payload_len}, n={target_len}")
    if payload_len > target_len:
        raise CodeDesignError(f"payload of {payload_len} bits does not fit in {target_len}")
    if payload_len == target_len:
        G = np.eye(payload_len, dtype=np.uint8)
        return LinearBlockCode(payload_len, payload_len, G, (), 1, None)
    for k31, dist, t in PARENT_LADDER:
        r = PARENT_LENGTH - k31
        if payload_len + r >= target_len and payload_len <= k31:
            g = bch_generator(t)
            if g.bit_length() - 1 != r:
                raise AssertionError(f"BCH(31,{k31}) generator has degree {g.bit_length() - 1}")
            full = payload_len + r
            G = systematic_generator(payload_len, r, g)
            pattern = tuple(range(target_len, full))
            return LinearBlockCode(payload_len, full, G, pattern, dist, (PARENT_LENGTH, k31))
    raise CodeDesignError(
        f"no length-31 BCH parent can map {payload_len} payload bits onto {target_len}"
    )


def minimum_distance(code: LinearBlockCode, punctured: bool = False) -> int:
    """Minimum Hamming weight over nonzero codewords, by enumeration (k' <= 20)."""
    k = code.payload_len
    if k > 20:
        raise ParameterError("enumeration limited to payloads of at most 20 bits")
    if k == 0:
        return 0
    msgs = (np.arange(1, 2**k)[:, None] >> np.arange(k - 1, -1, -1)) & 1
    words = code.encode(msgs) if punctured else code.encode_full(msgs)
    return int(words.sum(axis=1).min())
