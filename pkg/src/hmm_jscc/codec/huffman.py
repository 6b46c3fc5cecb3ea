"""Deterministic binary Huffman codes for state compression."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError


@dataclass(frozen=True)
class HuffmanCode:
    codes: tuple[str | None, ...]
    distribution: tuple[float, ...]

    @property
    def lengths(self) -> tuple[int | None, ...]:
        return tuple(None if c is None else len(c) for c in self.codes)

    def expected_length(self) -> float:
        return float(sum(p * len(c) for p, c in zip(self.distribution, self.codes) if c is not None))

    def entropy(self) -> float:
        p = np.array([q for q in self.distribution if q > 0])
        return float(-(p * np.log2(p)).sum())

    def is_prefix_free(self) -> bool:
        words = sorted(c for c in self.codes if c is not None)
        return all(not b.startswith(a) for a, b in zip(words, words[1:]))


def huffman_build(dist, exclude_zero: bool = False) -> HuffmanCode:
    """Huffman code for ``dist``.

    Ties merge the lowest-index subtrees first (a subtree's index is its
    smallest symbol) and the lower-index subtree takes the 0 branch. With
    ``exclude_zero`` zero-probability symbols get no codeword; otherwise they
    take part and end up with the longest codes. A single symbol gets the
    empty codeword.
    """
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ParameterError("empty distribution")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ParameterError("distribution must be nonnegative and sum to 1")

    symbols = [i for i in range(p.size) if not (exclude_zero and p[i] == 0)]
    if not symbols:
        raise ParameterError("distribution has no support")
    heap = [(float(p[i]), i, i) for i in symbols]
    heapq.heapify(heap)
    while len(heap) > 1:
        pa, ia, a = heapq.heappop(heap)
        pb, ib, b = heapq.heappop(heap)
        zero, one = (a, b) if ia < ib else (b, a)
        heapq.heappush(heap, (pa + pb, min(ia, ib), (zero, one)))

    codes: list[str | None] = [None] * p.size
    stack = [(heap[0][2], "")]
    while stack:
        node, prefix = stack.pop()
        if isinstance(node, tuple):
            stack.append((node[0], prefix + "0"))
            stack.append((node[1], prefix + "1"))
        else:
            codes[node] = prefix
    return HuffmanCode(tuple(codes), tuple(float(q) for q in p))
