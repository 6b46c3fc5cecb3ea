"""Scheme-specific codebooks mapping (state, message) pairs to n-bit codewords."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..channel import bits_to_str, pack_bits
from ..errors import CodeDesignError, ModelError, ParameterError
from .bch import LinearBlockCode, build_shortened_code
from .huffman import huffman_build


class Scheme(str, Enum):
    LEGACY = "legacy"
    PUNCTURED = "punctured"
    STATIONARY = "stationary"
    CONDITIONAL = "conditional"

    @property
    def compressed(self) -> bool:
        return self in (Scheme.STATIONARY, Scheme.CONDITIONAL)


def _log2_exact(v: int, name: str) -> int:
    if v < 1 or v & (v - 1):
        raise ParameterError(f"{name}={v} must be a power of two")
    return v.bit_length() - 1


def _int_bits(values, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    return ((values[..., None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Codebook:
    """Immutable table of codewords ``x(s, m)``.

    ``valid[s]`` is False for states that cannot be encoded in this codebook
    (zero-probability transitions of a conditional context); their rows are zero.
    """

    scheme: Scheme
    codewords: np.ndarray = field(repr=False)  # (S, M, n) uint8
    valid: np.ndarray = field(repr=False)  # (S,) bool
    codes: tuple[LinearBlockCode | None, ...] = field(repr=False, default=())
    state_prefixes: tuple[str | None, ...] = field(repr=False, default=())
    context: int | None = None

    def __post_init__(self):
        self.codewords.setflags(write=False)
        self.valid.setflags(write=False)
        packed = pack_bits(self.codewords)
        packed.setflags(write=False)
        object.__setattr__(self, "packed", packed)

    @property
    def n_states(self) -> int:
        return self.codewords.shape[0]

    @property
    def n_messages(self) -> int:
        return self.codewords.shape[1]

    @property
    def n(self) -> int:
        return self.codewords.shape[2]

    def codeword_set(self, s: int) -> np.ndarray:
        """The (M, n) array of codewords belonging to state ``s``."""
        if not self.valid[s]:
            return self.codewords[s, :0]
        return self.codewords[s]

    def check_collisions(self) -> None:
        words = self.packed[self.valid].ravel()
        if np.unique(words).size != words.size:
            raise CodeDesignError(f"{self.scheme.value} codebook has colliding codewords")

    def rows(self):
        for s in range(self.n_states):
            if not self.valid[s]:
                continue
            for m in range(self.n_messages):
                yield s, m, bits_to_str(self.codewords[s, m])


@dataclass(frozen=True, eq=False)
class ConditionalCodebook:
    """Context-dependent codebooks plus the uncompressed check-packet codebook.

    Packet ``t`` is a check packet when ``t % check_interval == 0``.
    """

    contexts: tuple[Codebook, ...]
    check: Codebook
    check_interval: int
    scheme: Scheme = Scheme.CONDITIONAL

    @property
    def n_states(self) -> int:
        return self.check.n_states

    @property
    def n_messages(self) -> int:
        return self.check.n_messages

    @property
    def n(self) -> int:
        return self.check.n

    def __post_init__(self):
        packed = np.stack([cb.packed for cb in self.contexts])
        valid = np.stack([cb.valid for cb in self.contexts])
        packed.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "context_packed", packed)  # (S_prev, S, M)
        object.__setattr__(self, "context_valid", valid)  # (S_prev, S)

    def is_check_packet(self, t: int) -> bool:
        return t % self.check_interval == 0

    def codebook_for(self, t: int, previous_state: int | None) -> Codebook:
        if self.is_check_packet(t) or previous_state is None:
            return self.check
        return self.contexts[previous_state]

    def check_collisions(self) -> None:
        self.check.check_collisions()
        for cb in self.contexts:
            cb.check_collisions()


def _fixed_codebook(scheme: Scheme, code: LinearBlockCode, S: int, M: int) -> Codebook:
    bs, bm = _log2_exact(S, "S"), _log2_exact(M, "M")
    s_idx, m_idx = np.meshgrid(np.arange(S), np.arange(M), indexing="ij")
    payload = np.concatenate([_int_bits(s_idx, bs), _int_bits(m_idx, bm)], axis=-1)
    words = code.encode(payload)
    prefixes = tuple(format(s, f"0{bs}b") if bs else "" for s in range(S))
    return Codebook(scheme, words, np.ones(S, dtype=bool), (code,) * S, prefixes)


def _compressed_codebook(
    scheme: Scheme, dist: np.ndarray, M: int, n: int, exclude_zero: bool, context: int | None = None
) -> Codebook:
    S = dist.size
    bm = _log2_exact(M, "M")
    huff = huffman_build(dist, exclude_zero=exclude_zero)
    words = np.zeros((S, M, n), dtype=np.uint8)
    valid = np.zeros(S, dtype=bool)
    codes: list[LinearBlockCode | None] = [None] * S
    msg_bits = _int_bits(np.arange(M), bm)
    for s, prefix in enumerate(huff.codes):
        if prefix is None:
            continue
        k_s = len(prefix) + bm
        if k_s > n:
            raise CodeDesignError(
                f"state {s} needs a {k_s}-bit payload, more than the {n}-bit packet"
            )
        code = build_shortened_code(k_s, n)
        state_bits = np.tile(np.array([int(c) for c in prefix], dtype=np.uint8), (M, 1))
        words[s] = code.encode(np.concatenate([state_bits, msg_bits], axis=1))
        valid[s] = True
        codes[s] = code
    return Codebook(scheme, words, valid, tuple(codes), huff.codes, context)


def build_codebook(
    scheme: Scheme | str,
    S: int,
    M: int,
    n: int,
    transition: np.ndarray | None = None,
    stationary: np.ndarray | None = None,
    check_interval: int = 2,
) -> Codebook | ConditionalCodebook:
    """Build the codebook for one coding scheme.

    ``stationary`` is required by the stationary-compression scheme and
    ``transition`` by the conditional one (the stationary law is derived from
    ``transition`` when only that is given).
    """
    scheme = Scheme(scheme)
    bs, bm = _log2_exact(S, "S"), _log2_exact(M, "M")
    k = bs + bm
    if scheme is Scheme.LEGACY:
        book = _fixed_codebook(scheme, build_shortened_code(k, n), S, M)
    elif scheme is Scheme.PUNCTURED:
        code = build_shortened_code(k, n + bs).punctured(range(bs))
        book = _fixed_codebook(scheme, code, S, M)
    elif scheme is Scheme.STATIONARY:
        if stationary is None:
            if transition is None:
                raise ParameterError("stationary scheme needs the stationary distribution")
            from ..source import stationary_distribution

            stationary = stationary_distribution(transition)
        book = _compressed_codebook(scheme, np.asarray(stationary, float), M, n, exclude_zero=False)
    else:
        if transition is None:
            raise ParameterError("conditional scheme needs the transition matrix")
        if check_interval < 1:
            raise ParameterError(f"check interval must be >= 1, got {check_interval}")
        T = np.asarray(transition, dtype=float)
        if T.shape != (S, S):
            raise ParameterError(f"transition matrix shape {T.shape} does not match S={S}")
        contexts = tuple(
            _compressed_codebook(scheme, T[s] / T[s].sum(), M, n, exclude_zero=True, context=s)
            for s in range(S)
        )
        check = _fixed_codebook(Scheme.LEGACY, build_shortened_code(k, n), S, M)
        book = ConditionalCodebook(contexts, check, check_interval)
    book.check_collisions()
    return book


def encode(codebook: Codebook, s: int, m: int) -> np.ndarray:
    if isinstance(codebook, ConditionalCodebook):
        raise ParameterError("select a context codebook with codebook_for(t, previous_state)")
    if not (0 <= s < codebook.n_states and 0 <= m < codebook.n_messages):
        raise ParameterError(f"(state, message)=({s}, {m}) outside the codebook")
    if not codebook.valid[s]:
        raise ModelError(f"state {s} is unreachable from context {codebook.context}")
    return codebook.codewords[s, m].copy()


def codebook_csv(codebook: Codebook | ConditionalCodebook) -> str:
    """Diagnostic dump: ``state,message,codeword_bits`` (conditional adds a leading ``context``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(codebook, ConditionalCodebook):
        w.writerow(["context", "state", "message", "codeword_bits"])
        for s, m, bits in codebook.check.rows():
            w.writerow(["check", s, m, bits])
        for ctx, cb in enumerate(codebook.contexts):
            for s, m, bits in cb.rows():
                w.writerow([ctx, s, m, bits])
    else:
        w.writerow(["state", "message", "codeword_bits"])
        for row in codebook.rows():
            w.writerow(row)
    return buf.getvalue()
