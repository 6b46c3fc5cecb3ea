"""Minimum-distance, forward MAP and fixed-lag (delayed) MAP decoding.

The receiver treats the source state as the hidden variable of an HMM whose
observations are the received packets. All probability arithmetic runs in the
log domain; decisions break ties towards the lowest state index, then the
lowest message index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .channel import as_bits, pack_bits, packed_distance
from .codec.codebook import Codebook
from .errors import NumericalError, ParameterError

NORMALIZATION_TOL = 1e-9

# One slot of a delayed-decoding window: a codebook (emission depends on the
# current state only) or one codebook per previous state (emission depends on
# the transition, as for conditional compression).
SlotCodebook = Union[Codebook, Sequence[Codebook]]


@dataclass
class BeliefState:
    prior: np.ndarray
    time: int = 0

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=float)
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > NORMALIZATION_TOL:
            raise ParameterError("belief must be a probability vector")

    @classmethod
    def uniform(cls, n_states: int, time: int = 0) -> BeliefState:
        return cls(np.full(n_states, 1.0 / n_states), time)


@dataclass
class DecodeResult:
    state: int
    message: int
    posterior: np.ndarray
    log_evidence: float = 0.0


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(a))) along ``axis``; all -inf slices give -inf."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def distance_log_likelihood(d, n: int, p_b: float) -> np.ndarray:
    """log P(y | x) for Hamming distance ``d`` between n-bit words.

    Written as ``d log p + (n - d) log(1 - p)`` with ``0 log 0 = 0``, which equals
    ``d log(p/(1-p)) + n log(1-p)`` and stays exact at ``p_b`` in {0, 1}.
    """
    if not 0.0 <= p_b <= 1.0:
        raise ParameterError(f"bit error probability {p_b} outside [0, 1]")
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp, lq = np.log(p_b), np.log1p(-p_b)
        flips = np.where(d > 0, d * lp, 0.0)
        keeps = np.where(n - d > 0, (n - d) * lq, 0.0)
    return flips + keeps


def word_log_likelihood(y, x, p_b: float) -> float:
    y, x = as_bits(y), as_bits(x)
    if y.shape != x.shape:
        raise ParameterError(f"length mismatch: {y.size} vs {x.size}")
    return float(distance_log_likelihood(np.count_nonzero(x != y), y.size, p_b))


def emission_log_prob(y, s: int, codebook: Codebook, p_b: float) -> float:
    """log P(y | state s): average likelihood over the state's M codewords."""
    y = as_bits(y)
    xs = codebook.codeword_set(s)
    if xs.shape[0] == 0:
        raise ParameterError(f"state {s} has no codewords in this codebook")
    d = np.count_nonzero(xs != y[None, :], axis=1)
    ll = distance_log_likelihood(d, codebook.n, p_b)
    return float(logsumexp(ll) - np.log(codebook.n_messages))


def _packed(y) -> int:
    return int(pack_bits(as_bits(y)))


def state_distances(y_packed, codebook: Codebook) -> np.ndarray:
    """Hamming distances from packed word(s) to every codeword, shape (..., S, M)."""
    y_packed = np.asarray(y_packed, dtype=np.int64)
    return packed_distance(codebook.packed, y_packed[..., None, None]).astype(np.int64)


def packed_log_emissions(y_packed: int, packed: np.ndarray, valid: np.ndarray, p_b: float, n: int):
    """log P(y | s) for codeword tables of shape (..., S, M) with validity mask (..., S)."""
    d = packed_distance(packed, np.int64(y_packed))
    ll = distance_log_likelihood(np.arange(n + 1), n, p_b)[d]
    out = logsumexp(ll, axis=-1) - np.log(packed.shape[-1])
    return np.where(valid, out, -np.inf)


def state_log_emissions(y, codebook: Codebook, p_b: float) -> np.ndarray:
    """Vector of log P(y | s) over all states; states absent from the codebook get -inf."""
    return packed_log_emissions(_packed(y), codebook.packed, codebook.valid, p_b, codebook.n)


def distance_histograms(y_packed: np.ndarray, codebook: Codebook, chunk: int = 2048):
    """Per-state distance counts and per-state nearest messages for a batch of words.

    Returns ``(hist, best_msg, best_dist)`` with shapes (N, S, n+1), (N, S), (N, S).
    Invalid states have all-zero histograms and distance ``n + 1``.
    """
    y_packed = np.asarray(y_packed, dtype=np.int64)
    N, S, n = y_packed.size, codebook.n_states, codebook.n
    hist = np.zeros((N, S, n + 1), dtype=np.int32)
    best_msg = np.zeros((N, S), dtype=np.int64)
    best_dist = np.zeros((N, S), dtype=np.int64)
    offs = (np.arange(S) * (n + 1))[None, :, None]
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        d = state_distances(y_packed[lo:hi], codebook)
        d = np.where(codebook.valid[None, :, None], d, n + 1)
        best_msg[lo:hi] = np.argmin(d, axis=-1)
        best_dist[lo:hi] = np.min(d, axis=-1)
        rows = np.arange(hi - lo)[:, None, None] * (S * (n + 1))
        idx = (rows + offs + np.minimum(d, n)).ravel()
        counts = np.bincount(idx, minlength=(hi - lo) * S * (n + 1))
        h = counts.reshape(hi - lo, S, n + 1)
        h[:, ~codebook.valid, :] = 0
        hist[lo:hi] = h
    return hist, best_msg, best_dist


def histogram_weights(n: int, p_b: float) -> tuple[np.ndarray, float] | None:
    """Weights ``w`` and offset ``c`` with log P(y|s) = log(hist @ w) + c.

    None when some ``(p/(1-p))**k`` would leave the normal float range.
    """
    if not 0.0 < p_b < 1.0:
        return None
    log_ratio = np.log(p_b) - np.log1p(-p_b)
    if n * abs(log_ratio) >= 700.0:
        return None
    return np.exp(np.arange(n + 1) * log_ratio), float(n * np.log1p(-p_b))


def emissions_from_histograms(hist: np.ndarray, n_messages: int, p_b: float) -> np.ndarray:
    """log P(y | s) from distance counts, shape (..., S)."""
    n = hist.shape[-1] - 1
    weights = histogram_weights(n, p_b)
    if weights is not None:
        powers, offset = weights
        with np.errstate(divide="ignore"):
            return np.log(hist @ powers) + (offset - np.log(n_messages))
    ll = distance_log_likelihood(np.arange(n + 1), n, p_b)
    with np.errstate(divide="ignore"):
        terms = np.log(hist) + ll
    return logsumexp(terms, axis=-1) - np.log(n_messages)


def _normalize(log_scores: np.ndarray) -> tuple[np.ndarray, float]:
    m = log_scores.max()
    if not np.isfinite(m):
        raise NumericalError(
            "posterior degenerated: prior support and emission support do not overlap "
            f"(max log score {m})"
        )
    post = np.exp(log_scores - m)
    total = post.sum()
    return post / total, float(m + np.log(total))


def propagate(posterior: np.ndarray, transition: np.ndarray) -> np.ndarray:
    """Next-packet prior: sum over s' of T[s', s] * posterior[s']."""
    prior = posterior @ transition
    return prior / prior.sum()


def backward_log_message(log_transition, future: Sequence[np.ndarray]) -> np.ndarray:
    """log of P(y_{t+1..t+d} | s_t) from future log-emissions.

    Each element of ``future`` is either a state vector (S,) or a
    previous-state x state matrix (S, S) of log-emissions. ``log_transition``
    is one (S, S) matrix or a list giving the matrix into each future slot.
    """
    if isinstance(log_transition, np.ndarray):
        log_transition = [log_transition] * max(len(future), 1)
    log_beta = np.zeros(log_transition[0].shape[0])
    for em, log_T in zip(reversed(future), reversed(log_transition)):
        log_beta = logsumexp(log_T + em + log_beta[None, :], axis=1)
    return log_beta


def fixed_lag_posteriors(log_prior, log_em, future=(), log_transition=None):
    """Filtered posterior, smoothed marginal and log evidence for one packet.

    With no future emissions both posteriors coincide (plain forward MAP).
    """
    filtered, z = _normalize(log_prior + log_em)
    if not len(future):
        return filtered, filtered, z
    log_beta = backward_log_message(log_transition, future)
    marginal, z = _normalize(log_prior + log_em + log_beta)
    return filtered, marginal, z


def _nearest_message(y_packed: int, codebook: Codebook, s: int) -> int:
    return int(np.argmin(packed_distance(codebook.packed[s], y_packed)))


def _check_belief(belief: BeliefState, codebook: Codebook) -> None:
    if belief.prior.shape != (codebook.n_states,):
        raise ParameterError(
            f"belief over {belief.prior.size} states, codebook has {codebook.n_states}"
        )


def map_decode(
    y, belief: BeliefState, codebook: Codebook, p_b: float, transition: np.ndarray
) -> tuple[DecodeResult, BeliefState]:
    """Forward MAP decoding of one packet.

    The state posterior combines the prior with the per-state emission; the
    message is the nearest codeword within the chosen state; the next prior is
    the full posterior pushed through ``transition``.
    """
    _check_belief(belief, codebook)
    log_em = state_log_emissions(y, codebook, p_b)
    post, _, z = fixed_lag_posteriors(safe_log(belief.prior), log_em)
    s_hat = int(np.argmax(post))
    m_hat = _nearest_message(_packed(y), codebook, s_hat)
    nxt = BeliefState(propagate(post, transition), belief.time + 1)
    return DecodeResult(s_hat, m_hat, post, z), nxt


def _slot_log_emissions(y, slot: SlotCodebook, p_b: float) -> np.ndarray:
    if isinstance(slot, Codebook):
        return state_log_emissions(y, slot, p_b)
    return np.stack([state_log_emissions(y, cb, p_b) for cb in slot])


def delayed_decode(
    y_window: Sequence,
    belief: BeliefState,
    transition: np.ndarray,
    codebook: SlotCodebook | Sequence[SlotCodebook],
    p_b: float,
    delay: int,
    propagate_from: str = "filtered",
) -> tuple[DecodeResult, BeliefState]:
    """Decode packet t from ``y_t .. y_{t+delay}`` by forward-backward smoothing.

    ``codebook`` is one Codebook shared by all slots, or a per-slot list whose
    first entry is a Codebook. The returned belief for t+1 is propagated from
    the filtered posterior (``propagate_from="filtered"``, exact fixed-lag
    smoothing) or from the smoothed marginal (``"smoothed"``).
    """
    if delay < 0:
        raise ParameterError(f"delay must be >= 0, got {delay}")
    if len(y_window) != delay + 1:
        raise ParameterError(f"window holds {len(y_window)} words, expected {delay + 1}")
    slots = [codebook] * (delay + 1) if isinstance(codebook, Codebook) else list(codebook)
    if len(slots) != delay + 1 or not isinstance(slots[0], Codebook):
        raise ParameterError("need one codebook per window slot, the first context-free")
    current = slots[0]
    _check_belief(belief, current)

    log_em = state_log_emissions(y_window[0], current, p_b)
    future = [_slot_log_emissions(y, slot, p_b) for y, slot in zip(y_window[1:], slots[1:])]
    filtered, marginal, z = fixed_lag_posteriors(
        safe_log(belief.prior), log_em, future, safe_log(transition)
    )

    s_hat = int(np.argmax(marginal))
    m_hat = _nearest_message(_packed(y_window[0]), current, s_hat)
    if propagate_from == "filtered":
        source = filtered
    elif propagate_from == "smoothed":
        source = marginal
    else:
        raise ParameterError(f"unknown propagation source {propagate_from!r}")
    nxt = BeliefState(propagate(source, transition), belief.time + 1)
    return DecodeResult(s_hat, m_hat, marginal, z), nxt


def min_distance_decode(y, codebook: Codebook) -> DecodeResult:
    d = state_distances(_packed(y), codebook)
    d = np.where(codebook.valid[:, None], d, codebook.n + 1)
    flat = int(np.argmin(d))  # row-major: lowest (state, message) wins ties
    s_hat, m_hat = divmod(flat, codebook.n_messages)
    post = np.zeros(codebook.n_states)
    post[s_hat] = 1.0
    return DecodeResult(s_hat, m_hat, post, 0.0)


def codeword_posterior(y, belief: BeliefState, codebook: Codebook, p_b: float) -> np.ndarray:
    """Posterior over every codeword x(s, m) given the prior on states, shape (S, M)."""
    _check_belief(belief, codebook)
    d = state_distances(_packed(y), codebook)
    ll = distance_log_likelihood(d, codebook.n, p_b)
    ll = np.where(codebook.valid[:, None], ll, -np.inf)
    scores = safe_log(belief.prior)[:, None] + ll
    flat, _ = _normalize(scores.ravel())
    return flat.reshape(scores.shape)


def posterior_entropy(posterior: np.ndarray) -> float:
    p = posterior[posterior > 0]
    return float(-(p * np.log2(p)).sum())


@dataclass
class StreamEmissions:
    """Per-packet statistics of a received stream against a fixed codebook."""

    log_em: np.ndarray  # (N, S) log P(y_t | s)
    best_msg: np.ndarray  # (N, S) nearest message within each state
    best_dist: np.ndarray  # (N, S) its distance (n + 1 for invalid states)


def stream_emissions(
    y_packed: np.ndarray, codebook: Codebook, p_b: float, chunk: int = 4096
) -> StreamEmissions:
    y_packed = np.asarray(y_packed, dtype=np.int64)
    parts = []
    for lo in range(0, y_packed.size, chunk):
        hist, best_msg, best_dist = distance_histograms(y_packed[lo : lo + chunk], codebook)
        log_em = emissions_from_histograms(hist, codebook.n_messages, p_b)
        parts.append((log_em, best_msg, best_dist))
    if not parts:
        S = codebook.n_states
        return StreamEmissions(np.zeros((0, S)), np.zeros((0, S), int), np.zeros((0, S), int))
    return StreamEmissions(*(np.concatenate(a) for a in zip(*parts)))


@dataclass
class SequenceDecoding:
    states: np.ndarray
    messages: np.ndarray
    priors: np.ndarray | None = None
    posteriors: np.ndarray | None = None  # marginals used for the decisions


def decode_stream(
    stats: StreamEmissions,
    transition: np.ndarray,
    initial_prior: np.ndarray,
    decoder: str,
    delay: int = 0,
) -> SequenceDecoding:
    """Decode a whole stream with a fixed codebook, channel and transition matrix.

    Gives the same decisions as calling ``map_decode`` / ``delayed_decode``
    packet by packet (beliefs propagated from the filtered posterior); the last
    ``delay`` packets use whatever future packets exist. The recursions run on
    max-shifted likelihoods, falling back to the log domain if a normalizer
    underflows. ``decoder`` is ``min-distance``, ``map`` or ``delayed``.
    """
    log_em, best_msg, best_dist = stats.log_em, stats.best_msg, stats.best_dist
    N, S = log_em.shape
    rows = np.arange(N)
    if decoder == "min-distance":
        states = np.argmin(best_dist, axis=1)
        posts = np.zeros((N, S))
        posts[rows, states] = 1.0
        return SequenceDecoding(states, best_msg[rows, states], None, posts)
    if decoder not in ("map", "delayed"):
        raise ParameterError(f"unknown decoder {decoder!r}")
    if decoder == "map":
        delay = 0

    # per-packet max-shifted likelihoods: the scaling cancels in every normalization
    shift = np.max(log_em, axis=1, keepdims=True)
    lik = np.exp(log_em - shift)
    priors = np.empty((N, S))
    filtered = np.empty((N, S))
    prior = np.asarray(initial_prior, dtype=float)
    for t in range(N):
        priors[t] = prior
        joint = prior * lik[t]
        total = joint.sum()
        if total > 0.0:
            filtered[t] = joint / total
        else:
            filtered[t], _ = _normalize(safe_log(prior) + log_em[t])
        prior = filtered[t] @ transition
        prior /= prior.sum()

    if delay == 0:
        marginals = filtered
    else:
        marginals = np.empty((N, S))
        padded = np.vstack([lik, np.ones((delay, S))])
        for lo in range(0, N, 4096):
            hi = min(N, lo + 4096)
            beta = np.ones((hi - lo, S))
            for i in range(delay, 0, -1):
                beta = (padded[lo + i : hi + i] * beta) @ transition.T
                beta /= beta.max(axis=1, keepdims=True)
            joint = filtered[lo:hi] * beta
            totals = joint.sum(axis=1, keepdims=True)
            bad = totals[:, 0] <= 0.0
            marginals[lo:hi] = joint / np.where(bad[:, None], 1.0, totals)
            for j in np.flatnonzero(bad):
                t = lo + j
                future = list(log_em[t + 1 : t + 1 + delay])
                _, marginals[t], _ = fixed_lag_posteriors(
                    safe_log(priors[t]), log_em[t], future, safe_log(transition)
                )
    states = np.argmax(marginals, axis=1)
    return SequenceDecoding(states, best_msg[rows, states], priors, marginals)


def decode_sequence(
    y_packed: np.ndarray,
    codebook: Codebook,
    p_b: float,
    transition: np.ndarray,
    initial_prior: np.ndarray,
    decoder: str,
    delay: int = 0,
) -> SequenceDecoding:
    return decode_stream(
        stream_emissions(y_packed, codebook, p_b), transition, initial_prior, decoder, delay
    )
