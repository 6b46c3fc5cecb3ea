"""Online estimation of the channel flip probability and the source transition matrix."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import hamming_distance
from .errors import ParameterError

DEFAULT_ALPHA = 0.1
DEFAULT_WINDOW = 1000


@dataclass
class EstimatorState:
    """Sliding-window counts of decoded transitions and observed bit flips.

    Both windows hold the most recent ``window`` packets; ``counts`` always
    equals the tally of transitions in ``transitions``.
    """

    n_states: int
    alpha: float = DEFAULT_ALPHA
    window: int = DEFAULT_WINDOW
    transitions: deque = field(default_factory=deque)
    counts: np.ndarray = None
    flips: deque = field(default_factory=deque)
    flip_total: int = 0
    bit_total: int = 0
    pilot_stats: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")
        if self.counts is None:
            self.counts = np.zeros((self.n_states, self.n_states), dtype=np.int64)

    @property
    def pb_estimate(self) -> float:
        return self.flip_total / self.bit_total if self.bit_total else 0.0


def estimate_pb_pilot(pilot_observations) -> float:
    """Fraction of flipped bits over ``(sent, received)`` pilot pairs."""
    flips = bits = 0
    for sent, received in pilot_observations:
        flips += hamming_distance(sent, received)
        bits += np.asarray(sent).size
    if bits == 0:
        raise ParameterError("no pilot observations")
    return flips / bits


def _push_flips(est: EstimatorState, flips: int, bits: int) -> None:
    est.flips.append((flips, bits))
    est.flip_total += flips
    est.bit_total += bits
    if len(est.flips) > est.window:
        old_f, old_b = est.flips.popleft()
        est.flip_total -= old_f
        est.bit_total -= old_b


def seed_pilot(est: EstimatorState, pilot_observations) -> EstimatorState:
    """Load pilot packets into the flip window; they age out like any other packet."""
    total_f = total_b = 0
    for sent, received in pilot_observations:
        f = hamming_distance(sent, received)
        b = np.asarray(sent).size
        _push_flips(est, f, b)
        total_f += f
        total_b += b
    if total_b == 0:
        raise ParameterError("no pilot observations")
    est.pilot_stats = (total_f, total_b)
    return est


def observe_transition(est: EstimatorState, from_state: int, to_state: int) -> EstimatorState:
    S = est.n_states
    if not (0 <= from_state < S and 0 <= to_state < S):
        raise ParameterError(f"transition ({from_state}, {to_state}) outside {S} states")
    est.transitions.append((from_state, to_state))
    est.counts[from_state, to_state] += 1
    if len(est.transitions) > est.window:
        a, b = est.transitions.popleft()
        est.counts[a, b] -= 1
    return est


def transition_estimate(est: EstimatorState) -> np.ndarray:
    """Additively smoothed transition matrix ``(N + alpha) / sum(N + alpha)``."""
    smoothed = est.counts + est.alpha
    return smoothed / smoothed.sum(axis=1, keepdims=True)


def refresh_pb(est: EstimatorState, y, reencoded) -> EstimatorState:
    """Add the flips between ``y`` and the re-encoded decision to the flip window."""
    _push_flips(est, hamming_distance(y, reencoded), np.asarray(y).size)
    return est


def snapshot(est: EstimatorState) -> str:
    from .source import format_matrix

    return f"# pb_estimate {est.pb_estimate!r}\n" + format_matrix(transition_estimate(est))
