"""Sparse Markov sources: transition matrices, trajectories and time-varying chains."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ModelError, ParameterError

MAX_REGENERATIONS = 1000
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SourceTrajectoryStep:
    time: int
    state: int
    message: int


def nonzeros_per_row(n_states: int, density: float) -> int:
    """Number of nonzero entries each row gets for a target density."""
    if n_states < 1:
        raise ParameterError(f"need at least one state, got {n_states}")
    # small slack so that e.g. density=1/S survives float rounding
    if not (1.0 / n_states - 1e-12 <= density <= 1.0 + 1e-12):
        raise ParameterError(f"density {density} outside [1/S, 1] for S={n_states}")
    return max(1, min(n_states, int(np.floor(density * n_states + 0.5))))


def density(T: np.ndarray) -> float:
    return float(np.count_nonzero(T)) / T.size


def check_stochastic(T: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Raise ModelError unless T is a square row-stochastic matrix."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ModelError(f"transition matrix must be square, got shape {T.shape}")
    if np.any(T < 0):
        raise ModelError("transition matrix has negative entries")
    err = np.max(np.abs(T.sum(axis=1) - 1.0))
    if err > tol:
        raise ModelError(f"rows do not sum to 1 (max deviation {err:.3g})")


def is_ergodic(T: np.ndarray) -> bool:
    """True when the nonzero graph of T has exactly one closed communicating class.

    Every state of a finite chain reaches some closed class, so a unique closed
    class is reachable from everywhere and the stationary law is unique.
    """
    adj = np.asarray(T) > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = 0
    for c in range(n_comp):
        members = labels == c
        # closed iff no edge leaves the component
        if not adj[np.ix_(members, ~members)].any():
            closed += 1
    return closed == 1


def generate_sparse_transition(
    n_states: int, density: float, rng: np.random.Generator
) -> np.ndarray:
    """Random row-stochastic matrix with a fixed number of nonzeros per row.

    Each row gets ``round(density * S)`` nonzero entries at uniformly chosen
    columns, with magnitudes uniform on (0, 1] before normalization. Matrices
    failing the ergodicity check are discarded and redrawn.
    """
    k = nonzeros_per_row(n_states, density)
    for _ in range(MAX_REGENERATIONS):
        T = np.zeros((n_states, n_states))
        for row in range(n_states):
            cols = rng.choice(n_states, size=k, replace=False)
            T[row, cols] = 1.0 - rng.random(k)  # (0, 1]
        T /= T.sum(axis=1, keepdims=True)
        if is_ergodic(T):
            return T
    raise ModelError(
        f"no ergodic matrix after {MAX_REGENERATIONS} draws (S={n_states}, density={density})"
    )


def stationary_distribution(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    check_stochastic(T, tol=1e-9)
    if not is_ergodic(T):
        raise ModelError("transition matrix is not ergodic; stationary law is not unique")
    S = T.shape[0]
    A = np.vstack([T.T - np.eye(S), np.ones((1, S))])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    # one refinement sweep tightens the fixed-point residual
    pi = pi @ T
    pi /= pi.sum()
    residual = np.max(np.abs(pi @ T - pi))
    if residual > 1e-10:
        raise ModelError(f"stationary solve did not converge (residual {residual:.3g})")
    return pi


def _sample_index(row: np.ndarray, u: float) -> int:
    cum = np.cumsum(row)
    # scale u to the row total so rounding in the cumsum never yields index S
    return int(np.searchsorted(cum, u * cum[-1], side="right"))


def step(
    current_state: int,
    T: np.ndarray,
    n_messages: int,
    rng: np.random.Generator,
    time: int = 0,
) -> SourceTrajectoryStep:
    """Advance the chain one packet and draw a uniform message."""
    S = T.shape[0]
    if not 0 <= current_state < S:
        raise ParameterError(f"state {current_state} out of range for S={S}")
    nxt = _sample_index(T[current_state], rng.random())
    return SourceTrajectoryStep(time, nxt, int(rng.integers(n_messages)))


def dynamic_transition(T1: np.ndarray, T2: np.ndarray, t: int, t_total: int) -> np.ndarray:
    """Convex blend ``(1 - t/t_total) T1 + (t/t_total) T2``."""
    if T1.shape != T2.shape:
        raise ParameterError(f"shape mismatch {T1.shape} vs {T2.shape}")
    if t_total <= 0 or not 0 <= t <= t_total:
        raise ParameterError(f"need 0 <= t <= t_total, got t={t}, t_total={t_total}")
    if t == 0:
        return T1.copy()
    if t == t_total:
        return T2.copy()
    w = t / t_total
    return (1.0 - w) * T1 + w * T2


def generate_trajectory(
    transition: np.ndarray | Callable[[int], np.ndarray],
    n_messages: int,
    length: int,
    rng: np.random.Generator,
    initial: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``length`` (state, message) pairs.

    ``transition`` is either a fixed matrix or a callable ``t -> T(t)`` giving
    the matrix that governs the move into packet ``t``. The first state is drawn
    from ``initial`` (uniform when omitted).
    """
    fixed = not callable(transition)
    T0 = transition if fixed else transition(0)
    S = T0.shape[0]
    if initial is None:
        initial = np.full(S, 1.0 / S)
    u = rng.random(length)
    messages = rng.integers(0, n_messages, size=length)
    states = np.empty(length, dtype=np.int64)
    if length == 0:
        return states, messages
    states[0] = _sample_index(initial, u[0])
    if fixed:
        cum = np.cumsum(T0, axis=1)
        for t in range(1, length):
            row = cum[states[t - 1]]
            states[t] = np.searchsorted(row, u[t] * row[-1], side="right")
    else:
        for t in range(1, length):
            states[t] = _sample_index(transition(t)[states[t - 1]], u[t])
    return states, messages


def format_matrix(T: np.ndarray) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in T)


def save_matrix(path: str | Path, T: np.ndarray, header: str | None = None) -> None:
    text = format_matrix(T)
    if header:
        text = "".join(f"# {line}\n" for line in header.splitlines()) + text
    Path(path).write_text(text)


def parse_matrix(text: str) -> np.ndarray:
    rows = [
        [float(tok) for tok in line.split()]
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    return np.array(rows, dtype=float)


def load_matrix(path: str | Path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())
