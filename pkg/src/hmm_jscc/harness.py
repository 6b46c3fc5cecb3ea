"""Monte Carlo experiment engine: sequences, sweeps and CSV rows.

Every sequence draws its transition matrix, state/message trajectory, channel
noise and pilot noise from independent streams spawned from
``SeedSequence(seed + sequence_index)``. The channel noise is generated as
uniforms compared against ``p_b``, so configurations differing only in scheme,
decoder or ``p_b`` see common random numbers.
"""

from __future__ import annotations

import csv
import io
import itertools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .channel import pack_bits, packed_distance, unpack_bits
from .codec.codebook import Codebook, ConditionalCodebook, Scheme, build_codebook
from .decoder import (
    distance_histograms,
    decode_stream,
    emissions_from_histograms,
    fixed_lag_posteriors,
    histogram_weights,
    packed_log_emissions,
    posterior_entropy,
    propagate,
    safe_log,
    stream_emissions,
)
from .errors import ParameterError
from .estimation import (
    EstimatorState,
    observe_transition,
    refresh_pb,
    seed_pilot,
    transition_estimate,
)
from .source import (
    dynamic_transition,
    generate_sparse_transition,
    generate_trajectory,
    stationary_distribution,
)

MODES = ("steady", "transient", "dynamic")
DECODERS = ("min-distance", "map", "delayed")
KNOWLEDGE = ("learned", "perfect")
JOBS_ENV = "HMM_JSCC_JOBS"
# decoder-side clamp on the estimated flip probability
PB_FLOOR, PB_CEIL = 1e-4, 0.499

CSV_HEADER = (
    "mode,scheme,decoder,n,S,M,pb,density,delay,tc,alpha,window,seq,bucket,packets,errors,per"
).split(",")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "steady"
    scheme: str = "punctured"
    decoder: str = "delayed"
    n: int = 20
    S: int = 32
    M: int = 32
    pb: float = 0.05
    density: float = 0.125
    delay: int = 1
    tc: int = 2
    alpha: float = 0.1
    window: int = 1000
    sequences: int = 10
    packets: int = 100_000
    seed: int = 0
    bucket: int = 100
    pilot_packets: int = 50
    # transient/dynamic only: learn T and p_b online, or give the receiver the truth
    knowledge: str = "learned"
    learn_from: str = "decoded"  # "truth" feeds true transitions to the estimator
    propagate_from: str = "filtered"

    def validate(self) -> ExperimentConfig:
        for name in ("S", "M"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                raise ParameterError(f"{name}={v} must be a power of two")
        if self.mode not in MODES:
            raise ParameterError(f"unknown mode {self.mode!r}")
        scheme = Scheme(self.scheme)
        if self.decoder not in DECODERS:
            raise ParameterError(f"unknown decoder {self.decoder!r}")
        if self.knowledge not in KNOWLEDGE:
            raise ParameterError(f"unknown knowledge setting {self.knowledge!r}")
        if self.learn_from not in ("decoded", "truth"):
            raise ParameterError(f"unknown learn_from {self.learn_from!r}")
        if self.mode != "steady" and scheme.compressed:
            raise ParameterError(
                f"{scheme.value} compression needs known source statistics; "
                f"not available in {self.mode} mode"
            )
        bs, bm = self.S.bit_length() - 1, self.M.bit_length() - 1
        if bs + bm > self.n + bs:
            raise ParameterError(f"payload of {bs + bm} bits cannot fit n={self.n}")
        if not 0.0 <= self.pb <= 1.0:
            raise ParameterError(f"pb={self.pb} outside [0, 1]")
        if not (1.0 / self.S - 1e-12 <= self.density <= 1.0 + 1e-12):
            raise ParameterError(f"density={self.density} outside [1/S, 1]")
        if self.delay < 0 or self.tc < 1 or self.window < 1 or self.alpha <= 0:
            raise ParameterError("delay >= 0, tc >= 1, window >= 1 and alpha > 0 required")
        if self.sequences < 1 or self.packets < 1 or self.bucket < 1:
            raise ParameterError("sequences, packets and bucket must be positive")
        return self

    @property
    def effective_delay(self) -> int:
        return self.delay if self.decoder == "delayed" else 0

    @property
    def mode_label(self) -> str:
        if self.mode != "steady" and self.knowledge == "perfect":
            return f"{self.mode}-perfect"
        return self.mode


@dataclass
class ResultRow:
    mode: str
    scheme: str
    decoder: str
    n: int
    S: int
    M: int
    pb: float
    density: float
    delay: int
    tc: int
    alpha: float
    window: int
    seq: int | str
    bucket: int | str
    packets: int
    errors: int
    wall_time: float = 0.0

    @property
    def per(self) -> float:
        return self.errors / self.packets if self.packets else 0.0

    @property
    def stderr(self) -> float:
        """Binomial standard error of the packet error rate."""
        p = self.per
        return float(np.sqrt(p * (1.0 - p) / self.packets)) if self.packets else 0.0

    def csv_fields(self) -> list[str]:
        return [
            self.mode,
            self.scheme,
            self.decoder,
            str(self.n),
            str(self.S),
            str(self.M),
            f"{self.pb:.10g}",
            f"{self.density:.10g}",
            str(self.delay),
            str(self.tc),
            f"{self.alpha:.10g}",
            str(self.window),
            str(self.seq),
            str(self.bucket),
            str(self.packets),
            str(self.errors),
            f"{self.per:.10g}",
        ]


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.csv_fields())
    return buf.getvalue()


def _row(cfg: ExperimentConfig, seq, bucket, packets: int, errors: int, wall: float = 0.0):
    return ResultRow(
        cfg.mode_label,
        cfg.scheme,
        cfg.decoder,
        cfg.n,
        cfg.S,
        cfg.M,
        cfg.pb,
        cfg.density,
        cfg.effective_delay,
        cfg.tc,
        cfg.alpha,
        cfg.window,
        seq,
        bucket,
        packets,
        errors,
        wall,
    )


@dataclass
class Stream:
    """Everything the transmitter side of one sequence produces."""

    transition: np.ndarray | None  # steady / transient source matrix
    transitions: tuple[np.ndarray, np.ndarray] | None  # dynamic endpoints
    initial: np.ndarray  # law of the first state, also the receiver's first prior
    states: np.ndarray
    messages: np.ndarray
    noise_uniforms: np.ndarray  # (packets, n)
    pilot_uniforms: np.ndarray  # (pilot_packets, n)

    def transition_into(self, t: int, t_total: int) -> np.ndarray:
        if self.transitions is None:
            return self.transition
        return dynamic_transition(*self.transitions, min(t, t_total), t_total)


def make_stream(cfg: ExperimentConfig, index: int) -> Stream:
    rng_matrix, rng_matrix2, rng_source, rng_channel, rng_pilot = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed + index).spawn(5)
    )
    T1 = generate_sparse_transition(cfg.S, cfg.density, rng_matrix)
    if cfg.mode == "dynamic":
        T2 = generate_sparse_transition(cfg.S, cfg.density, rng_matrix2)
        initial = np.full(cfg.S, 1.0 / cfg.S)
        pair = (T1, T2)

        def into(t: int) -> np.ndarray:
            return dynamic_transition(T1, T2, t, cfg.packets)

        states, messages = generate_trajectory(into, cfg.M, cfg.packets, rng_source, initial)
        T1 = None
    else:
        pair = None
        if cfg.mode == "steady":
            initial = stationary_distribution(T1)
        else:
            initial = np.full(cfg.S, 1.0 / cfg.S)
        states, messages = generate_trajectory(T1, cfg.M, cfg.packets, rng_source, initial)
    noise = rng_channel.random((cfg.packets, cfg.n))
    pilot = rng_pilot.random((cfg.pilot_packets, cfg.n))
    return Stream(T1, pair, initial, states, messages, noise, pilot)


def _codebook(cfg: ExperimentConfig, stream: Stream) -> Codebook | ConditionalCodebook:
    return build_codebook(
        cfg.scheme,
        cfg.S,
        cfg.M,
        cfg.n,
        transition=stream.transition,
        stationary=stream.initial if cfg.scheme == Scheme.STATIONARY.value else None,
        check_interval=cfg.tc,
    )


def _transmitted(cfg: ExperimentConfig, stream: Stream, book) -> np.ndarray:
    s, m = stream.states, stream.messages
    if isinstance(book, ConditionalCodebook):
        prev = np.concatenate([[0], s[:-1]])
        x = book.context_packed[prev, s, m]
        check = np.arange(s.size) % book.check_interval == 0
        x[check] = book.check.packed[s[check], m[check]]
        return x
    return book.packed[s, m]


def _received(cfg: ExperimentConfig, stream: Stream, book) -> np.ndarray:
    flips = pack_bits((stream.noise_uniforms < cfg.pb).astype(np.uint8))
    return _transmitted(cfg, stream, book) ^ flips


@dataclass
class SequenceResult:
    errors: np.ndarray  # per-packet joint (state, message) error indicator
    states: np.ndarray
    messages: np.ndarray
    entropies: np.ndarray | None
    wall_time: float

    def bucketed(self, width: int) -> tuple[np.ndarray, np.ndarray]:
        n_buckets = -(-self.errors.size // width)
        idx = np.arange(self.errors.size) // width
        errs = np.bincount(idx, weights=self.errors, minlength=n_buckets).astype(np.int64)
        pkts = np.bincount(idx, minlength=n_buckets).astype(np.int64)
        return errs, pkts


def _online_decode(
    cfg: ExperimentConfig, stream: Stream, book, y: np.ndarray, learned: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Packet-by-packet receiver: time-varying T, online learning or context codebooks."""
    N, S, n, M = y.size, cfg.S, cfg.n, cfg.M
    delay = cfg.effective_delay
    conditional = isinstance(book, ConditionalCodebook)
    log_m = np.log(M)
    if not conditional:
        hist, best_msg, best_dist = distance_histograms(y, book)
        hist = hist.astype(float)

    est = None
    if learned:
        est = EstimatorState(S, alpha=cfg.alpha, window=cfg.window)
        zeros = np.zeros(n, dtype=np.uint8)
        pilots = (stream.pilot_uniforms < cfg.pb).astype(np.uint8)
        seed_pilot(est, [(zeros, p) for p in pilots])

    s_hat = np.zeros(N, dtype=np.int64)
    m_hat = np.zeros(N, dtype=np.int64)
    entropy = np.zeros(N)
    prior = stream.initial.copy() if not learned else np.full(S, 1.0 / S)
    prev_hat = None

    weights_cache: dict[float, tuple] = {}

    def slot_emission(k: int, p_b: float, context: int | None, pair: bool) -> np.ndarray:
        if not conditional:
            if p_b not in weights_cache:
                weights_cache.clear()
                weights_cache[p_b] = histogram_weights(n, p_b)
            weights = weights_cache[p_b]
            if weights is None:
                return emissions_from_histograms(hist[k], M, p_b)
            with np.errstate(divide="ignore"):
                return np.log(hist[k] @ weights[0]) + (weights[1] - log_m)
        if book.is_check_packet(k):
            return packed_log_emissions(y[k], book.check.packed, book.check.valid, p_b, n)
        if pair:
            return packed_log_emissions(y[k], book.context_packed, book.context_valid, p_b, n)
        cb = book.contexts[context]
        return packed_log_emissions(y[k], cb.packed, cb.valid, p_b, n)

    for t in range(N):
        if learned:
            p_b = min(max(est.pb_estimate, PB_FLOOR), PB_CEIL)
            T_hat = transition_estimate(est)
            log_T_hat = np.log(T_hat)
        else:
            p_b = cfg.pb
        current = book.codebook_for(t, prev_hat) if conditional else book

        if cfg.decoder == "min-distance":
            if conditional:
                d = packed_distance(current.packed, y[t])
                d = np.where(current.valid[:, None], d, n + 1)
                s, m = divmod(int(np.argmin(d)), M)
            else:
                s = int(np.argmin(best_dist[t]))
                m = int(best_msg[t, s])
            entropy[t] = 0.0
        else:
            em0 = slot_emission(t, p_b, prev_hat, pair=False)
            future_idx = range(t + 1, min(N, t + delay + 1))
            future = [slot_emission(k, p_b, None, pair=True) for k in future_idx]
            if learned:
                log_Ts = [log_T_hat] * len(future)
            else:
                log_Ts = [safe_log(stream.transition_into(k, cfg.packets)) for k in future_idx]
            filtered, marginal, _ = fixed_lag_posteriors(safe_log(prior), em0, future, log_Ts)
            s = int(np.argmax(marginal))
            if conditional:
                m = int(np.argmin(packed_distance(current.packed[s], y[t])))
            else:
                m = int(best_msg[t, s])
            entropy[t] = posterior_entropy(marginal)
            src = filtered if cfg.propagate_from == "filtered" else marginal
            T_next = T_hat if learned else stream.transition_into(t + 1, cfg.packets)
            prior = propagate(src, T_next)

        if learned:
            if t > 0:
                if cfg.learn_from == "truth":
                    observe_transition(est, int(stream.states[t - 1]), int(stream.states[t]))
                else:
                    observe_transition(est, prev_hat, s)
            refresh_pb(est, unpack_bits(y[t], n), unpack_bits(current.packed[s, m], n))
        s_hat[t], m_hat[t] = s, m
        prev_hat = s
    return s_hat, m_hat, entropy


def _decode_configs(configs: Sequence[ExperimentConfig], index: int) -> list[SequenceResult]:
    """Run several configurations that share one transmitted stream."""
    base = configs[0]
    stream = make_stream(base, index)
    book = _codebook(base, stream)
    y = _received(base, stream, book)
    stats = None
    out = []
    for cfg in configs:
        t0 = time.perf_counter()
        online = (
            cfg.mode != "steady"
            or isinstance(book, ConditionalCodebook)
            or cfg.propagate_from != "filtered"
        )
        if online:
            learned = cfg.mode != "steady" and cfg.knowledge == "learned"
            s_hat, m_hat, ent = _online_decode(cfg, stream, book, y, learned)
        else:
            if stats is None:
                stats = stream_emissions(y, book, cfg.pb)
            dec = decode_stream(stats, stream.transition, stream.initial, cfg.decoder, cfg.delay)
            s_hat, m_hat = dec.states, dec.messages
            p = dec.posteriors
            with np.errstate(divide="ignore", invalid="ignore"):
                ent = -np.nansum(np.where(p > 0, p * np.log2(p), 0.0), axis=1)
        errors = (s_hat != stream.states) | (m_hat != stream.messages)
        out.append(SequenceResult(errors, s_hat, m_hat, ent, time.perf_counter() - t0))
    return out


def run_sequence(config: ExperimentConfig, sequence_index: int, trace=None):
    """Simulate one sequence; returns the per-packet result and its aggregate row.

    ``trace`` (a text file object) receives the per-packet diagnostic CSV.
    """
    config.validate()
    res = _decode_configs([config], sequence_index)[0]
    if trace is not None:
        stream = make_stream(config, sequence_index)
        write_trace(trace, stream, res)
    row = _row(
        config, sequence_index, "", res.errors.size, int(res.errors.sum()), res.wall_time
    )
    return res, row


def write_trace(fh, stream: Stream, res: SequenceResult) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "true_state", "true_msg", "est_state", "est_msg", "posterior_entropy"])
    for t in range(res.errors.size):
        w.writerow(
            [
                t,
                int(stream.states[t]),
                int(stream.messages[t]),
                int(res.states[t]),
                int(res.messages[t]),
                f"{res.entropies[t]:.6g}",
            ]
        )


SWEEPABLE = ("scheme", "decoder", "pb", "density", "delay", "knowledge")
_STREAM_KEYS = ("decoder", "delay", "knowledge", "propagate_from", "learn_from", "alpha", "window")


def expand(config: ExperimentConfig, sweeps: Mapping[str, Sequence]) -> list[ExperimentConfig]:
    """Cartesian product of ``sweeps`` applied on top of ``config``."""
    for key, values in sweeps.items():
        if key not in SWEEPABLE:
            raise ParameterError(f"cannot sweep {key!r}")
        if not values:
            raise ParameterError(f"empty sweep list for {key!r}")
    keys = list(sweeps)
    out = []
    seen = set()
    for combo in itertools.product(*(sweeps[k] for k in keys)):
        cfg = replace(config, **dict(zip(keys, combo))).validate()
        if cfg.decoder != "delayed" and cfg.delay != config.delay:
            # delay is irrelevant without delayed decoding; keep one copy
            cfg = replace(cfg, delay=config.delay)
        key = astuple_key(cfg)
        if key not in seen:
            seen.add(key)
            out.append(cfg)
    return out


def astuple_key(cfg: ExperimentConfig) -> tuple:
    d = asdict(cfg)
    if cfg.decoder != "delayed":
        d["delay"] = 0
    return tuple(d[f.name] for f in fields(cfg))


def _stream_key(cfg: ExperimentConfig) -> tuple:
    d = asdict(cfg)
    return tuple(v for k, v in d.items() if k not in _STREAM_KEYS)


def _work(unit):
    configs, index = unit
    return index, _decode_configs(configs, index)


def default_jobs() -> int:
    value = os.environ.get(JOBS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def run_experiment(
    config: ExperimentConfig,
    sweeps: Mapping[str, Sequence] | None = None,
    jobs: int | None = None,
    per_sequence: bool = False,
    trace_dir: str | None = None,
) -> list[ResultRow]:
    """Run every sweep point over ``config.sequences`` sequences.

    Steady mode yields one aggregate row per sweep point (``seq == "all"``);
    transient and dynamic modes yield one row per packet bucket, pooled over
    sequences. ``per_sequence`` adds the individual sequence rows.
    """
    configs = expand(config.validate(), sweeps or {})
    groups: dict[tuple, list[int]] = {}
    for i, cfg in enumerate(configs):
        groups.setdefault(_stream_key(cfg), []).append(i)
    units = [
        ([configs[i] for i in members], seq)
        for members in groups.values()
        for seq in range(config.sequences)
    ]
    jobs = default_jobs() if jobs is None else jobs
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_work, units))
    else:
        outputs = [_work(u) for u in units]

    # results[(config index, seq)] -> SequenceResult, independent of scheduling
    results: dict[tuple[int, int], SequenceResult] = {}
    for (cfgs, _), (seq, res_list) in zip(units, outputs):
        members = groups[_stream_key(cfgs[0])]
        for i, res in zip(members, res_list):
            results[(i, seq)] = res

    if trace_dir is not None:
        os.makedirs(trace_dir, exist_ok=True)
        for (i, seq), res in sorted(results.items()):
            cfg = configs[i]
            name = (
                f"{cfg.mode_label}_{cfg.scheme}_{cfg.decoder}_d{cfg.effective_delay}"
                f"_pb{cfg.pb:g}_rho{cfg.density:g}_seq{seq}.csv"
            )
            with open(os.path.join(trace_dir, name), "w") as fh:
                write_trace(fh, make_stream(cfg, seq), res)

    rows: list[ResultRow] = []
    for i, cfg in enumerate(configs):
        seq_results = [results[(i, seq)] for seq in range(cfg.sequences)]
        wall = sum(r.wall_time for r in seq_results)
        if cfg.mode == "steady":
            if per_sequence:
                for seq, r in enumerate(seq_results):
                    rows.append(_row(cfg, seq, "", r.errors.size, int(r.errors.sum())))
            total = sum(r.errors.size for r in seq_results)
            errs = sum(int(r.errors.sum()) for r in seq_results)
            rows.append(_row(cfg, "all", "", total, errs, wall))
        else:
            per_bucket = [r.bucketed(cfg.bucket) for r in seq_results]
            if per_sequence:
                for seq, (e, p) in enumerate(per_bucket):
                    for b in range(e.size):
                        rows.append(_row(cfg, seq, b, int(p[b]), int(e[b])))
            errs = np.sum([e for e, _ in per_bucket], axis=0)
            pkts = np.sum([p for _, p in per_bucket], axis=0)
            for b in range(errs.size):
                rows.append(_row(cfg, "all", b, int(pkts[b]), int(errs[b]), wall))
    return rows
