"""Acceptance suite: one test per criterion, each reporting PASS or FAIL.

Tolerances are the stated ones. Standard errors are binomial, sqrt(p(1-p)/N);
differences use the root sum of squares of the two standard errors, which
ignores the positive correlation induced by common random numbers and is
therefore conservative.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from hmm_jscc import harness
from hmm_jscc.channel import transmit
from hmm_jscc.cli import main
from hmm_jscc.codec import build_codebook
from hmm_jscc.decoder import (
    BeliefState,
    decode_stream,
    delayed_decode,
    map_decode,
    min_distance_decode,
    stream_emissions,
)
from hmm_jscc.estimation import (
    EstimatorState,
    estimate_pb_pilot,
    observe_transition,
    transition_estimate,
)
from hmm_jscc.harness import ExperimentConfig, run_experiment
from hmm_jscc.source import generate_sparse_transition, generate_trajectory

from oracles import enumerate_marginal, random_codebook, random_stochastic, random_word

pytestmark = pytest.mark.slow

STEADY = ExperimentConfig(n=20, S=32, M=32, pb=0.05, density=0.125, delay=1)


def diff_se(a, b):
    return float(np.hypot(a.stderr, b.stderr))


def table(rows, *keys):
    return {tuple(getattr(r, k) for k in keys): r for r in rows}


def test_criterion_1_delayed_decoder_matches_enumeration(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, argmax_misses = 0.0, 0
    for _ in range(100):
        S = int(rng.integers(2, 9))
        M = int(rng.choice([1, 2, 4]))
        n = int(rng.integers(max(5, int(np.ceil(np.log2(S * M)))), 11))
        book = random_codebook(S, M, n, rng)
        T = random_stochastic(S, rng)
        prior = rng.dirichlet(np.ones(S))
        p_b = float(rng.uniform(0.005, 0.4))
        ys = [random_word(n, rng) for _ in range(2)]
        res, _ = delayed_decode(ys, BeliefState(prior), T, book, p_b, 1)
        oracle = enumerate_marginal(ys, prior, T, [book, book], p_b)
        worst = max(worst, float(np.max(np.abs(res.posterior - oracle))))
        argmax_misses += res.state != int(np.argmax(oracle))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and argmax_misses == 0 and elapsed < 60
    criterion(1, ok, f"max marginal error {worst:.2e}, argmax mismatches {argmax_misses}, {elapsed:.1f}s")


def test_criterion_2_flat_prior_reduction(criterion):
    rng = np.random.default_rng(7)
    T = np.full((32, 32), 1 / 32)
    details, total = [], 0
    for scheme in ("legacy", "punctured"):
        book = build_codebook(scheme, 32, 32, 20)
        mismatches = 0
        for _ in range(10_000):
            y = random_word(20, rng)
            res, _ = map_decode(y, BeliefState.uniform(32), book, 0.05, T)
            md = min_distance_decode(y, book)
            mismatches += (res.state, res.message) != (md.state, md.message)
        total += mismatches
        details.append(f"{scheme} {mismatches}/10000 differ")
    criterion(2, total == 0, ", ".join(details))


def test_criterion_3_normalization(criterion):
    worst, failures = 0.0, 0
    for p_b in (0.01, 0.05, 0.09):
        for scheme in ("legacy", "punctured"):
            cfg = replace(STEADY, scheme=scheme, pb=p_b, packets=100_000)
            stream = harness.make_stream(cfg, 0)
            book = harness._codebook(cfg, stream)
            y = harness._received(cfg, stream, book)
            stats = stream_emissions(y, book, p_b)
            for decoder in ("map", "delayed"):
                dec = decode_stream(stats, stream.transition, stream.initial, decoder, 1)
                for arr in (dec.priors, dec.posteriors):
                    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                        failures += 1
                    worst = max(worst, float(np.max(np.abs(arr.sum(axis=1) - 1.0))))
    ok = worst < 1e-9 and failures == 0
    criterion(3, ok, f"max |sum - 1| = {worst:.1e} over 1.2e6 vectors, {failures} non-finite")


def test_criterion_4_ordering(criterion):
    cfg = replace(STEADY, sequences=10, packets=10_000, seed=101)
    rows = run_experiment(
        cfg, {"scheme": ["legacy", "punctured"], "decoder": ["min-distance", "map", "delayed"]}
    )
    t = table(rows, "scheme", "decoder")
    checks, parts = [], []
    for scheme in ("legacy", "punctured"):
        md, mp, dl = t[(scheme, "min-distance")], t[(scheme, "map")], t[(scheme, "delayed")]
        checks.append(md.per - mp.per > 3 * diff_se(md, mp))
        checks.append(mp.per - dl.per > 3 * diff_se(mp, dl))
        parts.append(f"{scheme} {md.per:.4f} > {mp.per:.4f} > {dl.per:.4f}")
    leg, pun = t[("legacy", "delayed")], t[("punctured", "delayed")]
    checks.append(leg.per - pun.per > 3 * diff_se(leg, pun))
    parts.append(f"delayed punctured {pun.per:.4f} < legacy {leg.per:.4f}")
    criterion(4, all(checks), f"{'; '.join(parts)}; {rows[0].packets} packets each")


def test_criterion_5_density_trend(criterion):
    densities = [0.0625, 0.125, 0.25, 0.5, 1.0]
    cfg = replace(STEADY, sequences=5, packets=20_000, seed=11)
    rows = run_experiment(
        cfg,
        {
            "scheme": ["legacy", "punctured"],
            "decoder": ["min-distance", "map", "delayed"],
            "density": densities,
        },
    )
    t = table(rows, "scheme", "decoder", "density")
    problems = []
    for scheme in ("legacy", "punctured"):
        for decoder in ("map", "delayed"):
            curve = [t[(scheme, decoder, d)] for d in densities]
            for a, b in zip(curve, curve[1:]):
                if b.per < a.per - 2 * diff_se(a, b):
                    problems.append(f"{scheme}/{decoder} drops at density {b.density}")
        flat = [t[(scheme, "min-distance", d)] for d in densities]
        pooled = sum(r.errors for r in flat) / sum(r.packets for r in flat)
        for r in flat:
            if abs(r.per - pooled) > 3 * r.stderr:
                problems.append(f"{scheme}/min-distance not flat at {r.density}")
    for decoder in ("map", "delayed"):
        for d in (0.0625, 0.125):
            leg, pun = t[("legacy", decoder, d)], t[("punctured", decoder, d)]
            if not leg.per - pun.per > 2 * diff_se(leg, pun):
                problems.append(f"punctured not ahead for {decoder} at {d}")
        adv_sparse = t[("legacy", decoder, 0.0625)].per - t[("punctured", decoder, 0.0625)].per
        adv_dense = t[("legacy", decoder, 1.0)].per - t[("punctured", decoder, 1.0)].per
        if not adv_dense < adv_sparse:
            problems.append(f"advantage does not shrink for {decoder}")
    curve = " ".join(f"{t[('punctured', 'delayed', d)].per:.4f}" for d in densities)
    adv = t[("legacy", "delayed", 1.0)].per - t[("punctured", "delayed", 1.0)].per
    detail = f"punctured/delayed {curve}; legacy minus punctured at density 1: {adv:+.4f}"
    criterion(5, not problems, "; ".join(problems) or detail)


def test_criterion_6_delay_saturation(criterion):
    cfg = replace(STEADY, sequences=10, packets=10_000, seed=21, decoder="delayed")
    rows = run_experiment(cfg, {"scheme": ["legacy", "punctured"], "delay": [0, 1, 2]})
    t = table(rows, "scheme", "delay")
    ok, parts = True, []
    for scheme in ("legacy", "punctured"):
        p0, p1, p2 = (t[(scheme, d)].per for d in (0, 1, 2))
        first = (p0 - p1) / p0
        second = (p1 - p2) / p1
        ok &= first >= 5 * second
        parts.append(f"{scheme} 0->1 {first:.3f} vs 1->2 {second:.3f}")
    criterion(6, ok, "; ".join(parts))


def test_criterion_7_learning_transient(criterion):
    cfg = ExperimentConfig(
        mode="transient", density=0.25, sequences=100, packets=2000, bucket=100, seed=31
    )
    rows = run_experiment(
        cfg, {"scheme": ["legacy", "punctured"], "knowledge": ["learned", "perfect"]}
    )
    ok, parts = True, []
    for scheme in ("legacy", "punctured"):
        learned = [r for r in rows if r.scheme == scheme and r.mode == "transient"]
        perfect = [r for r in rows if r.scheme == scheme and r.mode == "transient-perfect"]
        reference = sum(r.errors for r in perfect) / sum(r.packets for r in perfect)
        last = learned[-1]  # packets 1900-1999
        gap = (last.per - reference) / reference
        ok &= abs(gap) <= 0.2
        parts.append(
            f"{scheme} learned {last.per:.4f} at 2000 packets vs perfect {reference:.4f} ({gap:+.0%})"
        )
    criterion(7, ok, "; ".join(parts))


def test_criterion_8_dynamic_source(criterion):
    cfg = ExperimentConfig(
        mode="dynamic", scheme="punctured", density=0.125, sequences=50, packets=10_000,
        bucket=1000, seed=41,
    )
    rows = run_experiment(cfg, {"knowledge": ["learned", "perfect"]})
    learned = [r for r in rows if r.mode == "dynamic"]
    perfect = [r for r in rows if r.mode == "dynamic-perfect"]

    def pooled(curve, lo, hi):
        errs = sum(r.errors for r in curve[lo:hi])
        pkts = sum(r.packets for r in curve[lo:hi])
        p = errs / pkts
        return p, np.sqrt(p * (1 - p) / pkts)

    problems = []
    # mid-run bulge; the learned curve's first bucket holds the learning transient
    mid_p, mid_se = pooled(perfect, 3, 7)
    for lo, hi in ((0, 1), (9, 10)):
        edge, edge_se = pooled(perfect, lo, hi)
        if not mid_p - edge > 2 * np.hypot(mid_se, edge_se):
            problems.append(f"perfect curve has no bulge against bucket {lo}")
    mid_l, mid_l_se = pooled(learned, 3, 7)
    end_l, end_l_se = pooled(learned, 9, 10)
    if not mid_l - end_l > 2 * np.hypot(mid_l_se, end_l_se):
        problems.append("learned curve has no bulge")
    # bounded gap: no bucket after the first beyond 2.5x, and no drift
    ratios = [l.per / p.per for l, p in zip(learned[1:], perfect[1:])]
    if max(ratios) > 2.5:
        problems.append(f"learned/perfect ratio reaches {max(ratios):.2f}")
    gap_early = pooled(learned, 1, 5)[0] - pooled(perfect, 1, 5)[0]
    gap_late = pooled(learned, 5, 10)[0] - pooled(perfect, 5, 10)[0]
    drift_se = np.hypot(pooled(learned, 5, 10)[1], pooled(perfect, 5, 10)[1])
    if gap_late > gap_early + 3 * drift_se:
        problems.append("gap grows over the run")
    detail = (
        f"perfect edges {perfect[0].per:.4f}/{perfect[-1].per:.4f} mid {mid_p:.4f}; "
        f"learned mid {mid_l:.4f} end {end_l:.4f}; max ratio {max(ratios):.2f}"
    )
    criterion(8, not problems, "; ".join(problems + [detail]))


def test_criterion_9_estimator(criterion):
    est = EstimatorState(2, alpha=0.1)
    est.counts[:] = [[8, 2], [0, 0]]
    T_hat = transition_estimate(est)
    substitution = T_hat[0, 0] == 8.1 / 10.2 and T_hat[0, 1] == 2.1 / 10.2
    substitution &= bool(np.all(transition_estimate(EstimatorState(5)) == 0.2))

    rng = np.random.default_rng(51)
    T = generate_sparse_transition(32, 0.125, rng)
    states, _ = generate_trajectory(T, 32, 10_001, rng)
    est = EstimatorState(32, alpha=0.1, window=1000)
    for a, b in zip(states[:-1], states[1:]):
        observe_transition(est, int(a), int(b))
    t_err = float(np.max(np.abs(transition_estimate(est) - T)))

    zeros = np.zeros(20, dtype=np.uint8)
    pilot = [(zeros, transmit(zeros, 0.05, rng)) for _ in range(1000)]
    pb_hat = estimate_pb_pilot(pilot)

    ok = substitution and t_err < 0.05 and abs(pb_hat - 0.05) <= 0.005
    detail = (
        f"smoothing example {'exact' if substitution else 'wrong'}; "
        f"T-hat max abs error {t_err:.3f} (limit 0.05); pilot estimate {pb_hat:.4f}"
    )
    criterion(9, ok, detail)


COMMANDS = [
    "sweep-pb --pb 0.03,0.07 --packets 500 --sequences 2 --seed 5",
    "sweep-density --density 0.0625,0.25 --decoder map,delayed --packets 500 --sequences 2",
    "sweep-delay --delay 0:2:1 --scheme legacy --packets 500 --sequences 2 --seed 9",
    "sweep-pb --pb 0.05 --scheme conditional,stationary --density 0.25 --packets 300 --sequences 2",
    "transient --packets 300 --sequences 2 --bucket 100",
    "dynamic --packets 300 --sequences 2 --bucket 100 --scheme legacy",
    "codebook-dump --scheme conditional --seed 2",
]


def test_criterion_10_cli_determinism(tmp_path, criterion):
    differing = []
    for i, command in enumerate(COMMANDS):
        outputs = []
        for run in range(2):
            path = tmp_path / f"{i}_{run}.csv"
            assert main(command.split() + ["--out", str(path)]) == 0
            outputs.append(path.read_bytes())
        if outputs[0] != outputs[1] or not outputs[0]:
            differing.append(command.split()[0])
    criterion(10, not differing, f"{len(COMMANDS)} commands run twice; differing: {differing or 'none'}")
