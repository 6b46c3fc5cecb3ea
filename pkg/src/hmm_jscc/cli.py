"""Command-line entry point: experiment sweeps and codebook dumps."""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .codec.codebook import build_codebook, codebook_csv
from .errors import CodeDesignError, ModelError, ParameterError
from .harness import ExperimentConfig, rows_to_csv, run_experiment
from .source import generate_sparse_transition, load_matrix, save_matrix, stationary_distribution

# flag name -> (config field, parser, accepts a list)
FLAGS = {
    "n": ("n", int, False),
    "S": ("S", int, False),
    "M": ("M", int, False),
    "pb": ("pb", float, True),
    "density": ("density", float, True),
    "scheme": ("scheme", str, True),
    "schemes": ("scheme", str, True),
    "decoder": ("decoder", str, True),
    "decoders": ("decoder", str, True),
    "delay": ("delay", int, True),
    "tc": ("tc", int, False),
    "alpha": ("alpha", float, False),
    "window": ("window", int, False),
    "sequences": ("sequences", int, False),
    "packets": ("packets", int, False),
    "seed": ("seed", int, False),
    "bucket": ("bucket", int, False),
    "pilot-packets": ("pilot_packets", int, False),
    "knowledge": ("knowledge", str, True),
    "learn-from": ("learn_from", str, False),
    "propagate-from": ("propagate_from", str, False),
}

COMMANDS = {
    "sweep-pb": dict(
        mode="steady", required="pb", help="packet error rate versus bit error probability"
    ),
    "sweep-density": dict(
        mode="steady", required="density", help="packet error rate versus matrix density"
    ),
    "sweep-delay": dict(
        mode="steady",
        required="delay",
        defaults={"decoder": ["delayed"]},
        help="packet error rate versus decoding delay",
    ),
    "transient": dict(
        mode="transient",
        defaults={
            "scheme": ["legacy", "punctured"],
            "density": [0.25],
            "packets": 5000,
            "sequences": 500,
            "knowledge": ["learned", "perfect"],
        },
        help="learning transient from a uniform transition estimate",
    ),
    "dynamic": dict(
        mode="dynamic",
        defaults={
            "packets": 10000,
            "sequences": 500,
            "knowledge": ["learned", "perfect"],
        },
        help="time-varying source blending two sparse matrices",
    ),
}


def parse_values(text: str, kind) -> list:
    """``a,b,c`` lists and inclusive ``start:stop:step`` ranges."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part and kind is not str:
            bits = part.split(":")
            if len(bits) != 3:
                raise ParameterError(f"range {part!r} must be start:stop:step")
            start, stop, step = (float(b) for b in bits)
            if step <= 0 or stop < start:
                raise ParameterError(f"invalid range {part!r}")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            out.extend(kind(round(start + i * step, 12)) for i in range(count))
        else:
            out.append(kind(part))
    if not out:
        raise ParameterError(f"no values in {text!r}")
    return out


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key=value`` lines; keys are the long flag names."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in FLAGS:
            raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    for flag in FLAGS:
        p.add_argument(f"--{flag}", default=None, metavar="VALUE")
    p.add_argument("--config", help="key=value file; command-line flags win")
    p.add_argument("--out", help="CSV destination (default: stdout)")
    p.add_argument("--jobs", type=int, help="worker processes (default: $HMM_JSCC_JOBS or cores)")
    p.add_argument("--per-sequence", action="store_true", help="also emit per-sequence rows")
    p.add_argument("--trace-dir", help="write per-packet trace CSVs into this directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmm-jscc",
        description="Short-packet coding for hidden-Markov sources: Monte Carlo experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        _add_experiment_flags(sub.add_parser(name, help=command["help"]))
    parser.subcommands = sub.choices
    dump = sub.add_parser("codebook-dump", help="write a codebook as state,message,codeword_bits")
    dump.add_argument("--scheme", default="punctured")
    dump.add_argument("--n", type=int, default=20)
    dump.add_argument("--S", type=int, default=32)
    dump.add_argument("--M", type=int, default=32)
    dump.add_argument("--tc", type=int, default=2)
    dump.add_argument("--density", type=float, default=0.125)
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--matrix", help="read the transition matrix from this text file")
    dump.add_argument("--matrix-out", help="save the transition matrix used")
    dump.add_argument("--out", help="CSV destination (default: stdout)")
    return parser


def _experiment(args: argparse.Namespace, parser: argparse.ArgumentParser) -> str:
    command = COMMANDS[args.command]
    raw: dict[str, str] = {}
    if args.config:
        raw.update(read_config_file(args.config))
    for flag in FLAGS:
        value = getattr(args, flag.replace("-", "_"))
        if value is not None:
            raw[flag] = value

    values: dict[str, object] = {"mode": command["mode"]}
    values.update(command.get("defaults", {}))
    for flag, text in raw.items():
        field, kind, many = FLAGS[flag]
        parsed = parse_values(text, kind)
        if not many and len(parsed) != 1:
            raise ParameterError(f"--{flag} takes a single value")
        values[field] = parsed if many else parsed[0]

    required = command.get("required")
    if required and required not in raw:
        parser.subcommands[args.command].error(
            f"the following arguments are required: --{required}"
        )

    known = {f.name for f in fields(ExperimentConfig)}
    scalars = {k: v for k, v in values.items() if not isinstance(v, list)}
    sweeps = {k: v for k, v in values.items() if isinstance(v, list)}
    base = ExperimentConfig(**{k: v for k, v in scalars.items() if k in known})
    base = replace(base, **{k: v[0] for k, v in sweeps.items()})
    rows = run_experiment(
        base, sweeps, jobs=args.jobs, per_sequence=args.per_sequence, trace_dir=args.trace_dir
    )
    return rows_to_csv(rows)


def _codebook_dump(args: argparse.Namespace) -> str:
    T = None
    if args.scheme in ("stationary", "conditional"):
        if args.matrix:
            T = load_matrix(args.matrix)
        else:
            T = generate_sparse_transition(args.S, args.density, np.random.default_rng(args.seed))
        if args.matrix_out:
            save_matrix(args.matrix_out, T)
    book = build_codebook(
        args.scheme,
        args.S,
        args.M,
        args.n,
        transition=T,
        stationary=stationary_distribution(T) if T is not None else None,
        check_interval=args.tc,
    )
    return codebook_csv(book)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "codebook-dump":
            text = _codebook_dump(args)
        else:
            text = _experiment(args, parser)
    except (ParameterError, CodeDesignError, ModelError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
