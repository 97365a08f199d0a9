"""Command-line front end.

Exit codes: 0 clean end, 2 configuration error, 3 null rejected (alert),
4 malformed input stream. Data goes to stdout; the resolved configuration
and diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import secrets
import sys

from . import baseline
from .chain import (
    load_chain,
    markov_distance,
    max_likelihood_ratio,
    sample_trajectory,
    stationary_kl,
)
from .errors import MarkovTestError
from .experiments import ExperimentSpec, run_experiment
from .sprt import TestConfig, TestState, composite_step

EXIT_OK, EXIT_CONFIG, EXIT_REJECT, EXIT_STREAM = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def _echo(cmd: str, **cfg) -> None:
    print(json.dumps({"command": cmd, **cfg}, sort_keys=True), file=sys.stderr)


def _load(path):
    try:
        return load_chain(path)
    except (OSError, ValueError, MarkovTestError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _num(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def cmd_simulate(args) -> int:
    P = _load(args.chain)
    seed = args.seed if args.seed is not None else secrets.randbits(64)
    if not 0 <= args.x0 < P.shape[0]:
        raise ConfigError(f"--x0 {args.x0} outside [0, {P.shape[0]})")
    if args.len < 0:
        raise ConfigError("--len must be nonnegative")
    _echo("simulate", chain=args.chain, x0=args.x0, len=args.len, seed=seed)
    traj = sample_trajectory(P, args.x0, args.len, seed)
    out = sys.stdout
    for x in traj.samples.tolist():
        out.write(f"{x}\n")
    return EXIT_OK


def _stream_lines(fh):
    for n, line in enumerate(fh, 1):
        s = line.strip()
        if s:
            yield n, s


def cmd_test(args) -> int:
    P = _load(args.chain)
    try:
        config = TestConfig(args.alpha, P, args.estimator, args.mode,
                            max_samples=args.max_samples, seed=args.seed)
        est = config.make_estimator()
    except (ValueError, MarkovTestError) as exc:
        raise ConfigError(str(exc)) from None
    _echo("test", chain=args.chain, alpha=args.alpha, estimator=args.estimator,
          mode=args.mode, seed=args.seed, max_samples=args.max_samples,
          input=args.input or "-")
    try:
        fh = open(args.input) if args.input else sys.stdin
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    m = config.m
    out = sys.stdout
    try:
        state = None
        for n, s in _stream_lines(fh):
            try:
                x = int(s)
            except ValueError:
                print(f"line {n}: {s!r} is not a state index", file=sys.stderr)
                return EXIT_STREAM
            if not 0 <= x < m:
                print(f"line {n}: state {x} outside [0, {m})", file=sys.stderr)
                return EXIT_STREAM
            if state is None:
                state = TestState(prev_state=x)
                continue
            state, est = composite_step(state, x, config, est)
            rec = {"t": state.t, "log_lr": _num(state.log_L),
                   "decision": "reject" if state.rejected else "running"}
            if state.rejected:
                rec["tau"] = state.t
            out.write(json.dumps(rec) + "\n")
            out.flush()
            if state.rejected:
                return EXIT_REJECT
            if config.max_samples is not None and state.t >= config.max_samples:
                break
        if state is None:
            print("empty stream: the first line must be X_0", file=sys.stderr)
            return EXIT_STREAM
        return EXIT_OK
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_calibrate(args) -> int:
    P = _load(args.chain)
    if args.seed is None:
        raise ConfigError("--seed is required for calibration")
    _echo("calibrate", chain=args.chain, n=args.len, alpha=args.alpha,
          trials=args.trials, seed=args.seed, epsilon=args.epsilon, x0=args.x0)
    try:
        cfg = baseline.calibrate(P, args.len, args.alpha, args.trials, args.seed,
                                 args.epsilon, args.x0)
    except (ValueError, MarkovTestError) as exc:
        raise ConfigError(str(exc)) from None
    text = cfg.to_json() + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        with open(args.spec) as fh:
            raw = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{args.spec}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("experiment spec must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if raw.get("seed") is None:
        raise ConfigError("experiments need a seed (--seed or \"seed\" in the spec file)")
    if args.workers is not None:
        raw["workers"] = args.workers
    try:
        spec = ExperimentSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    _echo("experiment", spec=spec.to_dict(), out_dir=args.out_dir)
    result = run_experiment(spec)
    csv_path, json_path = result.write(args.out_dir)
    print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    print(result.table())
    return EXIT_OK


def cmd_divergence(args) -> int:
    A, B = _load(args.chain_a), _load(args.chain_b)
    if A.shape != B.shape:
        raise ConfigError(f"state spaces differ: {A.shape[0]} vs {B.shape[0]}")
    _echo("divergence", chain_a=args.chain_a, chain_b=args.chain_b)
    try:
        d_m = stationary_kl(A, B)
    except MarkovTestError as exc:
        raise ConfigError(str(exc)) from None
    out = {"d_m_kl": _num(d_m), "markov_distance": markov_distance(A, B),
           "max_lr": _num(max_likelihood_ratio(A, B))}
    print(json.dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="markovsprt",
                                description="Sequential one-sided tests of Markov chains.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample a trajectory from a chain file")
    s.add_argument("--chain", required=True)
    s.add_argument("--x0", type=int, default=0)
    s.add_argument("--len", type=int, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("test", help="run the sequential test on a state stream")
    s.add_argument("--chain", required=True, help="null chain (JSON)")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--estimator", default="kt")
    s.add_argument("--mode", choices=("markov", "iid"), default="markov")
    s.add_argument("--seed", type=int, default=0, help="seed for mixture components")
    s.add_argument("--max-samples", type=int, default=None)
    s.add_argument("--input", default=None, help="state file (default: stdin)")
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("calibrate", help="calibrate the fixed-length baseline")
    s.add_argument("--chain", required=True)
    s.add_argument("--len", type=int, required=True, help="trajectory length n")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--trials", type=int, default=2000)
    s.add_argument("--epsilon", type=float, default=1.0)
    s.add_argument("--x0", type=int, default=0)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("experiment", help="run a Monte-Carlo experiment from a JSON spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("divergence", help="diagnostics between two chain files")
    s.add_argument("chain_a")
    s.add_argument("chain_b")
    s.set_defaults(func=cmd_divergence)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
