"""Command-line harness: train, eval, histogram, protocol, summarize.

Exit codes: 0 success, 1 config error, 2 runtime failure. Every randomized
command requires an explicit seed; nothing is seeded from the clock.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

import numpy as np

from .autograd import NonFiniteGradientError
from .discretizers import DiscretizerConfig, DiscretizerKind, Mode, response_histogram
from .experiments import (
    ConfigError,
    load_trainer,
    run_config_from_ini,
    run_single,
    summarize_experiment,
    write_protocol_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _flag(overrides, dotted, value):
    if value is not None:
        overrides[dotted] = value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="discomm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one method over one or more seeds")
    train.add_argument("--config", type=Path, help="INI config file; flags override its keys")
    train.add_argument("--env", choices=["matrix", "speaker_listener"])
    train.add_argument("--experiment", help="experiment name (default derived from env)")
    train.add_argument("--method", help="dru | ste | gs | st-dru | st-gs")
    train.add_argument("--seed", help="seed or comma-separated seed list", required=False)
    train.add_argument("--iters", type=int, help="training iterations")
    train.add_argument("--out", help="output root directory")
    train.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    train.add_argument("--n", type=int, help="matrix: number of agents")
    train.add_argument("--m", type=int, help="matrix: numbers per agent draw")
    train.add_argument("--bits", type=int, help="message bits")
    train.add_argument("--error-prob", type=float, help="channel error probability")
    train.add_argument("--flips", type=int, help="bit flips per channel error")
    train.add_argument("--corrupt-training", help="true/false: corrupt train rollouts too")
    train.add_argument("--sigma-g", type=float, help="Gaussian noise std")
    train.add_argument("--tau-gs", type=float, help="gumbel softmax temperature")
    train.add_argument("--lr", type=float, help="learning rate")
    train.add_argument("--gamma", type=float)
    train.add_argument("--optimizer", choices=["rms", "sgd"])
    train.add_argument("--episodes-per-iter", type=int)
    train.add_argument("--eval-every", type=int)
    train.add_argument("--eval-episodes", type=int)
    train.add_argument("--epsilon-start", type=float)
    train.add_argument("--epsilon-end", type=float)
    train.add_argument("--epsilon-decay-iters", type=int)
    train.add_argument("--tau-target", type=float)
    train.add_argument("--a-hidden", help="A-Net hidden widths, e.g. 64,64")
    train.add_argument("--c-hidden", help="C-Net hidden widths, e.g. 32")
    train.add_argument("--protocol-samples", type=int)
    train.add_argument("--dump-traces", action="store_true")
    train.add_argument("--landmarks", type=int, help="speaker_listener: landmark count")
    train.add_argument("--episode-len", type=int, help="speaker_listener: steps per episode")

    evalp = sub.add_parser("eval", help="evaluate a checkpoint without training")
    evalp.add_argument("--checkpoint", type=Path, required=True)
    evalp.add_argument("--episodes", type=int, required=True)
    evalp.add_argument("--seed", type=int, required=True)

    hist = sub.add_parser("histogram", help="discretizer response histograms")
    hist.add_argument("--method", required=True)
    hist.add_argument("--x", required=True, help="comma-separated input values")
    hist.add_argument("--samples", type=int, default=10_000)
    hist.add_argument("--mode", choices=["train", "eval", "both"], default="both")
    hist.add_argument("--sigma-g", type=float, default=2.0)
    hist.add_argument("--tau-gs", type=float, default=1.0)
    hist.add_argument("--seed", type=int, required=True)
    hist.add_argument("--bins", type=int, default=50)
    hist.add_argument("--out", type=Path, required=True)

    proto = sub.add_parser("protocol", help="protocol matrices from a checkpoint")
    proto.add_argument("--checkpoint", type=Path, required=True)
    proto.add_argument("--samples", type=int, default=1000)
    proto.add_argument("--seed", type=int, required=True)
    proto.add_argument("--out", type=Path, required=True, help="output directory")

    summ = sub.add_parser("summarize", help="aggregate method summaries for an experiment")
    summ.add_argument("--in", dest="in_dir", type=Path, required=True)
    summ.add_argument("--out", type=Path, help="optional CSV output path")
    return parser


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _collect_overrides(args) -> dict:
    overrides: dict[str, str] = {}
    _flag(overrides, "run.env", args.env)
    _flag(overrides, "run.experiment", args.experiment)
    _flag(overrides, "run.method", args.method)
    _flag(overrides, "run.out_dir", args.out)
    _flag(overrides, "run.protocol_samples", args.protocol_samples)
    if args.dump_traces:
        overrides["run.dump_traces"] = "true"
    _flag(overrides, "trainer.iterations", args.iters)
    _flag(overrides, "trainer.learning_rate", args.lr)
    _flag(overrides, "trainer.gamma", args.gamma)
    _flag(overrides, "trainer.optimizer", args.optimizer)
    _flag(overrides, "trainer.episodes_per_iteration", args.episodes_per_iter)
    _flag(overrides, "trainer.eval_every", args.eval_every)
    _flag(overrides, "trainer.eval_episodes", args.eval_episodes)
    _flag(overrides, "trainer.epsilon_start", args.epsilon_start)
    _flag(overrides, "trainer.epsilon_end", args.epsilon_end)
    _flag(overrides, "trainer.epsilon_decay_iters", args.epsilon_decay_iters)
    _flag(overrides, "trainer.tau_target", args.tau_target)
    _flag(overrides, "discretizer.sigma_g", args.sigma_g)
    _flag(overrides, "discretizer.tau_gs", args.tau_gs)
    _flag(overrides, "nets.a_hidden", args.a_hidden)
    _flag(overrides, "nets.c_hidden", args.c_hidden)
    _flag(overrides, "matrix.n_agents", args.n)
    _flag(overrides, "matrix.n_numbers", args.m)
    _flag(overrides, "matrix.error_probability", args.error_prob)
    _flag(overrides, "matrix.max_bit_flips", args.flips)
    _flag(overrides, "matrix.corrupt_training", args.corrupt_training)
    _flag(overrides, "speaker_listener.n_landmarks", args.landmarks)
    _flag(overrides, "speaker_listener.episode_length", args.episode_len)
    return overrides


def _default_experiment(args, overrides) -> str | None:
    env = overrides.get("run.env")
    if env == "matrix" and args.n and args.m:
        return f"matrix_n{args.n}_m{args.m}"
    if env == "speaker_listener":
        return "speaker_listener"
    return None


def _parse_seeds(raw) -> list[int]:
    try:
        return [int(part) for part in str(raw).split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {raw!r}") from exc


def cmd_train(args) -> int:
    overrides = _collect_overrides(args)
    if args.bits is not None:
        section = "speaker_listener" if args.env == "speaker_listener" else "matrix"
        overrides[f"{section}.message_bits"] = args.bits
    base_text = args.config.read_text() if args.config else ""
    if "run.experiment" not in overrides and "experiment" not in base_text:
        derived = _default_experiment(args, overrides)
        if derived:
            overrides["run.experiment"] = derived

    try:
        if args.seed is not None:
            seeds = _parse_seeds(args.seed)
        else:
            # an explicit seed is required somewhere; the config may carry it
            seeds = [run_config_from_ini(base_text, overrides).seed]
        configs = [
            run_config_from_ini(base_text, {**overrides, "run.seed": str(s)}) for s in seeds
        ]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.workers > 1 and len(configs) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(run_single, configs))
        else:
            results = [run_single(config) for config in configs]
    except NonFiniteGradientError as exc:
        print(f"runtime failure: {exc} (partial metrics retained)", file=sys.stderr)
        return EXIT_RUNTIME

    for result in results:
        mean = "n/a" if result.final_mean is None else f"{result.final_mean:.3f}"
        std = "n/a" if result.final_std is None else f"{result.final_std:.3f}"
        print(
            f"{result.config.experiment} {result.config.method.value} seed={result.config.seed}"
            f" final10%={mean} +- {std} ({result.wall_time_s:.1f}s)"
            f" -> {result.config.run_dir}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / protocol (checkpoint consumers)
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    try:
        trainer, config = load_trainer(args.checkpoint, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    mean, std = trainer.evaluate(episodes=args.episodes)
    print(f"{config.experiment} {config.method.value} eval over {args.episodes} episodes:")
    print(f"mean_return={mean!r} std={std!r}")
    return EXIT_OK


def cmd_protocol(args) -> int:
    try:
        trainer, config = load_trainer(args.checkpoint, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if config.env != "matrix":
        print("config error: protocol matrices are defined for the matrix env", file=sys.stderr)
        return EXIT_CONFIG
    try:
        pre, post = trainer.protocol_matrix(args.samples)
    except ValueError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    args.out.mkdir(parents=True, exist_ok=True)
    bits = config.matrix.message_bits
    write_protocol_csv(args.out / "protocol_pre.csv", pre, bits)
    write_protocol_csv(args.out / "protocol_post.csv", post, bits)
    print(f"wrote protocol matrices for {pre.shape[0]} inputs to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# histogram / summarize
# ---------------------------------------------------------------------------

def cmd_histogram(args) -> int:
    try:
        kind = DiscretizerKind.from_name(args.method)
        xs = [float(part) for part in args.x.split(",") if part.strip() != ""]
        if not xs:
            raise ValueError("no x values given")
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    modes = {"train": [Mode.TRAIN], "eval": [Mode.EVAL], "both": [Mode.TRAIN, Mode.EVAL]}[
        args.mode
    ]
    rng = np.random.default_rng(args.seed)
    entries = []
    for x in xs:
        for mode in modes:
            config = DiscretizerConfig(
                kind=kind, sigma_g=args.sigma_g, tau_gs=args.tau_gs, mode=mode
            )
            hist = response_histogram(config, x, args.samples, rng, bins=args.bins)
            entries.append(
                {
                    "x": x,
                    "mode": mode.value,
                    "samples": hist.samples,
                    "bin_edges": hist.bin_edges.tolist(),
                    "counts": hist.counts.tolist(),
                    "frac_zero": hist.frac_zero,
                    "frac_one": hist.frac_one,
                }
            )
    payload = {
        "method": kind.value,
        "sigma_g": args.sigma_g,
        "tau_gs": args.tau_gs,
        "seed": args.seed,
        "entries": entries,
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {len(entries)} histograms to {args.out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        rows = summarize_experiment(args.in_dir)
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    width = max(len(r["method"]) for r in rows)
    print(f"{'method'.ljust(width)}  seeds  final-10% mean +- std")
    for r in rows:
        print(f"{r['method'].ljust(width)}  {r['seeds']:5d}  {r['mean']:.3f} +- {r['std']:.3f}")
    if args.out:
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "seeds", "mean", "std"])
            for r in rows:
                writer.writerow([r["method"], r["seeds"], repr(r["mean"]), repr(r["std"])])
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "train": cmd_train,
        "eval": cmd_eval,
        "histogram": cmd_histogram,
        "protocol": cmd_protocol,
        "summarize": cmd_summarize,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
