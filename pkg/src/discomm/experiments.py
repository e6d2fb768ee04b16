"""Run orchestration: configs, artifact files, and Table-style aggregation.

One run = (experiment, method, seed). Its artifacts live under
``out_dir/<experiment>/<method>/<seed>/``:

    metrics.csv        one row per evaluation point
    summary.json       final-10% mean/std, config echo, seed, wall time
    checkpoint.npz     trained parameters (versioned header)
    protocol_pre.csv   Matrix env only: input-number x message histogram
    protocol_post.csv  same, after channel corruption
    config.ini         config echo sufficient to re-run the experiment
    traces.jsonl       final-evaluation step records (only with dump_traces)

The metrics CSV columns are:
    iteration, mean_eval_return, return_std, comm_amplitude, amplitude_ewma
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .discretizers import DiscretizerConfig, DiscretizerKind, Mode
from .envs import MatrixConfig, SpeakerListenerConfig
from .nets import MlpSpec, save_checkpoint
from .training import (
    MatrixTrainer,
    MetricsRecord,
    SpeakerListenerTrainer,
    TrainerConfig,
    final_summary,
)

METRICS_COLUMNS = (
    "iteration",
    "mean_eval_return",
    "return_std",
    "comm_amplitude",
    "amplitude_ewma",
)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 1)."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one seeded run needs, in one validated record."""

    experiment: str
    env: str  # "matrix" | "speaker_listener"
    method: DiscretizerKind
    seed: int
    out_dir: str = "runs"
    matrix: MatrixConfig | None = None
    speaker_listener: SpeakerListenerConfig | None = None
    sigma_g: float = 2.0
    tau_gs: float = 1.0
    trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(iterations=0))
    a_hidden: tuple[int, ...] = (64, 64)
    a_activation: str = "relu"
    c_hidden: tuple[int, ...] = (32,)
    c_activation: str = "tanh"
    protocol_samples: int = 1000
    dump_traces: bool = False

    def __post_init__(self):
        if self.env not in ("matrix", "speaker_listener"):
            raise ConfigError(f"env must be matrix or speaker_listener, got {self.env!r}")
        if self.env == "matrix" and self.matrix is None:
            raise ConfigError("matrix env selected but no [matrix] section given")
        if self.env == "speaker_listener" and self.speaker_listener is None:
            raise ConfigError("speaker_listener env selected but no [speaker_listener] section")
        if self.protocol_samples < 1:
            raise ConfigError("protocol_samples must be >= 1")
        # the run seed is canonical; keep the embedded trainer consistent
        object.__setattr__(self, "trainer", replace(self.trainer, seed=self.seed))

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.experiment / self.method.value / str(self.seed)

    def discretizer(self) -> DiscretizerConfig:
        return DiscretizerConfig(kind=self.method, sigma_g=self.sigma_g, tau_gs=self.tau_gs)

    def a_spec(self) -> MlpSpec:
        return MlpSpec(hidden=self.a_hidden, activation=self.a_activation)

    def c_spec(self) -> MlpSpec:
        return MlpSpec(hidden=self.c_hidden, activation=self.c_activation)


def make_trainer(config: RunConfig):
    trainer_config = replace(config.trainer, seed=config.seed)
    if config.env == "matrix":
        return MatrixTrainer(
            config.matrix,
            config.discretizer(),
            trainer_config,
            a_spec=config.a_spec(),
            c_spec=config.c_spec(),
        )
    return SpeakerListenerTrainer(
        config.speaker_listener,
        config.discretizer(),
        trainer_config,
        a_spec=config.a_spec(),
        c_spec=config.c_spec(),
    )


# ---------------------------------------------------------------------------
# Config file round-trip (flat INI, one section per module)
# ---------------------------------------------------------------------------

def _format_value(value):
    if isinstance(value, DiscretizerKind):
        return value.value
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def run_config_to_ini(config: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser["run"] = {
        "experiment": config.experiment,
        "env": config.env,
        "method": _format_value(config.method),
        "seed": str(config.seed),
        "out_dir": config.out_dir,
        "protocol_samples": str(config.protocol_samples),
        "dump_traces": str(config.dump_traces),
    }
    if config.matrix is not None:
        parser["matrix"] = {k: _format_value(v) for k, v in asdict(config.matrix).items()}
    if config.speaker_listener is not None:
        parser["speaker_listener"] = {
            k: _format_value(v) for k, v in asdict(config.speaker_listener).items()
        }
    parser["discretizer"] = {
        "sigma_g": str(config.sigma_g),
        "tau_gs": str(config.tau_gs),
    }
    trainer = {k: _format_value(v) for k, v in asdict(config.trainer).items() if v is not None}
    trainer.pop("seed", None)  # the run seed governs
    parser["trainer"] = trainer
    parser["nets"] = {
        "a_hidden": _format_value(config.a_hidden),
        "a_activation": config.a_activation,
        "c_hidden": _format_value(config.c_hidden),
        "c_activation": config.c_activation,
    }
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def run_config_from_ini(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse an INI config; ``overrides`` maps section.key -> raw string."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    for dotted, raw in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][key] = str(raw)

    def need(section, key, cast=str):
        if not parser.has_option(section, key):
            raise ConfigError(f"missing required key [{section}] {key}")
        return _cast(section, key, cast)

    def _cast(section, key, cast):
        raw = parser.get(section, key)
        try:
            if cast is bool:
                return _parse_bool(raw)
            return cast(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc

    def optional(section, key, cast, default):
        if not parser.has_option(section, key):
            return default
        return _cast(section, key, cast)

    # surface missing run-level keys first; they are the commonest mistake
    experiment = need("run", "experiment")
    env = need("run", "env")
    try:
        method = DiscretizerKind.from_name(need("run", "method"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seed = need("run", "seed", int)
    matrix = None
    speaker_listener = None
    if parser.has_section("matrix"):
        matrix = _build(
            MatrixConfig,
            dict(
                n_agents=need("matrix", "n_agents", int),
                n_numbers=need("matrix", "n_numbers", int),
                message_bits=need("matrix", "message_bits", int),
                error_probability=optional("matrix", "error_probability", float, 0.0),
                max_bit_flips=optional("matrix", "max_bit_flips", int, 0),
                corrupt_training=optional("matrix", "corrupt_training", bool, False),
            ),
        )
    if parser.has_section("speaker_listener") or env == "speaker_listener":
        speaker_listener = _build(
            SpeakerListenerConfig,
            dict(
                n_landmarks=optional("speaker_listener", "n_landmarks", int, 3),
                half_width=optional("speaker_listener", "half_width", float, 1.0),
                episode_length=optional("speaker_listener", "episode_length", int, 25),
                message_bits=optional("speaker_listener", "message_bits", int, 2),
                step_size=optional("speaker_listener", "step_size", float, 0.1),
            ),
        )

    is_matrix = env == "matrix"
    trainer = _build(
        TrainerConfig,
        dict(
            iterations=need("trainer", "iterations", int),
            gamma=optional("trainer", "gamma", float, 1.0 if is_matrix else 0.95),
            tau_target=optional("trainer", "tau_target", float, 0.01),
            learning_rate=optional("trainer", "learning_rate", float, 5e-4),
            epsilon_start=optional("trainer", "epsilon_start", float, 1.0),
            epsilon_end=optional("trainer", "epsilon_end", float, 0.05),
            epsilon_decay_iters=optional("trainer", "epsilon_decay_iters", int, None),
            episodes_per_iteration=optional("trainer", "episodes_per_iteration", int, 32),
            eval_every=optional("trainer", "eval_every", int, 100 if is_matrix else 50),
            eval_episodes=optional("trainer", "eval_episodes", int, 100 if is_matrix else 10),
            parameter_sharing=optional("trainer", "parameter_sharing", bool, True),
            optimizer=optional("trainer", "optimizer", str, "rms"),
            clip_norm=optional("trainer", "clip_norm", float, 10.0),
            amplitude_ewma_alpha=optional("trainer", "amplitude_ewma_alpha", float, 5e-5),
        ),
    )

    return _build(
        RunConfig,
        dict(
            experiment=experiment,
            env=env,
            method=method,
            seed=seed,
            out_dir=optional("run", "out_dir", str, "runs"),
            protocol_samples=optional("run", "protocol_samples", int, 1000),
            dump_traces=optional("run", "dump_traces", bool, False),
            matrix=matrix,
            speaker_listener=speaker_listener,
            sigma_g=optional("discretizer", "sigma_g", float, 2.0),
            tau_gs=optional("discretizer", "tau_gs", float, 1.0),
            trainer=trainer,
            a_hidden=optional("nets", "a_hidden", _parse_int_tuple, (64, 64)),
            a_activation=optional("nets", "a_activation", str, "relu"),
            c_hidden=optional("nets", "c_hidden", _parse_int_tuple, (32,)),
            c_activation=optional("nets", "c_activation", str, "tanh"),
        ),
    )


def _build(cls, kwargs):
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


# ---------------------------------------------------------------------------
# Metrics CSV
# ---------------------------------------------------------------------------

def write_metrics_csv(path, records: list[MetricsRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.iteration,
                    repr(float(r.mean_eval_return)),
                    repr(float(r.return_std)),
                    repr(float(r.comm_amplitude)),
                    repr(float(r.amplitude_ewma)),
                ]
            )


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(METRICS_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"metrics csv missing columns: {sorted(missing)}")
        return [
            MetricsRecord(
                iteration=int(row["iteration"]),
                mean_eval_return=float(row["mean_eval_return"]),
                return_std=float(row["return_std"]),
                comm_amplitude=float(row["comm_amplitude"]),
                amplitude_ewma=float(row["amplitude_ewma"]),
            )
            for row in reader
        ]


def write_protocol_csv(path, counts: np.ndarray, message_bits: int):
    """Rows are input numbers; columns the 2^bits patterns in lexicographic order."""
    patterns = [format(i, f"0{message_bits}b") for i in range(2**message_bits)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["input_number", *patterns])
        for number, row in enumerate(counts):
            writer.writerow([number, *row.tolist()])


def read_protocol_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)


# ---------------------------------------------------------------------------
# Single-run driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    records: list[MetricsRecord]
    final_mean: float | None
    final_std: float | None
    wall_time_s: float


def _dump_eval_traces(path, trainer, episodes: int):
    """One JSON line per (episode, step, agent) of a final evaluation batch."""
    trace = trainer.rollout(episodes, Mode.EVAL)
    with open(path, "w") as fh:
        if hasattr(trace, "numbers"):  # matrix trace
            n = trace.numbers.shape[1]
            for b in range(trace.numbers.shape[0]):
                for agent in range(n):
                    row = b * n + agent
                    record = {
                        "episode": b,
                        "step": 1,
                        "agent": agent,
                        "observation": int(trace.numbers[b, agent]),
                        "message_pre": trace.messages_pre.value[row].tolist(),
                        "message_post": trace.messages_post.value[row].tolist(),
                        "action": int(trace.actions_step1[row]),
                        "reward": float(trace.rewards[b]),
                    }
                    fh.write(json.dumps(record) + "\n")
        else:
            for b in range(trace.rewards.shape[1]):
                for t in range(trace.rewards.shape[0]):
                    record = {
                        "episode": b,
                        "step": t,
                        "target": int(trace.targets[b]),
                        "listener_input": trace.listener_inputs[t, b].tolist(),
                        "action": int(trace.actions[t, b]),
                        "reward": float(trace.rewards[t, b]),
                    }
                    fh.write(json.dumps(record) + "\n")


def run_single(config: RunConfig) -> RunResult:
    """Train one (experiment, method, seed) run and write all artifacts."""
    run_dir = config.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(run_config_to_ini(config))

    trainer = make_trainer(config)
    started = time.time()
    records = []
    failure = None
    try:
        records = trainer.run()
    except Exception as exc:  # preserve partial metrics before re-raising
        failure = exc
        records = trainer.records
    wall = time.time() - started

    write_metrics_csv(run_dir / "metrics.csv", records)
    mean = std = None
    if records:
        mean, std = final_summary(records)
    summary = {
        "experiment": config.experiment,
        "method": config.method.value,
        "seed": config.seed,
        "iterations": config.trainer.iterations,
        "evaluation_points": len(records),
        "final_mean": mean,
        "final_std": std,
        "wall_time_s": wall,
        "status": "failed" if failure else "ok",
    }
    if failure is not None:
        summary["error"] = f"{type(failure).__name__}: {failure}"
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if failure is not None:
        raise failure

    roles = (
        {"shared": trainer.shared}
        if config.env == "matrix"
        else {"speaker": trainer.speaker, "listener": trainer.listener}
    )
    save_checkpoint(run_dir / "checkpoint.npz", roles, meta={"config_ini": run_config_to_ini(config)})

    if config.env == "matrix":
        pre, post = trainer.protocol_matrix(config.protocol_samples)
        write_protocol_csv(run_dir / "protocol_pre.csv", pre, config.matrix.message_bits)
        write_protocol_csv(run_dir / "protocol_post.csv", post, config.matrix.message_bits)
    if config.dump_traces:
        episodes = min(config.trainer.eval_episodes, 50)
        _dump_eval_traces(run_dir / "traces.jsonl", trainer, episodes)

    return RunResult(config, records, mean, std, wall)


# ---------------------------------------------------------------------------
# Checkpoint consumers
# ---------------------------------------------------------------------------

def load_trainer(checkpoint_path, seed: int):
    """Rebuild a trainer from a checkpoint's config echo and parameters.

    The returned trainer carries the stored live weights (targets reset to
    copies) and fresh RNG streams derived from ``seed``; suitable for
    evaluation, not for resuming training mid-run.
    """
    from .nets import _copy_paramset, load_checkpoint

    agents, meta = load_checkpoint(checkpoint_path)
    config_ini = meta.get("config_ini")
    if not config_ini:
        raise ConfigError("checkpoint carries no config echo; cannot rebuild the environment")
    config = run_config_from_ini(config_ini, {"run.seed": str(seed)})
    trainer = make_trainer(config)
    wanted = {"shared"} if config.env == "matrix" else {"speaker", "listener"}
    if set(agents) != wanted:
        raise ValueError(f"checkpoint roles {sorted(agents)} do not match env {config.env}")
    targets = (
        {"shared": trainer.shared}
        if config.env == "matrix"
        else {"speaker": trainer.speaker, "listener": trainer.listener}
    )
    for role, source in agents.items():
        dest = targets[role]
        for (name_a, pa), (name_b, pb) in zip(
            source.trainable_params(), dest.trainable_params()
        ):
            if name_a != name_b or pa.value.shape != pb.value.shape:
                raise ValueError(
                    f"checkpoint parameter {name_a} {pa.value.shape} does not match "
                    f"environment expectation {name_b} {pb.value.shape}"
                )
            pb.value[...] = pa.value
        dest.a_target = None if source.a_net is None else _copy_paramset(dest.a_net)
        dest.c_target = None if source.c_net is None else _copy_paramset(dest.c_net)
    return trainer, config


# ---------------------------------------------------------------------------
# Cross-method aggregation (Table-style summaries)
# ---------------------------------------------------------------------------

def summarize_experiment(experiment_dir) -> list[dict]:
    """Aggregate final-10% returns per method across seeds under one experiment."""
    experiment_dir = Path(experiment_dir)
    rows = []
    for method_dir in sorted(p for p in experiment_dir.iterdir() if p.is_dir()):
        pooled = []
        seeds = []
        for seed_dir in sorted(
            (p for p in method_dir.iterdir() if p.is_dir()), key=lambda p: p.name
        ):
            metrics = seed_dir / "metrics.csv"
            if not metrics.exists():
                continue
            records = read_metrics_csv(metrics)
            if not records:
                continue
            last = max(r.iteration for r in records)
            pooled.extend(
                r.mean_eval_return for r in records if r.iteration > 0.9 * last
            )
            seeds.append(seed_dir.name)
        if not pooled:
            continue
        pooled_arr = np.array(pooled)
        rows.append(
            {
                "method": method_dir.name,
                "seeds": len(seeds),
                "mean": float(pooled_arr.mean()),
                "std": float(pooled_arr.std()),
            }
        )
    if not rows:
        raise ValueError(f"no completed runs under {experiment_dir}")
    return rows
