"""Run orchestration: config round-trips, artifact files, aggregation."""

import json

import numpy as np
import pytest

from discomm.discretizers import DiscretizerKind
from discomm.envs import MatrixConfig
from discomm.experiments import (
    ConfigError,
    RunConfig,
    run_config_from_ini,
    run_config_to_ini,
    run_single,
    read_metrics_csv,
    read_protocol_csv,
    summarize_experiment,
    write_metrics_csv,
    write_protocol_csv,
)
from discomm.nets import load_checkpoint
from discomm.training import MetricsRecord, TrainerConfig


def tiny_config(tmp_path, method=DiscretizerKind.STE, seed=0, iterations=40, **kw):
    return RunConfig(
        experiment="tiny",
        env="matrix",
        method=method,
        seed=seed,
        out_dir=str(tmp_path),
        matrix=MatrixConfig(n_agents=2, n_numbers=2, message_bits=1, **kw),
        trainer=TrainerConfig(
            iterations=iterations,
            eval_every=20,
            eval_episodes=10,
            episodes_per_iteration=8,
            seed=seed,
        ),
        a_hidden=(8,),
        c_hidden=(4,),
        protocol_samples=50,
    )


class TestConfigRoundTrip:
    def test_ini_round_trip(self, tmp_path):
        config = tiny_config(tmp_path, method=DiscretizerKind.ST_GS, seed=3)
        text = run_config_to_ini(config)
        parsed = run_config_from_ini(text)
        assert parsed == config

    def test_overrides_take_precedence(self, tmp_path):
        text = run_config_to_ini(tiny_config(tmp_path))
        parsed = run_config_from_ini(
            text, {"run.method": "dru", "trainer.iterations": "7", "discretizer.sigma_g": "3.5"}
        )
        assert parsed.method is DiscretizerKind.DRU
        assert parsed.trainer.iterations == 7
        assert parsed.sigma_g == 3.5

    def test_missing_required_key(self):
        with pytest.raises(ConfigError, match=r"\[run\] experiment"):
            run_config_from_ini("[run]\nenv = matrix\nmethod = ste\nseed = 0\n")

    def test_bad_value_reports_field(self):
        text = "[run]\nexperiment = x\nenv = matrix\nmethod = ste\nseed = zero\n"
        with pytest.raises(ConfigError, match=r"\[run\] seed"):
            run_config_from_ini(text)

    def test_unknown_method_rejected(self, tmp_path):
        text = run_config_to_ini(tiny_config(tmp_path))
        with pytest.raises(ConfigError, match="unknown discretizer"):
            run_config_from_ini(text, {"run.method": "magic"})

    def test_env_section_consistency(self):
        with pytest.raises(ConfigError, match="matrix"):
            RunConfig(experiment="x", env="matrix", method=DiscretizerKind.STE, seed=0)

    def test_speaker_listener_defaults(self):
        text = (
            "[run]\nexperiment = sl\nenv = speaker_listener\nmethod = gs\nseed = 1\n"
            "[trainer]\niterations = 5\n"
        )
        config = run_config_from_ini(text)
        assert config.speaker_listener.episode_length == 25
        assert config.trainer.gamma == 0.95  # env-specific default
        assert config.trainer.eval_every == 50


class TestCsvRoundTrips:
    def test_metrics_round_trip(self, tmp_path):
        records = [
            MetricsRecord(100, 2.95, 0.2, 1.2345678901234567, 0.4),
            MetricsRecord(200, 3.0, 0.0, 2.0, 0.5),
        ]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, records)
        assert read_metrics_csv(path) == records

    def test_metrics_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("iteration,mean_eval_return\n1,2.0\n")
        with pytest.raises(ValueError, match="comm_amplitude"):
            read_metrics_csv(path)

    def test_protocol_round_trip(self, tmp_path):
        counts = np.array([[5, 0, 0, 45], [0, 50, 0, 0]], dtype=np.int64)
        path = tmp_path / "protocol.csv"
        write_protocol_csv(path, counts, message_bits=2)
        header = path.read_text().splitlines()[0]
        assert header == "input_number,00,01,10,11"
        np.testing.assert_array_equal(read_protocol_csv(path), counts)


class TestRunSingle:
    def test_artifacts_written(self, tmp_path):
        config = tiny_config(tmp_path)
        result = run_single(config)
        run_dir = config.run_dir
        for name in (
            "metrics.csv",
            "summary.json",
            "checkpoint.npz",
            "protocol_pre.csv",
            "protocol_post.csv",
            "config.ini",
        ):
            assert (run_dir / name).exists(), name
        records = read_metrics_csv(run_dir / "metrics.csv")
        assert [r.iteration for r in records] == [20, 40]
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["status"] == "ok"
        assert summary["final_mean"] == pytest.approx(result.final_mean)
        # config echo is sufficient to rebuild the exact run
        assert run_config_from_ini((run_dir / "config.ini").read_text()) == config

    def test_checkpoint_reloads(self, tmp_path):
        config = tiny_config(tmp_path, seed=5)
        run_single(config)
        agents, meta = load_checkpoint(config.run_dir / "checkpoint.npz")
        assert "shared" in agents
        assert run_config_from_ini(meta["config_ini"]) == config

    def test_protocol_rows_sum_to_samples(self, tmp_path):
        config = tiny_config(tmp_path)
        run_single(config)
        pre = read_protocol_csv(config.run_dir / "protocol_pre.csv")
        np.testing.assert_array_equal(pre.sum(axis=1), [50, 50])

    def test_zero_iterations_is_valid(self, tmp_path):
        config = tiny_config(tmp_path, iterations=0)
        result = run_single(config)
        assert result.final_mean is None
        summary = json.loads((config.run_dir / "summary.json").read_text())
        assert summary["evaluation_points"] == 0
        assert summary["final_mean"] is None
        assert read_metrics_csv(config.run_dir / "metrics.csv") == []

    def test_same_seed_byte_identical_metrics(self, tmp_path):
        a = tiny_config(tmp_path / "a", method=DiscretizerKind.DRU, seed=9)
        b = tiny_config(tmp_path / "b", method=DiscretizerKind.DRU, seed=9)
        run_single(a)
        run_single(b)
        assert (a.run_dir / "metrics.csv").read_bytes() == (b.run_dir / "metrics.csv").read_bytes()

    def test_traces_dumped_when_asked(self, tmp_path):
        config = tiny_config(tmp_path)
        config = RunConfig(**{**config.__dict__, "dump_traces": True})
        run_single(config)
        lines = (config.run_dir / "traces.jsonl").read_text().splitlines()
        assert lines
        record = json.loads(lines[0])
        assert {"episode", "step", "agent", "observation", "message_pre", "message_post", "action", "reward"} <= set(record)


class TestSummarize:
    def test_aggregates_methods_and_seeds(self, tmp_path):
        for method in (DiscretizerKind.STE, DiscretizerKind.DRU):
            for seed in (0, 1):
                run_single(tiny_config(tmp_path, method=method, seed=seed))
        rows = summarize_experiment(tmp_path / "tiny")
        assert [r["method"] for r in rows] == ["dru", "ste"]
        assert all(r["seeds"] == 2 for r in rows)
        assert all(np.isfinite(r["mean"]) for r in rows)

    def test_empty_experiment_rejected(self, tmp_path):
        (tmp_path / "nothing").mkdir()
        with pytest.raises(ValueError, match="no completed runs"):
            summarize_experiment(tmp_path / "nothing")
