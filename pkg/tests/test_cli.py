import json

import pytest
from click.testing import CliRunner

from moepredict.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def base_config(tmp_path, **extra):
    cfg = {
        "router": {"d": 12, "n_experts": 8, "k": 2},
        "data": {"n_train": 800, "n_eval": 200},
        "train": {"hidden": 32, "epochs": 2, "batch_size": 64},
        "out_dir": str(tmp_path / "run"),
        "seed": 13,
    }
    for key, value in extra.items():
        cfg.setdefault(key, {}).update(value)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result.output


class TestGen:
    def test_writes_traces_and_summary(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        out = run_ok(runner, ["--config", str(cfg), "gen"])
        assert "gen: d=12 E=8 k=2 n_train=800 n_eval=200" in out
        assert (tmp_path / "run" / "train.moepa").exists()
        assert (tmp_path / "run" / "eval.moepa").exists()

    def test_deterministic_files_and_summary(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        out1 = run_ok(runner, ["--config", str(cfg), "gen"])
        blob1 = (tmp_path / "run" / "train.moepa").read_bytes()
        out2 = run_ok(runner, ["--config", str(cfg), "gen"])
        blob2 = (tmp_path / "run" / "train.moepa").read_bytes()
        assert out1 == out2
        assert blob1 == blob2

    def test_near_uniform_teacher_entropy(self, runner, tmp_path):
        # symmetric random gate weights spread activations almost uniformly
        cfg = base_config(tmp_path)
        out = run_ok(runner, ["--config", str(cfg), "gen"])
        entropy = float(out.split("entropy=")[1].split()[0])
        assert entropy > 0.95

    def test_seed_flag_overrides(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        out1 = run_ok(runner, ["--config", str(cfg), "gen"])
        out2 = run_ok(runner, ["--config", str(cfg), "--seed", "99", "gen"])
        assert out1 != out2


class TestTrainEvalPipeline:
    @pytest.fixture()
    def ran(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        run_ok(runner, ["--config", str(cfg), "gen"])
        train_out = run_ok(runner, ["--config", str(cfg), "train"])
        return cfg, tmp_path / "run", train_out

    def test_train_writes_artifacts(self, ran):
        _, out_dir, train_out = ran
        assert train_out.startswith("train: arch=arch2 loss=wbce epochs=2")
        assert (out_dir / "model.ckpt").exists()
        report = (out_dir / "train_report.csv").read_text().splitlines()
        assert report[0] == "epoch,train_loss,exact_match,top1,overprov"
        assert len(report) == 3

    def test_eval_and_report(self, runner, ran):
        cfg, out_dir, _ = ran
        eval_out = run_ok(
            runner, ["--config", str(cfg), "eval", "--m", "2", "--m", "4", "--m", "8"]
        )
        assert "exact_match=" in eval_out and "overprov[8]=" in eval_out
        payload = json.loads((out_dir / "eval.json").read_text())
        assert payload["n_samples"] == 200
        report_out = run_ok(
            runner,
            ["--config", str(cfg), "report", "--eval-json", str(out_dir / "eval.json")],
        )
        assert "exact match" in report_out
        assert "tier profile" in report_out

    def test_eval_json_matches_scalar_simulate(self, runner, ran):
        cfg, out_dir, _ = ran
        run_ok(runner, ["--config", str(cfg), "eval"])
        payload = json.loads((out_dir / "eval.json").read_text())
        via_file = run_ok(
            runner,
            [
                "--config",
                str(cfg),
                "simulate",
                "--eval-json",
                str(out_dir / "eval.json"),
            ],
        )
        via_scalar = run_ok(
            runner,
            [
                "--config",
                str(cfg),
                "simulate",
                "--accuracy",
                repr(payload["exact_match"]),
            ],
        )
        assert via_file == via_scalar


class TestSimulate:
    def test_published_accuracy_span(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        out = run_ok(
            runner, ["--config", str(cfg), "simulate", "--accuracy", "0.9303"]
        )
        span = out.split("ms_per_token_span=")[1].split()[0]
        lo, hi = (float(v) for v in span.split("-"))
        assert lo == pytest.approx(0.28, abs=0.01)
        assert hi == pytest.approx(0.66, abs=0.01)
        assert "total_saved_ms[v100-32gb]=1352." in out

    def test_perfect_accuracy_all_zero(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        out = run_ok(
            runner,
            [
                "--config",
                str(cfg),
                "simulate",
                "--accuracy",
                "1.0",
                "--baseline",
                "1.0",
            ],
        )
        assert "ms_per_token_span=0.0000-0.0000" in out

    def test_csv_written(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        run_ok(runner, ["--config", str(cfg), "simulate", "--accuracy", "0.9"])
        lines = (tmp_path / "run" / "savings.csv").read_text().splitlines()
        assert lines[0].startswith("profile,source,full_load_ms")
        assert len(lines) == 4


class TestExitCodes:
    def test_missing_accuracy_is_config_error(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        result = runner.invoke(main, ["--config", str(cfg), "simulate"])
        assert result.exit_code == 2

    def test_bad_trace_is_data_error(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        bad = tmp_path / "bad.moepa"
        bad.write_bytes(b"NOTATRACE" * 4)
        result = runner.invoke(main, ["--config", str(cfg), "train", "--trace", str(bad)])
        assert result.exit_code == 3

    def test_unknown_config_key_is_config_error(self, runner, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"routr": {}}))
        result = runner.invoke(main, ["--config", str(path), "gen"])
        assert result.exit_code == 2

    def test_unknown_profile_is_config_error(self, runner, tmp_path):
        cfg = base_config(tmp_path)
        result = runner.invoke(
            main,
            [
                "--config",
                str(cfg),
                "simulate",
                "--accuracy",
                "0.9",
                "--profile",
                "quantum-9000",
            ],
        )
        assert result.exit_code == 2


class TestProfileDirEnv:
    def test_env_profile_dir(self, runner, tmp_path, monkeypatch):
        from moepredict.pipesim import BUILTIN_PROFILES
        import dataclasses

        custom = dataclasses.replace(
            BUILTIN_PROFILES["v100-32gb"], name="mybox", parallel_load_slots=2
        )
        profile_dir = tmp_path / "profiles"
        profile_dir.mkdir()
        custom.to_json(profile_dir / "mybox.json")
        monkeypatch.setenv("MOEPREDICT_PROFILES", str(profile_dir))
        cfg = base_config(tmp_path)
        out = run_ok(
            runner,
            [
                "--config",
                str(cfg),
                "simulate",
                "--accuracy",
                "0.9",
                "--profile",
                "mybox",
            ],
        )
        assert "total_saved_ms[mybox]=" in out
