import json

import numpy as np
import pytest

from mcmt.cli import main
from mcmt.checkpoint import load_checkpoint


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One synth + 1-epoch train shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    out = root / "run"
    assert main(["synth", "--out", str(data), "--n-train", "12", "--n-test", "4",
                 "--seed", "7"]) == 0
    assert main(["train", "--profile", "synthetic", "--data", str(data),
                 "--out", str(out), "--epochs", "1", "--seed", "3"]) == 0
    checkpoint = out / "checkpoint_epoch001.mckp"
    assert checkpoint.is_file()
    manifest = [json.loads(l) for l in (data / "manifest.jsonl").read_text().splitlines()]
    return data, out, checkpoint, manifest


class TestHelp:
    @pytest.mark.parametrize("argv", [
        ["--help"],
        ["synth", "--help"],
        ["train", "--help"],
        ["eval", "--help"],
        ["infer", "--help"],
        ["inspect-masks", "--help"],
    ])
    def test_help_exits_zero(self, argv, capsys):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out


class TestTrain:
    def test_smoke_writes_checkpoints(self, cli_run):
        _, out, checkpoint, _ = cli_run
        assert (out / "checkpoint_init.mckp").is_file()
        assert (out / "effective_config.json").is_file()
        assert (out / "train_log.jsonl").is_file()

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.json"),
                   "--data", str(tmp_path), "--out", str(tmp_path / "o")])
        assert rc != 0
        assert "nope.json" in capsys.readouterr().err

    def test_no_config_or_profile(self, tmp_path, capsys):
        rc = main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o")])
        assert rc != 0
        assert "--profile" in capsys.readouterr().err

    def test_missing_data_dir(self, tmp_path, capsys):
        rc = main(["train", "--profile", "synthetic", "--out", str(tmp_path / "o")])
        assert rc != 0
        err = capsys.readouterr().err
        assert "MCMT_DATA_DIR" in err or "data" in err

    def test_env_var_supplies_data_dir(self, cli_run, tmp_path, monkeypatch):
        data, _, _, _ = cli_run
        monkeypatch.setenv("MCMT_DATA_DIR", str(data))
        rc = main(["train", "--profile", "synthetic", "--out", str(tmp_path / "env"),
                   "--epochs", "0"])
        assert rc == 0

    def test_activitynet_profile_dumped_with_published_defaults(self, tmp_path):
        data = tmp_path / "widedata"
        assert main(["synth", "--out", str(data), "--n-train", "6", "--n-test", "2",
                     "--n-v", "16", "--d-v", "512", "--d-w", "300", "--seed", "1"]) == 0
        out = tmp_path / "anet"
        assert main(["train", "--profile", "activitynet", "--data", str(data),
                     "--out", str(out), "--epochs", "0"]) == 0
        dumped = json.loads((out / "effective_config.json").read_text())
        assert dumped["learning_rate"] == 4e-4
        assert dumped["batch_size"] == 64
        assert dumped["d_v"] == 512
        assert dumped["n_vocab"] == 8000
        assert dumped["alpha"] == 5.0
        assert dumped["d_h"] == 256
        ckpt = load_checkpoint(out / "checkpoint_init.mckp")
        assert ckpt.config["n_v"] == 200


class TestEval:
    def test_report_and_dump(self, cli_run, tmp_path, capsys):
        data, _, checkpoint, _ = cli_run
        dump = tmp_path / "preds.jsonl"
        rc = main(["eval", "--checkpoint", str(checkpoint), "--data", str(data),
                   "--thresholds", "0.3,0.5,0.7", "--dump", str(dump)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "IoU=0.3" in out and "IoU=0.5" in out and "IoU=0.7" in out and "mIoU" in out
        lines = dump.read_text().strip().splitlines()
        assert len(lines) == 4  # one per eval record
        assert {"video_id", "query", "start", "end", "strategy", "k"} == set(json.loads(lines[0]))

    def test_both_strategies_run(self, cli_run, capsys):
        data, _, checkpoint, _ = cli_run
        for strategy in ("vote", "attn"):
            rc = main(["eval", "--checkpoint", str(checkpoint), "--data", str(data),
                       "--strategy", strategy])
            assert rc == 0
            assert f"strategy={strategy}" in capsys.readouterr().out

    def test_eval_without_ground_truth_errors(self, tmp_path, capsys):
        data = tmp_path / "trainonly"
        assert main(["synth", "--out", str(data), "--n-train", "8", "--n-test", "0",
                     "--seed", "2"]) == 0
        out = tmp_path / "run"
        assert main(["train", "--profile", "synthetic", "--data", str(data),
                     "--out", str(out), "--epochs", "0"]) == 0
        rc = main(["eval", "--checkpoint", str(out / "checkpoint_init.mckp"),
                   "--data", str(data)])
        assert rc != 0
        assert "ground truth" in capsys.readouterr().err


class TestInfer:
    def test_prints_moment_and_is_deterministic(self, cli_run, capsys):
        data, _, checkpoint, manifest = cli_run
        record = manifest[0]
        argv = ["infer", "--checkpoint", str(checkpoint), "--data", str(data),
                "--video-id", record["video_id"], "--query", record["query"]]
        assert main(argv) == 0
        first = capsys.readouterr().out.strip()
        start, end = map(float, first.split())
        assert 0.0 <= start <= end <= record["duration"]
        assert main(argv) == 0
        assert capsys.readouterr().out.strip() == first

    def test_unknown_video_id(self, cli_run, capsys):
        data, _, checkpoint, _ = cli_run
        rc = main(["infer", "--checkpoint", str(checkpoint), "--data", str(data),
                   "--video-id", "missing_video", "--query", "anything"])
        assert rc != 0
        assert "missing_video" in capsys.readouterr().err


class TestInspectMasks:
    def test_curve_file_layout(self, cli_run, tmp_path):
        data, _, checkpoint, manifest = cli_run
        record = manifest[0]
        out_path = tmp_path / "curves.txt"
        rc = main(["inspect-masks", "--checkpoint", str(checkpoint),
                   "--data", str(data), "--video-id", record["video_id"],
                   "--query", record["query"], "--out", str(out_path)])
        assert rc == 0
        lines = out_path.read_text().splitlines()
        beta = [float(v) for v in lines[0].split()[2:]]
        k = len(beta)
        assert k == 3  # synthetic profile k
        assert sum(beta) == pytest.approx(1.0, abs=1e-6)
        rows = [l.split() for l in lines[2:]]
        assert len(rows) == 32  # n_v
        for row in rows:
            assert len(row) == 1 + k + 2  # clip index + k masks + positive + easy
            values = [float(v) for v in row[1:]]
            positive, easy = values[-2], values[-1]
            assert easy == pytest.approx(1.0 - positive, abs=1e-5)
