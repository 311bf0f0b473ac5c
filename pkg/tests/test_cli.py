import csv
import json

import pytest

from dcmd.checkpoint import load_checkpoint
from dcmd.cli import CHECKPOINT_NAME, TRAIN_LOG_NAME, main

SMALL_MODEL = [
    "--preset", "desk",
    "--denoiser.hidden", "16", "--denoiser.heads", "2",
    "--autoencoder.hidden_channels", "[8, 4]", "--autoencoder.embedding_dim", "8",
    "--train.epochs", "1",
]


@pytest.fixture(autouse=True)
def quiet_env(monkeypatch, tmp_path):
    monkeypatch.delenv("BRAINTRUST_API_KEY", raising=False)
    monkeypatch.chdir(tmp_path)


def synth(out, *extra):
    return main(["synth", "--out", str(out), "--synth.n_actors", "1", "--synth.clip_len", "20", *extra])


@pytest.fixture
def trained(tmp_path):
    data = tmp_path / "data"
    assert synth(data, "--synth.anomaly_rate", "0.3") == 0
    run = tmp_path / "run"
    code = main(["train", *SMALL_MODEL, "--data.train", str(data / "tracks"), "--output_dir", str(run)])
    assert code == 0
    return data, run


def test_synth_writes_tracks_and_labels(tmp_path):
    out = tmp_path / "d"
    assert synth(out, "--seed", "7") == 0
    assert (out / "tracks" / "clip_000.json").exists()
    with (out / "labels.csv").open() as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 20 and all(r["label"] == "0" for r in rows)
    assert json.loads((out / "synth.json").read_text())["seed"] == 7


def test_synth_is_reproducible(tmp_path):
    synth(tmp_path / "a", "--seed", "7", "--synth.anomaly_rate", "0.2")
    synth(tmp_path / "b", "--seed", "7", "--synth.anomaly_rate", "0.2")
    for name in ("tracks/clip_000.json", "labels.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_refuses_non_empty_directory(tmp_path, capsys):
    out = tmp_path / "d"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert synth(out) == 1
    assert "--force" in capsys.readouterr().err
    assert synth(out, "--force") == 0


def test_train_writes_run_directory(trained, capsys):
    _, run = trained
    assert (run / CHECKPOINT_NAME).exists()
    assert json.loads((run / "config.json").read_text())["denoiser"]["hidden"] == 16
    with (run / TRAIN_LOG_NAME).open() as f:
        assert [r["epoch"] for r in csv.DictReader(f)] == ["1"]


def test_train_banner_shows_lambda(tmp_path, capsys):
    data = tmp_path / "data"
    synth(data)
    main(["train", *SMALL_MODEL, "--train.lambda", "0.05", "--data.train", str(data / "tracks"), "--output_dir", str(tmp_path / "r")])
    assert "lambda=0.05" in capsys.readouterr().out


def test_resume_continues_epoch_counter(trained):
    _, run = trained
    code = main(["train", "--resume", str(run / CHECKPOINT_NAME), "--train.epochs", "2", "--output_dir", str(run)])
    assert code == 0
    assert load_checkpoint(run / CHECKPOINT_NAME).epoch == 2
    with (run / TRAIN_LOG_NAME).open() as f:
        assert [r["epoch"] for r in csv.DictReader(f)] == ["1", "2"]


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"bogus": 1}}))
    assert main(["train", "--config", str(cfg)]) == 1
    assert "train.bogus" in capsys.readouterr().err


def test_missing_training_data_is_config_error():
    assert main(["train", *SMALL_MODEL]) == 1


def test_bad_flag_exits_with_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["train", "--train.bogus"])
    assert info.value.code == 1


def test_help_lists_keys_with_defaults(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "--train.lambda" in out and "(default: 0.01)" in out
    assert "--scoring.branch_weight" in out


def test_score_eval_plot(trained, tmp_path, capsys):
    data, run = trained
    out = tmp_path / "scored"
    code = main(["score", "--checkpoint", str(run / CHECKPOINT_NAME), "--data", str(data / "tracks"),
                 "--labels", str(data / "labels.csv"), "--out", str(out), "--scoring.n_samples", "2"])
    assert code == 0
    with (out / "scores.csv").open() as f:
        assert len(list(csv.DictReader(f))) == 20
    meta = json.loads((out / "scores.meta.json").read_text())
    assert meta["n_windows"] == 14 and meta["dataset"] == "tracks"

    capsys.readouterr()
    assert main(["eval", "--scores", str(out / "scores.csv")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert 0.0 <= summary["auc"] <= 1.0
    assert summary["config_hash"] == meta["config_hash"] and summary["n_frames"] == 20

    assert main(["plot", "--scores", str(out / "scores.csv"), "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "clip_000.png").exists()


def test_repeated_runs_write_identical_files(trained, tmp_path):
    data, run = trained
    first = (run / CHECKPOINT_NAME).read_bytes()
    assert main(["train", *SMALL_MODEL, "--data.train", str(data / "tracks"), "--output_dir", str(run)]) == 0
    assert (run / CHECKPOINT_NAME).read_bytes() == first

    outs = [tmp_path / "s1", tmp_path / "s2"]
    for out in outs:
        code = main(["score", "--checkpoint", str(run / CHECKPOINT_NAME), "--data", str(data / "tracks"),
                     "--labels", str(data / "labels.csv"), "--out", str(out), "--seed", "7",
                     "--scoring.n_samples", "2"])
        assert code == 0
    for name in ("scores.csv", "windows.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_score_with_other_window_is_shape_error(trained, tmp_path):
    data, run = trained
    code = main(["score", "--checkpoint", str(run / CHECKPOINT_NAME), "--data", str(data / "tracks"),
                 "--out", str(tmp_path / "s"), "--window.history", "4"])
    assert code == 2


def test_eval_small_score_file(tmp_path, capsys):
    path = tmp_path / "scores.csv"
    path.write_text("clip_id,frame_idx,score,label\nc,0,0.1,0\nc,1,0.4,0\nc,2,0.35,1\nc,3,0.8,1\n")
    assert main(["eval", "--scores", str(path), "--dataset", "toy"]) == 0
    assert json.loads(capsys.readouterr().out) == {"auc": 0.75, "config_hash": None, "dataset": "toy", "n_frames": 4}


def test_eval_single_class_is_data_error(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("clip_id,frame_idx,score,label\nc,0,0.1,0\nc,1,0.4,0\n")
    assert main(["eval", "--scores", str(path)]) == 2


def test_plot_empty_score_file(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("")
    assert main(["plot", "--scores", str(path), "--out", str(tmp_path / "p")]) == 2


def test_missing_checkpoint(tmp_path):
    assert main(["score", "--checkpoint", str(tmp_path / "none"), "--data", ".", "--out", str(tmp_path / "s")]) == 2
