import importlib.util
from pathlib import Path

import braintrust
import numpy as np
import pytest

from dcmd.config import preset_config
from evals.experiment import ExperimentSetup, make_splits, run_synthetic_experiment

ROOT = Path(__file__).resolve().parent.parent


def test_splits_are_disjoint_and_labeled():
    setup = ExperimentSetup(train_clips=2, test_clips_per_kind=1, clip_len=40)
    train_tracks, test_tracks, labels = make_splits(setup, seed=0)
    assert {t.clip_id for t in train_tracks} == {"train_000", "train_001"}
    assert set(labels) == {f"test-{kind}_000" for kind in setup.kinds}
    assert {t.clip_id for t in test_tracks} == set(labels)
    assert all(lab.labels.sum() == 8 for lab in labels.values())


def test_small_experiment_runs():
    cfg = preset_config("desk", {"train": {"epochs": 1}, "scoring": {"n_samples": 2}})
    setup = ExperimentSetup(train_clips=1, test_clips_per_kind=1, n_actors=1, clip_len=30)
    result = run_synthetic_experiment(0, cfg, setup)
    assert 0.0 <= result.auc <= 1.0
    assert 0.0 <= result.auc_rec_only <= 1.0 and 0.0 <= result.auc_pred_only <= 1.0
    assert result.n_frames == 90
    assert len(result.scores) == len(result.labels) == 90
    assert len(result.history) == 1


@pytest.mark.slow
def test_desk_model_separates_synthetic_anomalies():
    results = [run_synthetic_experiment(seed) for seed in (0, 1, 2)]
    aucs = [r.auc for r in results]
    assert sum(auc >= 0.85 for auc in aucs) >= 2, aucs
    assert np.mean([r.auc for r in results]) > np.mean([max(r.auc_rec_only, r.auc_pred_only) for r in results])


def test_eval_file_registers_scorers(monkeypatch):
    monkeypatch.delenv("DCMD_PROJECT", raising=False)
    calls = []
    monkeypatch.setattr(braintrust, "Eval", lambda *args, **kwargs: calls.append((args, kwargs)))
    spec = importlib.util.spec_from_file_location("synth_vad_eval", ROOT / "evals" / "synth_vad.eval.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)

    (args, kwargs), = calls
    assert args == ("dcmd",)
    assert [s.__name__ for s in kwargs["scores"]] == ["frame_auc", "fusion_beats_branches"]
    assert [row["input"]["seed"] for row in kwargs["data"]()] == [0, 1, 2]

    output = {"scores": [0.1, 0.4, 0.35, 0.8], "labels": [0, 0, 1, 1], "auc_rec_only": 0.5, "auc_pred_only": 0.7}
    assert module.frame_auc(output, None).score == 0.75
    assert module.fusion_beats_branches(output, None).score == 1.0
    assert module.fusion_beats_branches({**output, "auc_pred_only": 0.8}, None).score == 0.0
