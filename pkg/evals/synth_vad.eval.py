"""
Braintrust Eval for the synthetic skeleton anomaly benchmark.

Each row is one seed: train the desk-scale model on normal synthetic motion,
score a held-out split with injected anomalies, and report frame-level AUC.

Run locally:
    uv run braintrust eval evals/synth_vad.eval.py
"""

import os
import sys
from pathlib import Path

from autoevals import Score
from braintrust import Eval
from dotenv import load_dotenv

load_dotenv()

sys.path.insert(0, str(Path(__file__).parent.parent))

from dcmd.config import preset_config
from evals.experiment import run_synthetic_experiment
from evals.scorers import auc_scorer

SEEDS = (0, 1, 2)
PRESET = os.environ.get("DCMD_PRESET", "desk")


def synth_vad_task(input: dict, hooks=None) -> dict:
    result = run_synthetic_experiment(input["seed"], preset_config(PRESET))
    return {
        "scores": result.scores.tolist(),
        "labels": result.labels.tolist(),
        "auc_rec_only": result.auc_rec_only,
        "auc_pred_only": result.auc_pred_only,
        "config_hash": result.config_hash,
    }


def frame_auc(output, expected, **kwargs) -> Score:
    """Fused frame-level AUC (0-1)."""
    return auc_scorer(output, expected, **kwargs)


def fusion_beats_branches(output, expected, **kwargs) -> Score:
    """1.0 if the fused score beats both single-branch scores."""
    fused = auc_scorer(output, expected).score
    if fused is None:
        return Score(name="fusion_beats_branches", score=None)
    wins = fused > output["auc_rec_only"] and fused > output["auc_pred_only"]
    return Score(name="fusion_beats_branches", score=1.0 if wins else 0.0)


Eval(
    os.environ.get("DCMD_PROJECT", "dcmd"),
    experiment_name=os.environ.get("EXPERIMENT_NAME"),
    data=lambda: [{"input": {"seed": seed}, "expected": None} for seed in SEEDS],
    task=synth_vad_task,
    scores=[frame_auc, fusion_beats_branches],
    metadata={"preset": PRESET, "description": "DCMD on synthetic skeleton clips, 20% injected anomalies"},
)
