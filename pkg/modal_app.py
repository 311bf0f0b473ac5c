"""
Modal app: runs full-scale DCMD training on a Modal container.

Run directories (synthetic data, checkpoints, training logs) live on a
persistent volume, so results survive the container and later `score` runs
can read them.

Train:
    uv run modal run modal_app.py --config run.json --run-name full-0

Without --config the run trains on a synthetic dataset generated on the
volume first.

Prerequisites:
    uv run modal token new   # one-time: authenticate with Modal
    # Create a Modal secret named "dcmd-secrets" with:
    #   BRAINTRUST_API_KEY=...   (optional; enables run tracing)
"""

import json
import sys
from pathlib import Path

import modal

app = modal.App("dcmd-train")

runs_volume = modal.Volume.from_name("dcmd-runs", create_if_missing=True)
RUNS_DIR = "/runs"

image = (
    modal.Image.debian_slim(python_version="3.11")
    .pip_install(
        "torch",
        "numpy",
        "scipy",
        "matplotlib",
        "braintrust>=0.0.172",
        "autoevals",
        "python-dotenv",
    )
    .add_local_dir(".", remote_path="/app")
)


def synth_args(run_dir: str, seed: int) -> list[str]:
    return ["synth", "--out", f"{run_dir}/data", "--seed", str(seed), "--force",
            "--synth.n_clips", "16", "--synth.clip_len", "300"]


def train_args(run_dir: str, preset: str, config_path: str | None, train_data: str | None, device: str = "cpu") -> list[str]:
    args = ["train", "--preset", preset, "--output_dir", run_dir, "--train.device", device]
    if config_path:
        args += ["--config", config_path]
    if train_data:
        args += ["--data.train", json.dumps(train_data)]
    return args


@app.function(
    image=image,
    secrets=[modal.Secret.from_name("dcmd-secrets")],
    volumes={RUNS_DIR: runs_volume},
    timeout=6 * 60 * 60,
    gpu="A10G",
)
def train_remote(config_json: str, run_name: str, preset: str = "full", seed: int = 0) -> dict:
    """Train one run under /runs/<run_name>; returns the exit code and checkpoint path."""
    sys.path.insert(0, "/app")
    import torch

    from dcmd.cli import CHECKPOINT_NAME, main

    run_dir = f"{RUNS_DIR}/{run_name}"
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    config_path = None
    train_data = None
    if config_json:
        config_path = f"{run_dir}/config.input.json"
        Path(config_path).write_text(config_json)
    if not config_json or not json.loads(config_json).get("data", {}).get("train"):
        print(f"[train_remote] generating synthetic data in {run_dir}/data", flush=True)
        code = main(synth_args(run_dir, seed))
        if code:
            return {"exit_code": code, "checkpoint": None}
        train_data = f"{run_dir}/data/tracks"

    print(f"[train_remote] training {run_name} (preset {preset})", flush=True)
    device = "cuda" if torch.cuda.is_available() else "cpu"
    code = main(train_args(run_dir, preset, config_path, train_data, device))
    runs_volume.commit()
    checkpoint = f"{run_dir}/{CHECKPOINT_NAME}" if code == 0 else None
    print(f"[train_remote] exit code {code}", flush=True)
    return {"exit_code": code, "checkpoint": checkpoint}


@app.local_entrypoint()
def run_training(config: str = "", run_name: str = "full", preset: str = "full", seed: int = 0):
    """
    Train remotely from your laptop.

    Usage:
        uv run modal run modal_app.py --config run.json --run-name full-0
    """
    config_json = Path(config).read_text() if config else ""
    print(f"\nTraining '{run_name}' on Modal (preset {preset})\n")
    result = train_remote.remote(config_json, run_name, preset, seed)
    print(json.dumps(result, indent=2))
