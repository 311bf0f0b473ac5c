"""Checkpoint file format.

One ``torch.save`` dict holding the format version, package metadata, the run
config, the explicit β vector, the epoch counter, the loss history and the
model, optimizer and RNG state. Saving the same checkpoint twice gives
identical bytes, so the file digest identifies it.
"""

import hashlib
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import torch

from dcmd import __version__
from dcmd.config import RunConfig
from dcmd.diffusion import NoiseSchedule
from dcmd.errors import CheckpointError

FORMAT_VERSION = 1

_KEYS = ("version", "meta", "config", "betas", "variance", "epoch", "model", "optimizer", "rng", "history")


@dataclass
class Checkpoint:
    config: dict
    betas: list[float]
    variance: str
    epoch: int
    model_state: dict
    optimizer_state: dict | None = None
    rng_state: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=lambda: {"package_version": __version__})

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config).resolved()

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.from_betas(self.betas, self.variance)


def dumps(ckpt: Checkpoint) -> bytes:
    state = {
        "version": FORMAT_VERSION,
        "meta": ckpt.meta,
        "config": ckpt.config,
        "betas": [float(b) for b in ckpt.betas],
        "variance": ckpt.variance,
        "epoch": int(ckpt.epoch),
        "model": {k: v.detach().cpu() for k, v in ckpt.model_state.items()},
        "optimizer": ckpt.optimizer_state,
        "rng": ckpt.rng_state,
        "history": ckpt.history,
    }
    buf = io.BytesIO()
    torch.save(state, buf)
    return buf.getvalue()


def loads(data: bytes, source: str = "<bytes>") -> Checkpoint:
    try:
        state = torch.load(io.BytesIO(data), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"{source}: truncated or corrupt checkpoint ({e})") from e
    if not isinstance(state, dict) or "version" not in state:
        raise CheckpointError(f"{source}: not a checkpoint file")
    if state["version"] != FORMAT_VERSION:
        raise CheckpointError(f"{source}: checkpoint format version {state['version']}, expected {FORMAT_VERSION}")
    missing = [k for k in _KEYS if k not in state]
    if missing:
        raise CheckpointError(f"{source}: checkpoint is missing {', '.join(missing)}")
    return Checkpoint(
        config=state["config"],
        betas=state["betas"],
        variance=state["variance"],
        epoch=state["epoch"],
        model_state=state["model"],
        optimizer_state=state["optimizer"],
        rng_state=state["rng"],
        history=state["history"],
        meta=state["meta"],
    )


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return loads(data, source=str(path))


def checkpoint_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
