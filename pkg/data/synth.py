"""Labeled synthetic skeleton clips for desk-scale checks.

Normal motion is a COCO template pose whose joints oscillate sinusoidally
around their rest positions: one frequency per actor, constant random phase
and amplitude per joint coordinate, plus a slow drift across the image.
Anomalous spans perturb a single actor:

freq-shift
    the actor's frequency is multiplied by 2.5-4 (phase stays continuous)
amplitude-burst
    oscillation amplitudes are multiplied by 3-5
joint-swap
    left and right joints trade places

A frame is labeled anomalous when any actor is perturbed in it.
"""

import math
from dataclasses import dataclass

import numpy as np

from data.poses import COCO_FLIP_PAIRS, N_COORDS, N_JOINTS, ActorTrack, LabeledFrameSet
from dcmd.errors import ConfigError
from dcmd.seeding import derive_seed

ANOMALY_KINDS = ("freq-shift", "amplitude-burst", "joint-swap")

# Rest pose in pixels, person facing the camera (image y grows downwards).
TEMPLATE_POSE = np.array([
    [0.0, -45.0],
    [3.0, -48.0], [-3.0, -48.0],
    [6.0, -46.0], [-6.0, -46.0],
    [12.0, -30.0], [-12.0, -30.0],
    [16.0, -12.0], [-16.0, -12.0],
    [18.0, 5.0], [-18.0, 5.0],
    [8.0, 5.0], [-8.0, 5.0],
    [9.0, 28.0], [-9.0, 28.0],
    [10.0, 50.0], [-10.0, 50.0],
])

# Average anomalous span length in frames.
SPAN_LENGTH = 15


@dataclass
class SynthConfig:
    n_clips: int = 1
    n_actors: int = 2
    clip_len: int = 100
    anomaly_rate: float = 0.0
    anomaly_kind: str = "freq-shift"
    # Cycles per frame; each actor draws its own within +-20%.
    base_freq: float = 0.05
    clip_prefix: str = "clip"

    def validate(self) -> None:
        if self.n_clips < 1 or self.n_actors < 1 or self.clip_len < 1:
            raise ConfigError("synth.n_clips, synth.n_actors and synth.clip_len must be >= 1")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ConfigError(f"synth.anomaly_rate must be in [0, 1], got {self.anomaly_rate}")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ConfigError(f"synth.anomaly_kind must be one of {', '.join(ANOMALY_KINDS)}")
        if not 0.0 < self.base_freq < 0.5:
            raise ConfigError("synth.base_freq must be in (0, 0.5) cycles per frame")


def synth_generate(cfg: SynthConfig, seed: int) -> tuple[list[ActorTrack], dict[str, LabeledFrameSet]]:
    """Tracks for every clip plus per-clip frame labels. Pure in ``(cfg, seed)``."""
    cfg.validate()
    tracks, labels = [], {}
    for c in range(cfg.n_clips):
        clip_id = f"{cfg.clip_prefix}_{c:03d}"
        rng = np.random.default_rng(derive_seed(seed, "synth", c))
        clip_tracks, clip_labels = _generate_clip(cfg, clip_id, rng)
        tracks.extend(clip_tracks)
        labels[clip_id] = LabeledFrameSet(clip_id, clip_labels)
    return tracks, labels


def anomaly_spans(clip_len: int, rate: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Non-overlapping ``[start, end)`` spans covering ``round(rate * clip_len)`` frames."""
    total = int(round(rate * clip_len))
    if total == 0:
        return []
    n_spans = max(1, math.ceil(total / SPAN_LENGTH))
    sizes = np.full(n_spans, total // n_spans)
    sizes[: total % n_spans] += 1
    free = clip_len - total
    gaps = np.sort(rng.integers(0, free + 1, size=n_spans))
    spans, used = [], 0
    for gap, size in zip(gaps, sizes):
        start = int(gap) + used
        spans.append((start, start + int(size)))
        used += int(size)
    return spans


def _generate_clip(cfg: SynthConfig, clip_id: str, rng: np.random.Generator):
    n = cfg.clip_len
    t = np.arange(n, dtype=np.float64)
    labels = np.zeros(n, dtype=np.int8)

    actors = []
    for _ in range(cfg.n_actors):
        offset = rng.uniform([60.0, 60.0], [580.0, 300.0])
        scale = rng.uniform(0.8, 1.2)
        f0 = cfg.base_freq * rng.uniform(0.8, 1.2)
        actors.append({
            "offset": offset,
            "scale": scale,
            "f0": f0,
            "freq": np.full(n, f0),
            "amp": rng.uniform(1.0, 4.0, size=(N_JOINTS, N_COORDS)),
            "phase": rng.uniform(0.0, 2.0 * math.pi, size=(N_JOINTS, N_COORDS)),
            "drift": rng.uniform(-0.5, 0.5, size=N_COORDS),
            "amp_gain": np.ones(n),
            "swapped": np.zeros(n, dtype=bool),
        })

    for start, end in anomaly_spans(n, cfg.anomaly_rate, rng):
        actor = actors[int(rng.integers(cfg.n_actors))]
        if cfg.anomaly_kind == "freq-shift":
            actor["freq"][start:end] *= rng.uniform(2.5, 4.0)
        elif cfg.anomaly_kind == "amplitude-burst":
            actor["amp_gain"][start:end] = rng.uniform(3.0, 5.0)
        else:
            actor["swapped"][start:end] = True
        labels[start:end] = 1

    tracks = []
    for a, actor in enumerate(actors):
        # Phase accumulates the per-frame frequency, so shifts stay continuous.
        # Frame k already includes freq[k], so a shift starts on its first labeled frame.
        theta = 2.0 * math.pi * (np.cumsum(actor["freq"]) - actor["f0"])
        wave = np.sin(theta[:, None, None] + actor["phase"][None])
        joints = (
            actor["offset"]
            + actor["scale"] * TEMPLATE_POSE[None]
            + actor["scale"] * actor["amp_gain"][:, None, None] * actor["amp"][None] * wave
            + t[:, None, None] * actor["drift"]
        )
        for left, right in COCO_FLIP_PAIRS:
            rows = actor["swapped"]
            joints[rows, left], joints[rows, right] = joints[rows, right].copy(), joints[rows, left].copy()
        tracks.append(ActorTrack(actor_id=str(a), clip_id=clip_id, frame_indices=np.arange(n), joints=joints))
    return tracks, labels
