"""Per-actor 2-D keypoint tracks and the sliding motion windows cut from them.

Joint order is the 17-keypoint COCO convention (see ``COCO_JOINTS``). Two
on-disk formats are read:

native-json
    one document per clip::

        {"clip_id": "01_0014",
         "actors": [{"actor_id": "3",
                     "frames": [{"idx": 0, "kp": [[x, y], ... 17 ...], "conf": [...]}]}]}

trajectory-csv
    one file per (clip, actor), laid out as ``<root>/<clip_id>/<actor_id>.csv``,
    rows ``frame_idx, x1, y1, ..., x17, y17`` (the per-actor trajectory layout
    of the human-related VAD benchmarks).

Labels are a CSV of ``clip_id, frame_idx, label``.
"""

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dcmd.errors import ArgumentError, ConfigError, DataError, ParseError

COCO_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
COCO_EDGES = (
    (0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (0, 6),
    (5, 6), (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
)
# (left, right) joint pairs, mirrored by a horizontal flip.
COCO_FLIP_PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))
N_JOINTS = len(COCO_JOINTS)
N_COORDS = 2
SCALE_FLOOR = 1e-4


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class ActorTrack:
    """One actor's poses in one clip, ordered by frame index."""

    actor_id: str
    clip_id: str
    frame_indices: np.ndarray  # (T,) int64, strictly increasing
    joints: np.ndarray  # (T, J, C) float64
    confidence: np.ndarray | None = None  # (T, J); kept, never used by the model

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 3 or self.joints.shape[1:] != (N_JOINTS, N_COORDS):
            raise DataError(f"track {self.key}: joints must be (T, {N_JOINTS}, {N_COORDS}), got {self.joints.shape}")
        if len(self.frame_indices) != len(self.joints):
            raise DataError(f"track {self.key}: {len(self.frame_indices)} frame indices for {len(self.joints)} poses")
        if np.any(np.diff(self.frame_indices) <= 0):
            raise DataError(f"track {self.key}: frame indices must be strictly increasing")
        if not np.all(np.isfinite(self.joints)):
            raise DataError(f"track {self.key}: non-finite coordinates")

    @property
    def key(self) -> str:
        return f"{self.clip_id}/{self.actor_id}"

    def __len__(self) -> int:
        return len(self.frame_indices)


@dataclass(frozen=True)
class NormRecord:
    """``source = normalized * scale + center``."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(N_COORDS))
    scale: float = 1.0
    degenerate: bool = False


@dataclass
class MotionWindow:
    actor_id: str
    clip_id: str
    start_frame: int
    history: np.ndarray  # (H, J, C)
    future: np.ndarray  # (F, J, C)
    norm_record: NormRecord = field(default_factory=NormRecord)

    @property
    def joints(self) -> np.ndarray:
        return np.concatenate([self.history, self.future], axis=0)

    @property
    def length(self) -> int:
        return len(self.history) + len(self.future)


@dataclass
class LabeledFrameSet:
    clip_id: str
    labels: np.ndarray  # (n_frames,) int8 in {0, 1}, frame i at index i

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise DataError(f"labels for clip {self.clip_id} must be 0 or 1")

    @property
    def n_frames(self) -> int:
        return len(self.labels)


@dataclass
class LoadedTracks:
    tracks: list[ActorTrack]
    dropped: list[str] = field(default_factory=list)

    @property
    def n_dropped(self) -> int:
        return len(self.dropped)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def num_workers() -> int:
    value = os.environ.get("DCMD_NUM_WORKERS", "").strip()
    if not value:
        return os.cpu_count() or 1
    try:
        return max(1, int(value))
    except ValueError as e:
        raise ConfigError(f"DCMD_NUM_WORKERS must be an integer, got {value!r}") from e


def load_tracks(path, fmt: str = "native-json") -> LoadedTracks:
    """Read every track under ``path`` (a file or a directory).

    Tracks with any frame missing joints (or with non-finite coordinates) are
    dropped and listed in ``LoadedTracks.dropped``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    if fmt == "native-json":
        files = sorted(path.rglob("*.json")) if path.is_dir() else [path]
        reader = _read_json_clip
    elif fmt == "trajectory-csv":
        files = sorted(path.rglob("*.csv")) if path.is_dir() else [path]
        reader = _read_trajectory_csv
    else:
        raise DataError(f"unknown track format '{fmt}'")

    with ThreadPoolExecutor(max_workers=min(num_workers(), max(1, len(files)))) as pool:
        parts = list(pool.map(reader, files))

    result = LoadedTracks(tracks=[])
    for tracks, dropped in parts:
        result.tracks.extend(tracks)
        result.dropped.extend(dropped)
    return result


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise DataError(f"{path}: cannot read: {e}") from e


def _read_json_clip(path: Path):
    text = _read_text(path)
    if not text.strip():
        return [], []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(path, e.msg, line=e.lineno) from e
    if not isinstance(doc, dict) or "clip_id" not in doc or not isinstance(doc.get("actors"), list):
        raise ParseError(path, "expected an object with 'clip_id' and an 'actors' list")

    clip_id = str(doc["clip_id"])
    tracks, dropped = [], []
    for a, actor in enumerate(doc["actors"]):
        try:
            actor_id = str(actor["actor_id"])
            rows = [
                (int(fr["idx"]), fr["kp"], fr.get("conf"))
                for fr in actor["frames"]
            ]
        except (KeyError, TypeError, ValueError, OverflowError) as e:
            raise ParseError(path, f"actor #{a}: malformed entry ({e})") from e
        track = _build_track(path, clip_id, actor_id, rows)
        if track is None:
            dropped.append(f"{clip_id}/{actor_id}")
        else:
            tracks.append(track)
    return tracks, dropped


def _read_trajectory_csv(path: Path):
    text = _read_text(path)
    clip_id, actor_id = path.parent.name, path.stem
    rows = []
    for line_no, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            values = [float(cell) for cell in row]
        except ValueError as e:
            if line_no == 1 and not _looks_numeric(row[0]):
                continue  # header
            raise ParseError(path, f"non-numeric value ({e})", line=line_no) from e
        coords = values[1:]
        if len(coords) % 2:
            raise ParseError(path, f"odd number of coordinates ({len(coords)})", line=line_no)
        if not math.isfinite(values[0]) or values[0] != int(values[0]):
            raise ParseError(path, f"frame index {values[0]} is not an integer", line=line_no)
        rows.append((int(values[0]), np.reshape(coords, (-1, 2)), None))
    if not rows:
        return [], []
    track = _build_track(path, clip_id, actor_id, rows)
    return ([], [f"{clip_id}/{actor_id}"]) if track is None else ([track], [])


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _build_track(path, clip_id: str, actor_id: str, rows) -> ActorTrack | None:
    """Assemble a track from ``(idx, kp, conf)`` rows; None when it must be dropped."""
    if not rows:
        return None
    rows = sorted(rows, key=lambda r: r[0])
    indices = [r[0] for r in rows]
    if len(set(indices)) != len(indices):
        raise ParseError(path, f"actor {actor_id}: duplicate frame index")
    poses = []
    for idx, kp, _ in rows:
        try:
            kp = np.asarray(kp, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ParseError(path, f"actor {actor_id} frame {idx}: malformed keypoints ({e})") from e
        if kp.shape != (N_JOINTS, N_COORDS) or not np.all(np.isfinite(kp)):
            return None
        poses.append(kp)
    conf = None
    if all(r[2] is not None for r in rows):
        try:
            conf = np.asarray([r[2] for r in rows], dtype=np.float64)
        except (TypeError, ValueError):
            conf = None
        if conf is not None and conf.shape != (len(rows), N_JOINTS):
            conf = None
    return ActorTrack(actor_id=actor_id, clip_id=clip_id, frame_indices=np.asarray(indices),
                      joints=np.stack(poses), confidence=conf)


def write_tracks_json(out_dir, tracks: list[ActorTrack]) -> list[Path]:
    """Write tracks as native-json, one document per clip."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_clip: dict[str, list[ActorTrack]] = {}
    for track in tracks:
        by_clip.setdefault(track.clip_id, []).append(track)
    written = []
    for clip_id, clip_tracks in sorted(by_clip.items()):
        doc = {"clip_id": clip_id, "actors": []}
        for track in clip_tracks:
            frames = []
            for i, idx in enumerate(track.frame_indices):
                frame = {"idx": int(idx), "kp": track.joints[i].tolist()}
                if track.confidence is not None:
                    frame["conf"] = track.confidence[i].tolist()
                frames.append(frame)
            doc["actors"].append({"actor_id": track.actor_id, "frames": frames})
        path = out_dir / f"{clip_id}.json"
        path.write_text(json.dumps(doc))
        written.append(path)
    return written


def load_labels(path) -> dict[str, LabeledFrameSet]:
    """Read ``clip_id, frame_idx, label`` rows; every clip must cover frames 0..n-1."""
    path = Path(path)
    text = _read_text(path)
    per_clip: dict[str, dict[int, int]] = {}
    for line_no, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row:
            continue
        if line_no == 1 and row[0].strip() == "clip_id":
            continue
        if len(row) != 3:
            raise ParseError(path, f"expected 3 columns, got {len(row)}", line=line_no)
        try:
            clip_id, idx, label = row[0].strip(), int(row[1]), int(row[2])
        except ValueError as e:
            raise ParseError(path, str(e), line=line_no) from e
        if label not in (0, 1):
            raise ParseError(path, f"label must be 0 or 1, got {label}", line=line_no)
        per_clip.setdefault(clip_id, {})[idx] = label

    labels = {}
    for clip_id, frames in per_clip.items():
        n = max(frames) + 1
        if len(frames) != n or min(frames) != 0:
            raise ParseError(path, f"clip {clip_id}: labels must cover frames 0..{n - 1} without gaps")
        labels[clip_id] = LabeledFrameSet(clip_id, np.array([frames[i] for i in range(n)]))
    return labels


def write_labels(path, labels: dict[str, LabeledFrameSet]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["clip_id", "frame_idx", "label"])
        for clip_id in sorted(labels):
            for idx, label in enumerate(labels[clip_id].labels):
                writer.writerow([clip_id, idx, int(label)])
    return path


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def extract_windows(track: ActorTrack, history: int, future: int, stride: int = 1) -> list[MotionWindow]:
    """Cut gap-free windows of ``history + future`` frames, ordered by start frame.

    Windows never span a gap in the frame indices; each gap-free run is
    strided from its own first frame.
    """
    if history < 1 or future < 1 or stride < 1:
        raise ArgumentError(f"history, future and stride must be >= 1, got {history}, {future}, {stride}")
    size = history + future
    idx = track.frame_indices
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    windows = []
    for run in np.split(np.arange(len(idx)), breaks):
        for offset in range(0, len(run) - size + 1, stride):
            first = run[offset]
            joints = track.joints[first:first + size]
            windows.append(MotionWindow(
                actor_id=track.actor_id,
                clip_id=track.clip_id,
                start_frame=int(idx[first]),
                history=joints[:history].copy(),
                future=joints[history:].copy(),
            ))
    return windows


def normalize_window(window: MotionWindow) -> MotionWindow:
    """Center on the first history frame's mean joint and divide by its larger bbox side.

    The new transform is composed into ``norm_record`` so ``denormalize`` still
    returns source coordinates.
    """
    first = window.history[0]
    center = first.mean(axis=0)
    extent = float(np.max(first.max(axis=0) - first.min(axis=0)))
    degenerate = extent < SCALE_FLOOR
    scale = max(extent, SCALE_FLOOR)

    old = window.norm_record
    record = NormRecord(
        center=old.center + old.scale * center,
        scale=old.scale * scale,
        degenerate=old.degenerate or degenerate,
    )
    return replace(
        window,
        history=(window.history - center) / scale,
        future=(window.future - center) / scale,
        norm_record=record,
    )


def denormalize(window: MotionWindow) -> np.ndarray:
    """Source coordinates of the whole window, (H+F, J, C)."""
    rec = window.norm_record
    return window.joints * rec.scale + rec.center


def flatten(window: MotionWindow) -> np.ndarray:
    """(H+F, 2J) matrix; row t is ``x1, y1, x2, y2, ...`` in COCO joint order."""
    joints = window.joints
    return joints.reshape(len(joints), -1)


def unflatten(matrix: np.ndarray, template: MotionWindow) -> MotionWindow:
    """Inverse of ``flatten``, taking ids, split and norm record from ``template``."""
    n_coords = template.history.shape[-1]
    joints = np.asarray(matrix).reshape(len(matrix), -1, n_coords)
    h = len(template.history)
    return replace(template, history=joints[:h].copy(), future=joints[h:].copy())


def stack_windows(windows: list[MotionWindow]) -> np.ndarray:
    """(B, H+F, J, C) batch array."""
    if not windows:
        raise DataError("no windows to stack")
    return np.stack([w.joints for w in windows])


def windows_from_tracks(tracks: list[ActorTrack], history: int, future: int, stride: int = 1) -> list[MotionWindow]:
    """Normalized windows of every track, in track order."""
    return [
        normalize_window(w)
        for track in tracks
        for w in extract_windows(track, history, future, stride)
    ]
