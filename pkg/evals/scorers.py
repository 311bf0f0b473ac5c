"""Frame-level anomaly scores: fusing window errors, ROC-AUC, score files.

A window's reconstruction error speaks for its history frames and its
prediction error for its future frames (``attribution="role"``), or its fused
score speaks for every frame it covers (``attribution="window"``). Frames are
reduced over windows, then over actors.
"""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from autoevals import Score
from braintrust import start_span
from scipy.stats import rankdata

from data.poses import LabeledFrameSet
from dcmd.config import ScoringOptions
from dcmd.errors import DataError, ParseError, UndefinedMetricError
from dcmd.inference import WindowErrors

SCORE_COLUMNS = ("clip_id", "frame_idx", "score", "label")


@dataclass
class ScoreSeries:
    clip_id: str
    scores: np.ndarray  # (n,)
    labels: np.ndarray | None = None  # (n,) 0/1
    rec: np.ndarray | None = None  # per-frame reconstruction component (nan where absent)
    pred: np.ndarray | None = None  # per-frame prediction component (nan where absent)
    covered: np.ndarray | None = None  # (n,) bool

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def uncovered(self) -> np.ndarray:
        if self.covered is None:
            return np.array([], dtype=np.int64)
        return np.flatnonzero(~self.covered)


class _Reducer:
    """Per-frame mean or max over contributions, with a coverage mask."""

    def __init__(self, n: int, how: str):
        self.how = how
        self.total = np.zeros(n)
        self.count = np.zeros(n, dtype=np.int64)
        self.peak = np.full(n, -np.inf)

    def add(self, frames: range, value: float) -> None:
        sl = slice(frames.start, frames.stop)
        self.total[sl] += value
        self.count[sl] += 1
        np.maximum(self.peak[sl], value, out=self.peak[sl])

    @property
    def present(self) -> np.ndarray:
        return self.count > 0

    def values(self) -> np.ndarray:
        out = np.full(len(self.count), np.nan)
        hit = self.present
        out[hit] = self.peak[hit] if self.how == "max" else self.total[hit] / self.count[hit]
        return out


def window_components(e: WindowErrors, opts: ScoringOptions) -> tuple[float, float]:
    """(reconstruction, prediction) components of one window."""
    rec = e.rec_err / e.rec_count if opts.rec_unit == "mean" else e.rec_err
    pred = e.pred_err_min if opts.sample_reduce == "min" else e.pred_err_mean
    return rec, pred


def _actor_frames(errors: list[WindowErrors], clip_len: int, opts: ScoringOptions):
    """Per-actor (score, rec, pred, covered) arrays for one clip."""
    w = opts.branch_weight
    by_actor: dict[str, list[WindowErrors]] = defaultdict(list)
    for e in errors:
        if e.start_frame < 0 or e.frames.stop > clip_len:
            raise DataError(
                f"window {e.clip_id}/{e.actor_id}@{e.start_frame} covers frames "
                f"{e.frames.start}..{e.frames.stop - 1} outside a clip of {clip_len} frames"
            )
        by_actor[e.actor_id].append(e)

    for actor_id in sorted(by_actor):
        rec_r = _Reducer(clip_len, opts.window_reduce)
        pred_r = _Reducer(clip_len, opts.window_reduce)
        if opts.attribution == "window":
            fused_r = _Reducer(clip_len, opts.window_reduce)
            for e in by_actor[actor_id]:
                rec, pred = window_components(e, opts)
                rec_r.add(e.frames, rec)
                pred_r.add(e.frames, pred)
                fused_r.add(e.frames, w * rec + (1 - w) * pred)
            score = fused_r.values()
            covered = fused_r.present
        else:
            for e in by_actor[actor_id]:
                rec, pred = window_components(e, opts)
                rec_r.add(e.history_frames, rec)
                pred_r.add(e.future_frames, pred)
            wr = np.where(rec_r.present, w, 0.0)
            wp = np.where(pred_r.present, 1.0 - w, 0.0)
            weight = wr + wp
            covered = weight > 0
            rec_v = np.nan_to_num(rec_r.values())
            pred_v = np.nan_to_num(pred_r.values())
            score = np.full(clip_len, np.nan)
            score[covered] = (wr * rec_v + wp * pred_v)[covered] / weight[covered]
        yield score, rec_r.values(), pred_r.values(), covered


def _reduce_actors(stack: np.ndarray, how: str) -> np.ndarray:
    """Reduce (A, n) over actors ignoring nan; all-nan columns give nan."""
    present = ~np.isnan(stack)
    hit = present.any(axis=0)
    out = np.full(stack.shape[1], np.nan)
    if how == "max":
        out[hit] = np.where(present, stack, -np.inf).max(axis=0)[hit]
    else:
        out[hit] = np.where(present, stack, 0.0).sum(axis=0)[hit] / present.sum(axis=0)[hit]
    return out


def minmax(scores: np.ndarray, covered: np.ndarray) -> np.ndarray:
    out = np.zeros_like(scores)
    if not covered.any():
        return out
    lo, hi = scores[covered].min(), scores[covered].max()
    if hi > lo:
        out[covered] = (scores[covered] - lo) / (hi - lo)
    return out


def fuse_scores(
    errors: list[WindowErrors],
    clip_len: int,
    opts: ScoringOptions,
    clip_id: str | None = None,
    labels: LabeledFrameSet | None = None,
) -> ScoreSeries:
    """Per-frame scores for one clip. Frames no window covers score 0 and are flagged.

    With ``normalize="none"`` a frame's score never decreases when any window
    error increases. The default per-clip min-max rescales by the clip's own
    range, so raising one window's error can lower other frames; order within
    the clip is still that of the raw fused scores.
    """
    if clip_id is None:
        clip_id = errors[0].clip_id if errors else ""
    if any(e.clip_id != clip_id for e in errors):
        raise DataError(f"fuse_scores got windows from clips other than {clip_id}")
    if labels is not None and labels.n_frames != clip_len:
        raise DataError(f"clip {clip_id}: {labels.n_frames} labels for {clip_len} frames")

    per_actor = list(_actor_frames(errors, clip_len, opts))
    if per_actor:
        scores = _reduce_actors(np.stack([a[0] for a in per_actor]), opts.actor_reduce)
        rec = _reduce_actors(np.stack([a[1] for a in per_actor]), opts.actor_reduce)
        pred = _reduce_actors(np.stack([a[2] for a in per_actor]), opts.actor_reduce)
    else:
        scores = rec = pred = np.full(clip_len, np.nan)
    covered = ~np.isnan(scores)
    scores = np.where(covered, scores, 0.0)
    if opts.normalize == "per-clip-minmax":
        scores = minmax(scores, covered)
    return ScoreSeries(
        clip_id=clip_id,
        scores=scores,
        labels=None if labels is None else labels.labels.copy(),
        rec=rec,
        pred=pred,
        covered=covered,
    )


def fuse_clips(
    errors: list[WindowErrors],
    opts: ScoringOptions,
    labels: dict[str, LabeledFrameSet] | None = None,
    clip_lengths: dict[str, int] | None = None,
) -> dict[str, ScoreSeries]:
    """Score every clip seen in ``errors`` or ``labels``.

    Clip length comes from ``clip_lengths``, then the labels, then the last
    frame any window covers.
    """
    by_clip: dict[str, list[WindowErrors]] = defaultdict(list)
    for e in errors:
        by_clip[e.clip_id].append(e)
    clip_ids = sorted(set(by_clip) | set(labels or {}))
    out = {}
    with start_span(name="fuse_scores", type="function", input={"clips": len(clip_ids), "windows": len(errors)}) as span:
        for clip_id in clip_ids:
            clip_errors = by_clip.get(clip_id, [])
            label_set = (labels or {}).get(clip_id)
            if clip_lengths and clip_id in clip_lengths:
                n = clip_lengths[clip_id]
            elif label_set is not None:
                n = label_set.n_frames
            else:
                n = max(e.frames.stop for e in clip_errors)
            out[clip_id] = fuse_scores(clip_errors, n, opts, clip_id=clip_id, labels=label_set)
        span.log(output={"frames": sum(len(s) for s in out.values())})
    return out


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + ½·P(tie), from average ranks."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"{len(scores)} scores for {len(labels)} labels")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    pos = labels == 1
    if np.any((labels != 0) & ~pos):
        raise DataError("labels must be 0 or 1")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC is undefined when labels contain a single class")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def series_auc(series: dict[str, ScoreSeries]) -> float:
    """Micro AUC over the concatenated frames of every labeled clip."""
    labeled = [s for s in series.values() if s.labels is not None]
    if not labeled:
        raise UndefinedMetricError("no labeled clips to evaluate")
    with start_span(name="roc_auc", type="score") as span:
        auc = roc_auc(np.concatenate([s.scores for s in labeled]), np.concatenate([s.labels for s in labeled]))
        span.log(output=auc, scores={"auc": auc})
    return auc


def auc_scorer(output, expected, **kwargs) -> Score:
    """Frame-level ROC-AUC (0-1) of ``output["scores"]``.

    Labels come from ``expected["labels"]``, or from ``output["labels"]`` when
    the task produced its own ground truth.
    """
    try:
        labels = expected["labels"] if expected else output["labels"]
        auc = roc_auc(output["scores"], labels)
    except (UndefinedMetricError, DataError, KeyError, TypeError):
        auc = None
    return Score(name="auc", score=auc)


def summarize(series: dict[str, ScoreSeries], dataset: str, config_hash: str | None = None) -> dict:
    return {
        "dataset": dataset,
        "auc": series_auc(series),
        "n_frames": int(sum(len(s) for s in series.values())),
        "config_hash": config_hash,
    }


# ---------------------------------------------------------------------------
# Score CSV
# ---------------------------------------------------------------------------


def write_scores(path, series: dict[str, ScoreSeries]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SCORE_COLUMNS)
        for clip_id in sorted(series):
            s = series[clip_id]
            for i, score in enumerate(s.scores):
                label = "" if s.labels is None else int(s.labels[i])
                writer.writerow([clip_id, i, repr(float(score)), label])
    return path


def read_scores(path, labels: dict[str, LabeledFrameSet] | None = None) -> dict[str, ScoreSeries]:
    """Score CSV back into series; ``labels`` (when given) override the file's label column."""
    path = Path(path)
    try:
        f = path.open(newline="")
    except OSError as e:
        raise DataError(f"cannot read scores {path}: {e}") from e
    rows: dict[str, dict[int, tuple[float, str]]] = defaultdict(dict)
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty score file")
        missing = set(SCORE_COLUMNS[:3]) - set(reader.fieldnames)
        if missing:
            raise ParseError(path, f"missing columns: {', '.join(sorted(missing))}", line=1)
        for line_no, row in enumerate(reader, start=2):
            try:
                score = float(row["score"])
                rows[row["clip_id"]][int(row["frame_idx"])] = (score, (row.get("label") or "").strip())
            except ValueError as e:
                raise ParseError(path, str(e), line=line_no) from e
            if not math.isfinite(score):
                raise ParseError(path, "non-finite score", line=line_no)
    if not rows:
        raise DataError(f"{path}: no scores")

    series = {}
    for clip_id, frames in rows.items():
        n = max(frames) + 1
        if len(frames) != n:
            raise DataError(f"{path}: clip {clip_id} has gaps in frame_idx")
        scores = np.array([frames[i][0] for i in range(n)])
        raw = [frames[i][1] for i in range(n)]
        clip_labels = None
        if labels is not None and clip_id in labels:
            clip_labels = labels[clip_id].labels.copy()
            if len(clip_labels) != n:
                raise DataError(f"clip {clip_id}: {len(clip_labels)} labels for {n} scored frames")
        elif all(v != "" for v in raw):
            clip_labels = np.array([int(v) for v in raw], dtype=np.int8)
        series[clip_id] = ScoreSeries(clip_id=clip_id, scores=scores, labels=clip_labels)
    return series
