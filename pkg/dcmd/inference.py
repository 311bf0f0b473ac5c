"""Mask-completion sampling of future motion and per-window dual-branch errors.

Reverse diffusion starts from pure noise over the whole window. After every
reverse step the observed history rows are replaced, in the time domain, by
the padded observation noised to the same step, so the sampled future is
always conditioned on the (noised) observed motion.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from braintrust import start_span

from data.poses import MotionWindow, stack_windows
from dcmd.config import ScoringOptions
from dcmd.diffusion import q_sample, reverse_step
from dcmd.errors import ParseError, ShapeError, StateError
from dcmd.network import DCMD
from dcmd.reconstruction import window_sq_error
from dcmd.seeding import generator
from dcmd.spectrum import dct, idct
from dcmd.uad import pred_errors

WINDOW_COLUMNS = (
    "clip_id", "actor_id", "start_frame", "rec_err", "pred_err_min", "pred_err_mean",
    "rec_count", "history", "future", "pred_errs",
)


@dataclass
class CompletionState:
    denoised: torch.Tensor  # X_t^d, (B, N, W)
    noised: torch.Tensor  # X_t^n, (B, N, W)
    mask: torch.Tensor  # (N, W), 1 on observed rows
    t: int


@dataclass
class WindowErrors:
    clip_id: str
    actor_id: str
    start_frame: int
    history: int
    future: int
    rec_err: float  # summed squared error over the history
    rec_count: int  # elements summed in rec_err (H*J*C)
    pred_errs: np.ndarray  # (m,) smooth-L1 per generated future

    @property
    def pred_err_min(self) -> float:
        return float(np.min(self.pred_errs))

    @property
    def pred_err_mean(self) -> float:
        return float(np.mean(self.pred_errs))

    @property
    def history_frames(self) -> range:
        return range(self.start_frame, self.start_frame + self.history)

    @property
    def future_frames(self) -> range:
        start = self.start_frame + self.history
        return range(start, start + self.future)

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.start_frame + self.history + self.future)


def observation_mask(history: int, future: int, width: int, dtype=torch.float64, device=None) -> torch.Tensor:
    mask = torch.zeros(history + future, width, dtype=dtype, device=device)
    mask[:history] = 1.0
    return mask


def pad_observation(x_hist: torch.Tensor, future: int) -> torch.Tensor:
    """Append ``future`` copies of the last observed row, (..., H, W) -> (..., H+F, W)."""
    if future == 0:
        return x_hist
    last = x_hist[..., -1:, :]
    return torch.cat([x_hist, last.expand(*last.shape[:-2], future, last.shape[-1])], dim=-2)


def mask_complete(state: CompletionState, to_spectrum=dct, from_spectrum=idct) -> torch.Tensor:
    """to_spectrum(M ⊙ from_spectrum(X^n) + (1 − M) ⊙ from_spectrum(X^d))."""
    m = state.mask
    return to_spectrum(m * from_spectrum(state.noised) + (1.0 - m) * from_spectrum(state.denoised))


def _draw(generators: list[torch.Generator], m: int, shape, like: torch.Tensor) -> torch.Tensor:
    """Standard normal draws, ``m`` per generator, stacked row-major, (len(generators)*m, *shape)."""
    parts = [torch.randn((m, *shape), generator=g, dtype=like.dtype) for g in generators]
    return torch.cat(parts).to(like.device)


@torch.no_grad()
def sample_sequences(
    model: DCMD,
    x_hist: torch.Tensor,
    generators: list[torch.Generator],
    m: int,
    mask_completion: bool = True,
    on_step: Callable[[CompletionState, torch.Tensor], None] | None = None,
) -> torch.Tensor:
    """Full windows sampled for each history, (B, m, H+F, J, C).

    ``generators`` holds one stream per history row; each row's draws do not
    depend on the rest of the batch. The loop index k runs T-1..0 and is the
    target step of the reverse step from k+1 to k.
    """
    if model is None:
        raise StateError("no model loaded")
    if m < 1:
        raise ValueError("need at least one sample")
    H, F = model.history, model.future
    B = len(x_hist)
    if len(generators) != B:
        raise ValueError(f"{len(generators)} generators for {B} histories")
    model.eval()
    sched = model.schedule

    u = model.condition(model.autoencoder.encode(x_hist)).repeat_interleave(m, dim=0)
    observed = model.to_spectrum(pad_observation(model.to_matrix(x_hist), F)).repeat_interleave(m, dim=0)
    shape = observed.shape[1:]
    mask = observation_mask(H, F, shape[-1], dtype=observed.dtype, device=observed.device)

    x = _draw(generators, m, shape, observed)
    for k in range(sched.T - 1, -1, -1):
        z = _draw(generators, m, shape, observed) if k > 0 else torch.zeros_like(x)
        eps_pred = model.denoiser(x, k + 1, u).eps_pred
        denoised = reverse_step(x, k + 1, eps_pred, z, sched)
        if not mask_completion:
            x = denoised
            if on_step is not None:
                on_step(CompletionState(denoised, denoised, mask, k), x)
            continue
        if k >= 1:
            noised = q_sample(observed, k, _draw(generators, m, shape, observed), sched)
        else:
            noised = observed
        state = CompletionState(denoised, noised, mask, k)
        x = mask_complete(state, model.to_spectrum, model.from_spectrum)
        if on_step is not None:
            on_step(state, x)

    seq = model.from_matrix(model.from_spectrum(x))
    return seq.reshape(B, m, *seq.shape[1:])


def sample_future(model: DCMD, x_hist: torch.Tensor, m: int, seed: int, mask_completion: bool = True) -> torch.Tensor:
    """``m`` predicted futures for one (H, J, C) history, (m, F, J, C)."""
    if model is None:
        raise StateError("no model loaded")
    if x_hist.ndim != 3:
        raise ShapeError(f"history must be (H, J, C), got {tuple(x_hist.shape)}")
    seqs = sample_sequences(model, x_hist[None], [generator(seed, "sample")], m, mask_completion)
    return seqs[0, :, model.history:]


def window_stream(seed: int, window: MotionWindow) -> torch.Generator:
    return generator(seed, "score", window.clip_id, window.actor_id, window.start_frame)


@torch.no_grad()
def score_windows(model: DCMD, windows: list[MotionWindow], opts: ScoringOptions, seed: int) -> list[WindowErrors]:
    """Reconstruction and prediction errors for every window, in input order."""
    if model is None:
        raise StateError("no model loaded")
    H, F = model.history, model.future
    dtype = next(model.parameters()).dtype
    device = next(model.parameters()).device
    beta = model.cfg.train.smooth_l1_beta
    results = []
    with start_span(name="score_windows", type="task", input={"windows": len(windows), "samples": opts.n_samples}) as span:
        for start in range(0, len(windows), opts.batch_size):
            chunk = windows[start:start + opts.batch_size]
            x = torch.as_tensor(stack_windows(chunk), dtype=dtype, device=device)
            model.check_windows(x)
            hist, fut = x[:, :H], x[:, H:]
            recon, _ = model.autoencoder(hist)
            rec = window_sq_error(recon, hist)

            seqs = sample_sequences(
                model, hist, [window_stream(seed, w) for w in chunk], opts.n_samples, opts.mask_completion,
            )
            futures = seqs[:, :, H:]
            target = fut[:, None].expand_as(futures)
            pred = pred_errors(target.flatten(0, 1), futures.flatten(0, 1), beta).view(len(chunk), -1)

            for w, r, p in zip(chunk, rec.cpu().tolist(), pred.cpu().numpy()):
                results.append(WindowErrors(
                    clip_id=w.clip_id,
                    actor_id=w.actor_id,
                    start_frame=w.start_frame,
                    history=H,
                    future=F,
                    rec_err=float(r),
                    rec_count=int(hist[0].numel()),
                    pred_errs=p.astype(np.float64),
                ))
        span.log(output={"windows": len(results)})
    return results


def window_errors(model: DCMD, window: MotionWindow, m: int, seed: int = 0) -> WindowErrors:
    return score_windows(model, [window], ScoringOptions(n_samples=m), seed)[0]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_window_errors(path, errors: list[WindowErrors]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(WINDOW_COLUMNS)
        for e in errors:
            writer.writerow([
                e.clip_id, e.actor_id, e.start_frame, repr(e.rec_err), repr(e.pred_err_min), repr(e.pred_err_mean),
                e.rec_count, e.history, e.future, ";".join(repr(float(v)) for v in e.pred_errs),
            ])
    return path


def read_window_errors(path) -> list[WindowErrors]:
    path = Path(path)
    errors = []
    with path.open(newline="") as f:
        reader = csv.DictReader(f)
        missing = set(WINDOW_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ParseError(path, f"missing columns: {', '.join(sorted(missing))}", line=1)
        for line_no, row in enumerate(reader, start=2):
            try:
                errors.append(WindowErrors(
                    clip_id=row["clip_id"],
                    actor_id=row["actor_id"],
                    start_frame=int(row["start_frame"]),
                    history=int(row["history"]),
                    future=int(row["future"]),
                    rec_err=float(row["rec_err"]),
                    rec_count=int(row["rec_count"]),
                    pred_errs=np.array([float(v) for v in row["pred_errs"].split(";")]),
                ))
            except ValueError as e:
                raise ParseError(path, str(e), line=line_no) from e
    return errors
