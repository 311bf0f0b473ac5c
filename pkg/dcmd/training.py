"""Joint training of the reconstruction and prediction branches.

Each iteration: encode/decode the history, take the window's spectrum, noise
it at a uniformly drawn step, predict the noise conditioned on the history
embedding, then update on the reconstruction, prediction and association
discrepancy terms. With minimax on, one forward pass feeds two backward
passes (½·loss_min then ½·loss_max) and a single optimizer step.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch
from braintrust import start_span

from data.poses import stack_windows
from dcmd.checkpoint import Checkpoint
from dcmd.config import RunConfig, TrainConfig
from dcmd.diffusion import q_sample, sample_timesteps
from dcmd.errors import CheckpointError, DataError, NumericError
from dcmd.network import DCMD, build_model
from dcmd.reconstruction import rec_loss
from dcmd.seeding import derive_seed
from dcmd.uad import AssociationPair, minimax_losses, pred_loss, uad_norm

LOG_COLUMNS = ("epoch", "loss_total", "loss_rec", "loss_pred", "uad_norm", "lr")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class Losses:
    total: torch.Tensor
    rec: torch.Tensor
    pred: torch.Tensor
    uad: torch.Tensor
    loss_min: torch.Tensor
    loss_max: torch.Tensor

    def check_finite(self) -> None:
        for name in ("rec", "pred", "uad", "total"):
            value = getattr(self, name)
            if not torch.isfinite(value).all():
                raise NumericError(f"non-finite {name} loss ({value.item()})")

    def as_floats(self) -> dict[str, float]:
        return {
            "loss_total": self.total.item(),
            "loss_rec": self.rec.item(),
            "loss_pred": self.pred.item(),
            "uad_norm": self.uad.item(),
        }


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 0-based ``epoch``: decayed by ``lr_decay_factor`` every ``lr_decay_every`` epochs."""
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def make_optimizer(model: DCMD, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def compute_losses(model: DCMD, batch: torch.Tensor, generator: torch.Generator) -> Losses:
    """All loss terms for one batch of windows (B, H+F, J, C)."""
    cfg = model.cfg.train
    model.check_windows(batch)
    hist = batch[:, : model.history]
    x_hat, u = model.autoencoder(hist)
    rec = rec_loss(x_hat, hist)

    x0 = model.to_spectrum(model.to_matrix(batch))
    t = sample_timesteps(len(batch), model.schedule.T, generator).to(batch.device)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype).to(batch.device)
    xt = q_sample(x0, t, eps, model.schedule)
    out = model.denoiser(xt, t, model.condition(u))
    pred = pred_loss(eps, out.eps_pred, beta=cfg.smooth_l1_beta)

    pair = AssociationPair.from_output(out)
    uad = uad_norm(pair)
    loss_min, loss_max = minimax_losses(rec, pred, pair, cfg.lam)
    return Losses(
        total=rec + pred - cfg.lam * uad,
        rec=rec,
        pred=pred,
        uad=uad,
        loss_min=loss_min,
        loss_max=loss_max,
    )


def train_step(
    model: DCMD,
    optimizer: torch.optim.Optimizer,
    batch: torch.Tensor,
    generator: torch.Generator,
    phases: tuple[str, ...] = ("min", "max"),
) -> Losses:
    """One optimizer step. ``phases`` picks the minimax halves to apply (ignored when minimax is off)."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    losses = compute_losses(model, batch, generator)
    losses.check_finite()
    if model.cfg.train.minimax:
        selected = [losses.loss_min if p == "min" else losses.loss_max for p in phases]
        weight = 1.0 / len(selected)
        for i, loss in enumerate(selected):
            (weight * loss).backward(retain_graph=i < len(selected) - 1)
    else:
        losses.total.backward()
    optimizer.step()
    return losses


def windows_tensor(windows, dtype=torch.float32) -> torch.Tensor:
    """(B, H+F, J, C) tensor from a list of windows or an array."""
    if isinstance(windows, list):
        windows = stack_windows(windows)
    return torch.as_tensor(windows, dtype=dtype)


def append_log_row(path: Path, row: dict) -> None:
    with path.open("a", newline="") as f:
        csv.DictWriter(f, fieldnames=LOG_COLUMNS).writerow({k: row[k] for k in LOG_COLUMNS})


def restore_state(model: DCMD, ckpt: Checkpoint) -> None:
    try:
        model.load_state_dict(ckpt.model_state)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint parameters do not fit the configured model: {e}") from e


def rng_state(generator: torch.Generator) -> dict:
    return {"train": generator.get_state(), "torch": torch.get_rng_state()}


def make_checkpoint(model: DCMD, optimizer, generator, epoch: int, history: list[dict]) -> Checkpoint:
    return Checkpoint(
        config=model.cfg.to_dict(),
        betas=model.schedule.betas(),
        variance=model.schedule.variance,
        epoch=epoch,
        model_state={k: v.detach().cpu() for k, v in model.state_dict().items()},
        optimizer_state=optimizer.state_dict(),
        rng_state=rng_state(generator),
        history=history,
    )


def train(
    windows,
    cfg: RunConfig,
    resume: Checkpoint | None = None,
    log_path=None,
    on_epoch: Callable[[dict], None] | None = None,
    dtype=torch.float32,
) -> Checkpoint:
    """Train from scratch (or continue ``resume``) up to ``cfg.train.epochs`` epochs.

    ``windows`` are normalized training windows (a list or a (B, H+F, J, C)
    array). Returns the final checkpoint; ``log_path`` receives one CSV row
    per epoch.
    """
    cfg = cfg.resolved()
    tc = cfg.train
    data = windows_tensor(windows, dtype)
    if len(data) == 0:
        raise DataError("no training windows")

    model = build_model(cfg).to(dtype)
    model.check_windows(data)
    data = data.to(tc.device)
    optimizer = make_optimizer(model, tc)
    generator = torch.Generator().manual_seed(derive_seed(tc.seed, "train"))

    if resume is not None:
        restore_state(model, resume)
        optimizer.load_state_dict(resume.optimizer_state)
        generator.set_state(resume.rng_state["train"])
        torch.set_rng_state(resume.rng_state["torch"])
        start_epoch, history = resume.epoch, list(resume.history)
    else:
        # Dropout draws from the global stream.
        torch.manual_seed(derive_seed(tc.seed, "dropout"))
        start_epoch, history = 0, []

    log_path = Path(log_path) if log_path is not None else None
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        if start_epoch == 0 or not log_path.exists():
            log_path.write_text(",".join(LOG_COLUMNS) + "\n")

    n = len(data)
    with start_span(name="train", type="task", input={"windows": n, "config": cfg.to_dict()}) as span:
        for epoch in range(start_epoch, tc.epochs):
            lr = lr_at(tc, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr

            totals = dict.fromkeys(("loss_total", "loss_rec", "loss_pred", "uad_norm"), 0.0)
            order = torch.randperm(n, generator=generator)
            for start in range(0, n, tc.batch_size):
                idx = order[start:start + tc.batch_size].to(data.device)
                losses = train_step(model, optimizer, data[idx], generator)
                for key, value in losses.as_floats().items():
                    totals[key] += value * len(idx)

            row = {"epoch": epoch + 1, **{k: v / n for k, v in totals.items()}, "lr": lr}
            if not all(math.isfinite(v) for v in row.values()):
                raise NumericError(f"non-finite epoch averages at epoch {epoch + 1}: {row}")
            history.append(row)
            if log_path is not None:
                append_log_row(log_path, row)
            with start_span(name=f"epoch_{epoch + 1}", type="task") as epoch_span:
                epoch_span.log(output=row)
            if on_epoch is not None:
                on_epoch(row)

        span.log(output={"epochs": len(history), "final": history[-1] if history else None})

    return make_checkpoint(model, optimizer, generator, max(start_epoch, tc.epochs), history)


def load_trained(ckpt: Checkpoint, device: str | None = None) -> DCMD:
    """Model restored from a checkpoint, in eval mode, using the stored β vector."""
    cfg = ckpt.run_config()
    model = DCMD(cfg, schedule=ckpt.schedule())
    dtype = next(iter(ckpt.model_state.values())).dtype
    model = model.to(dtype)
    restore_state(model, ckpt)
    model.to(device or cfg.train.device)
    model.eval()
    return model
