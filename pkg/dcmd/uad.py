"""Association discrepancy between the Gaussian time prior and the learned attention.

Shapes: associations are (L, B, h, N, N) stacks (layers, batch, heads,
frames, frames); per-frame discrepancies are (B, N).
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from dcmd.denoiser import DenoiserOutput

LOG_FLOOR = 1e-12


def time_association(sigma: torch.Tensor) -> torch.Tensor:
    """Row-normalized Gaussian kernel over frame distance.

    ``sigma`` is (B, N, h); row i of head m uses σ[:, i, m]. Returns (B, h, N, N).
    """
    n = sigma.shape[-2]
    pos = torch.arange(n, device=sigma.device, dtype=sigma.dtype)
    dist2 = (pos[None, :] - pos[:, None]) ** 2  # (N, N)
    s = sigma.transpose(-1, -2)[..., None]  # (B, h, N, 1)
    kernel = torch.exp(-dist2 / (2 * s**2)) / (math.sqrt(2 * math.pi) * s)
    return kernel / kernel.sum(dim=-1, keepdim=True)


@dataclass
class AssociationPair:
    time: torch.Tensor  # (L, B, h, N, N)
    global_: torch.Tensor  # (L, B, h, N, N)

    @classmethod
    def from_output(cls, out: DenoiserOutput) -> "AssociationPair":
        return cls(
            time=torch.stack([time_association(s) for s in out.sigmas]),
            global_=torch.stack(out.global_assoc),
        )

    def detached(self, time: bool = False, global_: bool = False) -> "AssociationPair":
        return AssociationPair(
            time=self.time.detach() if time else self.time,
            global_=self.global_.detach() if global_ else self.global_,
        )


def _kl_rows(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    return (p * (p.clamp_min(LOG_FLOOR).log() - q.clamp_min(LOG_FLOOR).log())).sum(dim=-1)


def uad_score(pair: AssociationPair) -> torch.Tensor:
    """Per-frame symmetric KL between the two associations, head- then layer-averaged, (B, N)."""
    sym = _kl_rows(pair.time, pair.global_) + _kl_rows(pair.global_, pair.time)  # (L, B, h, N)
    return sym.mean(dim=2).mean(dim=0)


def uad_norm(pair: AssociationPair) -> torch.Tensor:
    """‖UAD‖₁ averaged over frames and batch."""
    return uad_score(pair).mean()


def total_loss(rec: torch.Tensor, pred: torch.Tensor, pair: AssociationPair, lam: float) -> torch.Tensor:
    return rec + pred - lam * uad_norm(pair)


def minimax_losses(rec: torch.Tensor, pred: torch.Tensor, pair: AssociationPair, lam: float):
    """(loss_min, loss_max).

    loss_min pulls the time prior toward a frozen global association;
    loss_max pushes the global association away from a frozen time prior.
    """
    loss_min = rec + pred + lam * uad_norm(pair.detached(global_=True))
    loss_max = rec + pred - lam * uad_norm(pair.detached(time=True))
    return loss_min, loss_max


def pred_loss(eps: torch.Tensor, eps_pred: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Smooth-L1 on the noise residual, mean over elements and batch."""
    return F.smooth_l1_loss(eps_pred, eps, beta=beta)


def pred_errors(target: torch.Tensor, pred: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Smooth-L1 per sample (mean over all but the leading dim), (B,)."""
    return F.smooth_l1_loss(pred, target, beta=beta, reduction="none").flatten(1).mean(dim=1)
