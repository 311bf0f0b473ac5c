"""Space-time separable graph autoencoder for the history motion.

The encoder produces the conditioned embedding u fed to the denoiser; the
decoder reconstructs the history from u. Blocks apply a per-frame graph
convolution over the skeleton, then a per-joint temporal convolution. The
shrink/expand runs over channels only: three history frames leave no room
for temporal pooling.
"""

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from dcmd.config import AutoencoderConfig
from dcmd.errors import ShapeError


def normalized_adjacency(edges, n_joints: int) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for an undirected skeleton graph."""
    adj = np.eye(n_joints)
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1.0
    d = 1.0 / np.sqrt(adj.sum(axis=1))
    return adj * d[:, None] * d[None, :]


class GraphTemporalBlock(nn.Module):
    """(B, C_in, T, V) -> (B, C_out, T, V)."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3):
        super().__init__()
        self.gcn = nn.Conv2d(in_channels, out_channels, 1)
        self.tcn = nn.Conv2d(out_channels, out_channels, (kernel, 1), padding=(kernel // 2, 0))
        self.residual = nn.Identity() if in_channels == out_channels else nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        y = torch.einsum("nctv,vw->nctw", self.gcn(x), adj)
        y = self.tcn(F.gelu(y))
        return F.gelu(y + self.residual(x))


class MotionAutoencoder(nn.Module):
    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        if cfg.joints is None or cfg.coords is None or cfg.history is None:
            raise ValueError("AutoencoderConfig must be resolved (joints, coords, history set)")
        self.cfg = cfg
        hidden = list(cfg.hidden_channels)
        k = cfg.temporal_kernel
        self.register_buffer(
            "adj",
            torch.as_tensor(normalized_adjacency(cfg.edges or (), cfg.joints), dtype=torch.float32),
        )

        chans = [cfg.coords] + hidden
        self.encoder = nn.ModuleList(GraphTemporalBlock(a, b, k) for a, b in zip(chans, chans[1:]))
        self.to_embedding = nn.Linear(hidden[-1], cfg.embedding_dim)

        back = hidden[::-1]
        self.from_embedding = nn.Linear(cfg.embedding_dim, back[0] * cfg.history * cfg.joints)
        chans = [back[0]] + back
        self.decoder = nn.ModuleList(GraphTemporalBlock(a, b, k) for a, b in zip(chans, chans[1:]))
        self.to_coords = nn.Conv2d(back[-1], cfg.coords, 1)

    def _check(self, x: torch.Tensor) -> None:
        cfg = self.cfg
        expected = (cfg.history, cfg.joints, cfg.coords)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"history must be (B, {', '.join(map(str, expected))}), got {tuple(x.shape)}")

    def encode(self, x_hist: torch.Tensor) -> torch.Tensor:
        """(B, H, J, C) -> (B, embedding_dim)."""
        self._check(x_hist)
        adj = self.adj.to(x_hist.dtype)
        h = x_hist.permute(0, 3, 1, 2)
        for block in self.encoder:
            h = block(h, adj)
        return self.to_embedding(h.mean(dim=(2, 3)))

    def decode(self, u: torch.Tensor) -> torch.Tensor:
        """(B, embedding_dim) -> (B, H, J, C)."""
        cfg = self.cfg
        adj = self.adj.to(u.dtype)
        h = self.from_embedding(u).view(u.shape[0], -1, cfg.history, cfg.joints)
        for block in self.decoder:
            h = block(h, adj)
        return self.to_coords(h).permute(0, 2, 3, 1)

    def forward(self, x_hist: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        u = self.encode(x_hist)
        return self.decode(u), u


def window_sq_error(x_hat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Per-window sum of squared errors, (B,)."""
    if x_hat.shape != x.shape:
        raise ShapeError(f"reconstruction {tuple(x_hat.shape)} does not match target {tuple(x.shape)}")
    return (x_hat - x).pow(2).flatten(1).sum(dim=1)


def rec_loss(x_hat: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """‖x̂ − x‖²: summed within each window, averaged over the batch."""
    return window_sq_error(x_hat, x).mean()
