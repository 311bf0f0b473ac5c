"""Motion transformer ε_θ(X_t, t, u).

Stacked attention blocks, each wrapped in FiLM modulation driven by the
time-step embedding plus the projected conditioned embedding. Every block
also exposes its softmax attention (the global association) and a per-frame,
per-head positive scale σ read from its post-attention hidden state.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from dcmd.config import DenoiserConfig
from dcmd.errors import ShapeError

SIGMA_FLOOR = 1e-4
INIT_STD = 0.02


@dataclass
class DenoiserOutput:
    eps_pred: torch.Tensor  # (B, N, W)
    global_assoc: list[torch.Tensor]  # L x (B, h, N, N)
    sigmas: list[torch.Tensor]  # L x (B, N, h)


def time_embedding(t, dim: int) -> torch.Tensor:
    """Sinusoidal embedding, interleaved: [sin(t/ω_0), cos(t/ω_0), sin(t/ω_1), ...] with ω_i = 10000^(2i/dim)."""
    t = torch.as_tensor(t, dtype=torch.float64)
    i = torch.arange((dim + 1) // 2, dtype=torch.float64)
    angles = t[..., None] / (10000.0 ** (2.0 * i / dim))
    emb = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1).flatten(-2)
    return emb[..., :dim]


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, scale: float | None = None, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = scale if scale is not None else math.sqrt(2 * dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, N, _ = x.shape
        return x.view(B, N, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, N, D = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        assoc = torch.softmax(q @ k.transpose(-2, -1) / self.scale, dim=-1)  # (B, h, N, N)
        y = (self.dropout(assoc) @ v).transpose(1, 2).reshape(B, N, D)
        return self.out(y), assoc


class FiLM(nn.Module):
    """γ(c) ⊙ LayerNorm(x) + β(c), broadcast over frames."""

    def __init__(self, dim: int, cond_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.gamma = nn.Linear(cond_dim, dim)
        self.beta = nn.Linear(cond_dim, dim)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.gamma(cond)[:, None] * self.norm(x) + self.beta(cond)[:, None]


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, dropout: float = 0.0):
        super().__init__(
            nn.Linear(dim, 4 * dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(4 * dim, dim),
        )


class MotionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, scale: float | None = None, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, scale, dropout)
        self.film_attn = FiLM(dim, dim)
        self.ffn = FeedForward(dim, dropout)
        self.film_ffn = FiLM(dim, dim)
        self.sigma_head = nn.Linear(dim, heads, bias=False)

    def forward(self, x: torch.Tensor, cond: torch.Tensor):
        """``cond`` is TE(t) + projected u, (B, D). Returns (Y, G, σ)."""
        a, assoc = self.attn(x)
        z = self.film_attn(a + cond[:, None], cond) + x
        y = self.film_ffn(self.ffn(z) + cond[:, None], cond) + z
        sigma = F.softplus(self.sigma_head(z)) + SIGMA_FLOOR
        return y, assoc, sigma


class MotionTransformer(nn.Module):
    """L motion blocks with U-Net style long skips.

    The output of block ℓ (ℓ <= L/2) is concatenated to the input of block
    L+1-ℓ and mapped back to width D.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        if cfg.seq_len is None or cfg.in_dim is None or cfg.cond_dim is None:
            raise ValueError("DenoiserConfig must be resolved (seq_len, in_dim, cond_dim set)")
        self.cfg = cfg
        D = cfg.hidden
        self.in_proj = nn.Linear(cfg.in_dim, D)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.seq_len, D))
        self.cond_proj = nn.Linear(cfg.cond_dim, D)
        self.blocks = nn.ModuleList(
            MotionBlock(D, cfg.heads, cfg.attention_scale, cfg.dropout) for _ in range(cfg.layers)
        )
        n_skips = cfg.layers // 2 if cfg.skip_connections else 0
        self.skip_proj = nn.ModuleList(nn.Linear(2 * D, D) for _ in range(n_skips))
        self.out_proj = nn.Linear(D, cfg.in_dim)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.trunc_normal_(module.weight, std=INIT_STD)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, FiLM):
                # Identity-like modulation at start.
                nn.init.ones_(module.gamma.bias)
        nn.init.trunc_normal_(self.pos_embed, std=INIT_STD)

    def condition(self, t, u: torch.Tensor) -> torch.Tensor:
        """TE(t) + W_u·u, (B, D)."""
        te = time_embedding(t, self.cfg.hidden).to(dtype=u.dtype, device=u.device)
        if te.ndim == 1:
            te = te.expand(u.shape[0], -1)
        return te + self.cond_proj(u)

    def forward(self, xt: torch.Tensor, t, u: torch.Tensor) -> DenoiserOutput:
        cfg = self.cfg
        if xt.ndim != 3 or xt.shape[1:] != (cfg.seq_len, cfg.in_dim):
            raise ShapeError(f"denoiser expects (B, {cfg.seq_len}, {cfg.in_dim}), got {tuple(xt.shape)}")
        if u.shape != (xt.shape[0], cfg.cond_dim):
            raise ShapeError(f"conditioned embedding must be (B, {cfg.cond_dim}), got {tuple(u.shape)}")

        cond = self.condition(t, u)
        h = self.in_proj(xt) + self.pos_embed
        L = len(self.blocks)
        skips, assocs, sigmas = [], [], []
        for index, block in enumerate(self.blocks, start=1):
            partner = L + 1 - index
            if partner < index and partner <= len(self.skip_proj):
                h = self.skip_proj[partner - 1](torch.cat([h, skips[partner - 1]], dim=-1))
            h, assoc, sigma = block(h, cond)
            skips.append(h)
            assocs.append(assoc)
            sigmas.append(sigma)
        return DenoiserOutput(eps_pred=self.out_proj(h), global_assoc=assocs, sigmas=sigmas)
