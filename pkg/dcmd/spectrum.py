"""Orthonormal DCT-II / DCT-III along the time axis of motion matrices.

Tensors are ``(..., N, W)``: N frames by W joint coordinates. Every column is
transformed independently and all N coefficients are kept.
"""

import math
from functools import lru_cache

import numpy as np
import torch


@lru_cache(maxsize=32)
def _dct_basis(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    basis = np.sqrt(2.0 / n) * np.cos(math.pi * (i + 0.5) * k / n)
    basis[0] /= math.sqrt(2.0)
    return basis


def dct_matrix(n: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """(n, n) orthonormal DCT-II matrix; its transpose is the inverse."""
    if n < 1:
        raise ValueError("DCT needs at least one frame")
    return torch.as_tensor(_dct_basis(n), dtype=dtype, device=device)


def dct(x: torch.Tensor) -> torch.Tensor:
    """Spectrum of ``x`` along dim -2."""
    basis = dct_matrix(x.shape[-2], dtype=x.dtype, device=x.device)
    return basis @ x


def idct(s: torch.Tensor) -> torch.Tensor:
    """Exact inverse of ``dct``."""
    basis = dct_matrix(s.shape[-2], dtype=s.dtype, device=s.device)
    return basis.transpose(0, 1) @ s
