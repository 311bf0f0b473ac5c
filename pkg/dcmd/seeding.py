"""Named random streams derived from a single root seed."""

import hashlib

import torch


def derive_seed(root: int, *names) -> int:
    """Stable 63-bit seed for the stream ``names`` under ``root``."""
    key = ":".join([str(int(root)), *(str(n) for n in names)])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def generator(root: int, *names) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed(root, *names))
