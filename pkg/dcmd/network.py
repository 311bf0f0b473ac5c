"""The dual-branch model: graph autoencoder (reconstruction) plus motion transformer (prediction)."""

import torch
from torch import nn

from dcmd.config import RunConfig
from dcmd.denoiser import MotionTransformer
from dcmd.diffusion import NoiseSchedule, build_schedule
from dcmd.errors import ShapeError
from dcmd.reconstruction import MotionAutoencoder
from dcmd.seeding import derive_seed
from dcmd.spectrum import dct, idct


def schedule_for(cfg: RunConfig) -> NoiseSchedule:
    t = cfg.train
    return build_schedule(t.steps, t.beta1, t.beta_t, kind=t.schedule, variance=t.variance)


class DCMD(nn.Module):
    """Windows are (B, H+F, J, C); model-side matrices are (B, H+F, J*C)."""

    def __init__(self, cfg: RunConfig, schedule: NoiseSchedule | None = None):
        super().__init__()
        self.cfg = cfg
        self.schedule = schedule if schedule is not None else schedule_for(cfg)
        self.autoencoder = MotionAutoencoder(cfg.autoencoder)
        self.denoiser = MotionTransformer(cfg.denoiser)

    @property
    def history(self) -> int:
        return self.cfg.window.history

    @property
    def future(self) -> int:
        return self.cfg.window.future

    def check_windows(self, x: torch.Tensor) -> None:
        w = self.cfg.window
        expected = (w.length, w.joints, w.coords)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(
                f"windows must be (B, {', '.join(map(str, expected))}) for this model, got {tuple(x.shape)}"
            )

    def to_matrix(self, x: torch.Tensor) -> torch.Tensor:
        return x.flatten(2)

    def from_matrix(self, m: torch.Tensor) -> torch.Tensor:
        w = self.cfg.window
        return m.reshape(*m.shape[:2], w.joints, w.coords)

    def to_spectrum(self, m: torch.Tensor) -> torch.Tensor:
        return dct(m) if self.cfg.train.use_dct else m

    def from_spectrum(self, s: torch.Tensor) -> torch.Tensor:
        return idct(s) if self.cfg.train.use_dct else s

    def condition(self, u: torch.Tensor) -> torch.Tensor:
        """The denoiser's conditioned embedding; zeros when that conditioning is switched off."""
        return u if self.cfg.train.use_conditioned_embedding else torch.zeros_like(u)

    def sigma_parameters(self) -> list[nn.Parameter]:
        return [block.sigma_head.weight for block in self.denoiser.blocks]


def build_model(cfg: RunConfig, seed: int | None = None) -> DCMD:
    """Fresh model with initialisation drawn from the ``init`` stream; global RNG state is untouched."""
    cfg = cfg.resolved()
    seed = cfg.train.seed if seed is None else seed
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "init"))
        model = DCMD(cfg)
    return model.to(cfg.train.device)
