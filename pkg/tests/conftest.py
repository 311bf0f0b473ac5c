import numpy as np
import pytest
import torch

from data.poses import windows_from_tracks
from data.synth import SynthConfig, synth_generate
from dcmd.config import RunConfig, merge_documents
from dcmd.network import build_model

TINY = {
    "window": {"history": 3, "future": 4, "joints": 3},
    "denoiser": {"layers": 2, "heads": 2, "hidden": 8},
    "autoencoder": {"hidden_channels": [4, 3], "embedding_dim": 5, "edges": [[0, 1], [1, 2]]},
    "train": {"batch_size": 4, "epochs": 2, "lr": 1e-3, "T": 10},
    "scoring": {"n_samples": 3, "batch_size": 8},
}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def make_config():
    """Tiny 3-joint run config; keyword sections are merged over it."""

    def make(**sections) -> RunConfig:
        return RunConfig.from_dict(merge_documents(TINY, sections)).resolved()

    return make


@pytest.fixture
def tiny_model(make_config):
    return build_model(make_config()).double()


@pytest.fixture
def tiny_batch():
    g = torch.Generator().manual_seed(1)
    return 0.3 * torch.randn(5, 7, 3, 2, generator=g, dtype=torch.float64)


@pytest.fixture
def synth_windows():
    """Normalized 17-joint windows from two short normal clips."""
    tracks, _ = synth_generate(SynthConfig(n_clips=2, n_actors=2, clip_len=30), seed=3)
    return windows_from_tracks(tracks, 3, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
