import csv

import numpy as np
import pytest
import torch

from dcmd.checkpoint import dumps, loads
from dcmd.config import TrainConfig
from dcmd.errors import DataError, NumericError, ShapeError
from dcmd.network import build_model
from dcmd.seeding import generator
from dcmd.training import LOG_COLUMNS, compute_losses, load_trained, lr_at, make_optimizer, train, train_step


def windows(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return 0.3 * rng.standard_normal((n, 7, 3, 2))


def model_and_optimizer(cfg):
    model = build_model(cfg).double()
    return model, make_optimizer(model, cfg.train)


def test_lr_decay_steps():
    cfg = TrainConfig()
    assert lr_at(cfg, 0) == 1e-4
    assert lr_at(cfg, 35) == 1e-4
    for k in range(4):
        assert lr_at(cfg, 36 * k) == 1e-4 * 0.5 ** k
    assert lr_at(TrainConfig(lr_decay_factor=1.0), 500) == 1e-4


def test_zero_lambda_minimax_matches_plain_update(make_config, tiny_batch):
    params = []
    for minimax in (True, False):
        cfg = make_config(train={"lambda": 0.0, "minimax": minimax})
        model, opt = model_and_optimizer(cfg)
        train_step(model, opt, tiny_batch, generator(0, "step"))
        params.append(torch.cat([p.detach().flatten() for p in model.parameters()]))
    torch.testing.assert_close(params[0], params[1], atol=1e-10, rtol=0)


def test_max_phase_leaves_sigma_heads_untouched(make_config, tiny_batch):
    model, opt = model_and_optimizer(make_config())
    before = [p.detach().clone() for p in model.sigma_parameters()]
    others = model.denoiser.blocks[0].attn.q.weight.detach().clone()
    train_step(model, opt, tiny_batch, generator(0, "step"), phases=("max",))
    for old, new in zip(before, model.sigma_parameters()):
        assert torch.equal(old, new)
    assert not torch.equal(others, model.denoiser.blocks[0].attn.q.weight)


def test_min_phase_moves_sigma_heads(make_config, tiny_batch):
    model, opt = model_and_optimizer(make_config())
    before = [p.detach().clone() for p in model.sigma_parameters()]
    train_step(model, opt, tiny_batch, generator(0, "step"), phases=("min",))
    assert all(not torch.equal(old, new) for old, new in zip(before, model.sigma_parameters()))


def test_encoder_only_sees_history(tiny_model, tiny_batch):
    seen = []
    tiny_model.autoencoder.register_forward_pre_hook(lambda module, args: seen.append(args[0]))
    compute_losses(tiny_model, tiny_batch, generator(0, "x"))
    assert torch.equal(seen[0], tiny_batch[:, :3])


def test_future_frames_do_not_change_reconstruction(tiny_model, tiny_batch):
    other = tiny_batch.clone()
    other[:, 3:] += 5.0
    a = compute_losses(tiny_model, tiny_batch, generator(0, "x"))
    b = compute_losses(tiny_model, other, generator(0, "x"))
    assert a.rec.item() == b.rec.item()
    assert a.pred.item() != b.pred.item()


def test_non_finite_loss_names_the_term(tiny_model, tiny_batch):
    bad = tiny_batch.clone()
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericError, match="rec"):
        train_step(tiny_model, make_optimizer(tiny_model, tiny_model.cfg.train), bad, generator(0, "x"))


def test_train_is_deterministic(make_config):
    cfg = make_config()
    a = train(windows(), cfg, dtype=torch.float64)
    b = train(windows(), cfg, dtype=torch.float64)
    assert dumps(a) == dumps(b)
    assert a.epoch == 2 and len(a.history) == 2


def test_train_writes_log(make_config, tmp_path):
    rows = []
    train(windows(), make_config(), log_path=tmp_path / "log.csv", on_epoch=rows.append, dtype=torch.float64)
    with (tmp_path / "log.csv").open() as f:
        logged = list(csv.DictReader(f))
    assert tuple(logged[0]) == LOG_COLUMNS
    assert [int(r["epoch"]) for r in logged] == [1, 2]
    assert [r["epoch"] for r in rows] == [1, 2]
    assert float(logged[0]["lr"]) == pytest.approx(1e-3)


def test_resume_matches_uninterrupted_run(make_config, tmp_path):
    full = train(windows(), make_config(), dtype=torch.float64)
    first = train(windows(), make_config(train={"epochs": 1}), dtype=torch.float64)
    resumed = train(windows(), make_config(), resume=loads(dumps(first)), dtype=torch.float64)
    assert resumed.epoch == 2
    for name, value in full.model_state.items():
        assert torch.equal(value, resumed.model_state[name]), name
    assert resumed.history == full.history


def test_train_rejects_empty_and_mismatched_data(make_config):
    with pytest.raises(DataError):
        train([], make_config())
    with pytest.raises(ShapeError):
        train(np.zeros((4, 6, 3, 2)), make_config())


def test_load_trained_reproduces_model(make_config, tiny_batch):
    ckpt = loads(dumps(train(windows(), make_config(), dtype=torch.float64)))
    model = load_trained(ckpt)
    assert not model.training
    assert next(model.parameters()).dtype == torch.float64
    torch.testing.assert_close(model.schedule.beta, ckpt.schedule().beta)
    a = compute_losses(model, tiny_batch, generator(0, "x"))
    b = compute_losses(load_trained(ckpt), tiny_batch, generator(0, "x"))
    assert a.total.item() == b.total.item()


def test_overfits_one_window(make_config, synth_windows):
    cfg = make_config(window={"joints": 17}, train={"lr": 1e-3})
    model, opt = model_and_optimizer(cfg)
    batch = torch.as_tensor(3.0 * synth_windows[0].joints[None], dtype=torch.float64)
    g = generator(0, "overfit")
    totals = [train_step(model, opt, batch, g).total.item() for _ in range(500)]
    early, late = np.mean(totals[10:20]), np.mean(totals[-10:])
    assert late <= 0.1 * early
