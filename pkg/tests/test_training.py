import math

import numpy as np
import pytest
import torch

from acsseg.data import build_manifest, fold_iterator, write_synthetic_dataset
from acsseg.data.io import Sample
from acsseg.data.synthetic import synthetic_pair
from acsseg.errors import ConfigError, NumericError
from acsseg.model import ModelConfig, load_checkpoint
from acsseg.training import (TrainConfig, batches, evaluate, fit, init_state, load_samples,
                             make_optimizer, num_batches, resume, seg_loss, train_step)


def one_image(seed=0, size=64):
    rgb, mask = synthetic_pair((size, size), [1], np.random.default_rng(seed))
    x = torch.from_numpy(rgb.transpose(2, 0, 1).astype(np.float32) / 255)[None]
    return x, torch.from_numpy(mask.astype(np.int64))[None]


# --- loss -------------------------------------------------------------------

def test_saturated_logits_give_near_zero_loss():
    target = torch.randint(0, 3, (2, 8, 8))
    logits = 50.0 * torch.nn.functional.one_hot(target, 3).permute(0, 3, 1, 2).float()
    assert float(seg_loss(logits, target).total) < 1e-3


def test_uniform_logits_ce_is_ln2():
    target = torch.zeros(1, 4, 4, dtype=torch.long)
    target[:, :2] = 1
    terms = seg_loss(torch.zeros(1, 2, 4, 4, dtype=torch.float64), target)
    assert float(terms.ce) == pytest.approx(math.log(2), abs=1e-15)
    assert float(terms.dice) == pytest.approx(0.5, abs=1e-6)


def test_loss_weights_decompose():
    torch.manual_seed(3)
    logits = torch.randn(2, 3, 8, 8, dtype=torch.float64)
    target = torch.randint(0, 3, (2, 8, 8))
    t = seg_loss(logits, target, ce_weight=0.3, dice_weight=1.7)
    assert abs(float(t.total) - (0.3 * float(t.ce) + 1.7 * float(t.dice))) <= 1e-12
    assert float(t.total) >= 0


def test_loss_gradient_matches_finite_differences():
    torch.manual_seed(4)
    logits = torch.randn(2, 3, 5, 5, dtype=torch.float64, requires_grad=True)
    target = torch.randint(0, 3, (2, 5, 5))
    assert torch.autograd.gradcheck(lambda z: seg_loss(z, target).total, (logits,), eps=1e-6,
                                    atol=1e-8, rtol=1e-3)


def test_loss_rejects_bad_targets():
    with pytest.raises(ValueError):
        seg_loss(torch.zeros(1, 2, 4, 4), torch.full((1, 4, 4), 2))
    with pytest.raises(ValueError):
        seg_loss(torch.zeros(1, 2, 4, 4), torch.zeros(1, 4, 5, dtype=torch.long))


# --- optimiser / step -------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ConfigError) as exc:
        TrainConfig(epochs=-1, batch_size=0, precision="float16")
    assert len(exc.value.problems) == 3


def test_adamw_cosine_converges_on_quadratic():
    torch.manual_seed(0)
    model = torch.nn.Linear(4, 1, bias=False)
    opt, sched = make_optimizer(model, TrainConfig(learning_rate=0.1, weight_decay=0.0), 300)
    for _ in range(300):
        opt.zero_grad()
        loss = ((model.weight - 2.0) ** 2).sum()
        loss.backward()
        opt.step()
        sched.step()
    assert torch.allclose(model.weight, torch.full((1, 4), 2.0), atol=1e-2)
    assert opt.param_groups[0]["lr"] == pytest.approx(0.0, abs=1e-12)


def test_zero_learning_rate_leaves_params(tiny):
    cfg = TrainConfig(learning_rate=0.0)
    state = init_state(tiny, cfg, 10)
    before = {k: v.clone() for k, v in state.model.state_dict().items() if "running" not in k
              and "num_batches" not in k}
    x, y = one_image()
    train_step(state, x, y, cfg)
    assert state.step == 1
    after = state.model.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_clip_zero_disables_clipping(tiny):
    x, y = one_image()
    outs = []
    for clip in (0.0, 1e6):
        cfg = TrainConfig(grad_clip_norm=clip, learning_rate=1e-3)
        state = init_state(tiny, cfg, 10)
        train_step(state, x, y, cfg)
        outs.append(torch.cat([p.detach().flatten() for p in state.model.parameters()]))
    assert torch.equal(outs[0], outs[1])


def test_overfit_loss_drops_tenfold(tiny):
    cfg = TrainConfig(learning_rate=3e-3, weight_decay=0.0, grad_clip_norm=0.0)
    state = init_state(tiny, cfg, 200)
    x, y = one_image()
    losses = [float(train_step(state, x, y, cfg).total) for _ in range(200)]
    assert losses[-1] <= losses[0] / 10


def test_nonfinite_loss_aborts(tiny):
    cfg = TrainConfig()
    state = init_state(tiny, cfg, 10)
    with torch.no_grad():
        state.model.head.weight.fill_(float("inf"))
    x, y = one_image()
    with pytest.raises(NumericError, match="logits"):
        train_step(state, x, y, cfg)


@pytest.mark.parametrize("n, bs, sizes", [(5, 2, [2, 3]), (4, 2, [2, 2]), (1, 4, [1]), (7, 3, [3, 4])])
def test_trailing_singleton_batch_is_merged(n, bs, sizes):
    x, y = one_image(size=32)
    samples = [Sample(x[0].numpy(), y[0].numpy())] * n
    got = [imgs.shape[0] for imgs, _ in batches(samples, bs, torch.float32, merge_singleton=True)]
    assert got == sizes and num_batches(n, bs, merge_singleton=True) == len(sizes)


# --- fit --------------------------------------------------------------------

@pytest.fixture
def five_manifest(tmp_path):
    root = write_synthetic_dataset(tmp_path / "five", 5, size=(32, 32), seed=9)
    return build_manifest(root, seed=1, target_size=(32, 32))


def test_epochs_zero_is_eval_only(five_manifest, tmp_path, tiny):
    res = fit(five_manifest, 0, tiny, TrainConfig(epochs=0), tmp_path / "run")
    assert len(res.reports) == 1 and res.losses == []
    assert res.best_checkpoint.exists() and res.last_checkpoint.exists()


def test_fit_is_deterministic_in_float64(five_manifest, tmp_path, tiny):
    cfg = TrainConfig(epochs=2, batch_size=2, learning_rate=1e-3, precision="float64", seed=4)
    a = fit(five_manifest, 1, tiny, cfg, tmp_path / "a")
    b = fit(five_manifest, 1, tiny, cfg, tmp_path / "b")
    assert a.losses == b.losses
    assert a.reports[-1].to_text() == b.reports[-1].to_text()
    assert (tmp_path / "a" / "train.log").read_text().count('"event": "step"') == 2


def test_fit_rejects_class_mismatch(five_manifest, tmp_path):
    with pytest.raises(ConfigError):
        fit(five_manifest, 0, ModelConfig.from_scale("tiny", num_classes=3), TrainConfig(epochs=0),
            tmp_path / "r")


def test_checkpoint_reproduces_metrics(five_manifest, tmp_path, tiny):
    cfg = TrainConfig(epochs=1, batch_size=2)
    res = fit(five_manifest, 2, tiny, cfg, tmp_path / "r")
    model, meta, _ = load_checkpoint(res.last_checkpoint)
    val = load_samples(five_manifest, fold_iterator(five_manifest, 2, "val"))
    again = evaluate(model, val, five_manifest.class_names, cfg.batch_size)
    fresh = evaluate(res.state.model, val, five_manifest.class_names, cfg.batch_size)
    assert again.to_text() == fresh.to_text()
    assert meta["step"] == res.state.step and meta["class_names"] == five_manifest.class_names


def test_resume_restores_optimizer(five_manifest, tmp_path, tiny):
    cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=1e-3)
    res = fit(five_manifest, 0, tiny, cfg, tmp_path / "r")
    state = resume(res.last_checkpoint, cfg, 10)
    assert state.step == res.state.step
    orig = res.state.optimizer.state_dict()["state"]
    back = state.optimizer.state_dict()["state"]
    assert orig.keys() == back.keys()
    for k in orig:
        assert torch.equal(orig[k]["exp_avg"], back[k]["exp_avg"])
