import numpy as np
import pytest

from meanflow_lab.data import make_dataset, sample_training_batch
from meanflow_lab.network import VelocityModel, init_model
from meanflow_lab.sampling import TimePairConfig
from meanflow_lab.trainer import (
    OptimizerState,
    TrainConfig,
    TrainingDiverged,
    adamw_update,
    lr_at_step,
    train,
    train_step,
    write_loss_csv,
)

from conftest import perturbed

TINY = VelocityModel(hidden_dims=(16,), time_embed_dim=4, cond_embed_dim=2, num_conditions=1)


def test_schedule_points():
    cfg = TrainConfig()
    assert lr_at_step(cfg, 0) == 0.0
    assert lr_at_step(cfg, 250) == pytest.approx(5e-4)
    assert lr_at_step(cfg, 500) == 1e-3
    assert lr_at_step(cfg, 12_499) == 1e-3
    assert lr_at_step(cfg, 15_000) == 1e-4
    assert lr_at_step(cfg, 19_999) == 1e-5
    with pytest.raises(ValueError):
        lr_at_step(cfg, 20_000)


def test_scaled_schedule_keeps_shape():
    cfg = TrainConfig.scaled(20_000)
    assert cfg.warmup_steps == 500
    assert cfg.decay_milestones == ((12_500, 1e-4), (17_500, 1e-5))


def _step(p, g, lr, wd, state=None):
    cfg = TrainConfig(weight_decay=wd)
    state = state or OptimizerState.zeros_like([p])
    (p,), state = adamw_update([p], [g], state, lr, cfg)
    return p, state


def test_adamw_zero_gradient_no_decay():
    p, _ = _step(np.array([1.0, -2.0]), np.zeros(2), 0.1, 0.0)
    assert p.tolist() == [1.0, -2.0]


def test_adamw_first_step():
    p, _ = _step(np.array([1.0]), np.array([1.0]), 0.1, 0.0)
    assert p[0] == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_adamw_decoupled_decay():
    p, _ = _step(np.array([2.0]), np.array([0.0]), 0.1, 0.1)
    assert p[0] == pytest.approx(2.0 * (1 - 0.01), abs=1e-15)


def test_adamw_matches_reference_loop():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(3, 4))
    cfg = TrainConfig(weight_decay=1e-2)
    state = OptimizerState.zeros_like([p])
    ref, m, v = p.copy(), np.zeros_like(p), np.zeros_like(p)
    cur = p
    for k in range(1, 6):
        g = rng.normal(size=p.shape)
        (cur,), state = adamw_update([cur], [g], state, 0.01, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.95 * v + 0.05 * g * g
        mh, vh = m / (1 - 0.9 ** k), v / (1 - 0.95 ** k)
        ref = ref - 0.01 * (mh / (np.sqrt(vh) + 1e-8) + 1e-2 * ref)
    np.testing.assert_allclose(cur, ref, rtol=1e-13, atol=1e-15)


def test_adamw_errors():
    with pytest.raises(ValueError):
        _step(np.zeros(2), np.zeros(3), 0.1, 0.0)
    with pytest.raises(FloatingPointError):
        _step(np.zeros(2), np.array([np.nan, 0.0]), 0.1, 0.0)


def test_zero_steps_leaves_model_unchanged():
    m = init_model(TINY, seed=0)
    res = train(m, make_dataset("delta"), TrainConfig(steps=0, warmup_steps=0))
    assert res.trace == []
    assert all(np.array_equal(m.params[k], res.model.params[k]) for k in m.params)


def test_training_is_deterministic():
    cfg = TrainConfig.scaled(40, batch_size=16)
    ds = make_dataset("gaussian_mixture")
    model = init_model(VelocityModel(hidden_dims=(16,), time_embed_dim=4, cond_embed_dim=2), seed=1)
    a, b = train(model, ds, cfg), train(model, ds, cfg)
    assert a.trace == b.trace
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)


def test_fm_and_meanflow_steps_agree_when_r_equals_t():
    model = perturbed(init_model(TINY, seed=0))
    rng = np.random.default_rng(0)
    batch = sample_training_batch(make_dataset("delta"), 32, 0.1, TimePairConfig(neq_ratio=0.0), rng)
    params = model.param_list()
    out = []
    for objective in ("fm", "meanflow"):
        cfg = TrainConfig(objective=objective)
        out.append(train_step(model, batch, cfg, params, OptimizerState.zeros_like(params), 1e-3))
    assert out[0][0] == out[1][0]
    assert all(np.array_equal(p, q) for p, q in zip(out[0][1], out[1][1]))


def test_delta_loss_eventually_decreases():
    cfg = TrainConfig.scaled(2000, batch_size=64)
    model = init_model(VelocityModel(hidden_dims=(32, 32), num_conditions=1), seed=0)
    res = train(model, make_dataset("delta"), cfg)
    losses = res.losses
    assert losses[-1000:].mean() < losses[:1000].mean()


def test_divergence_is_reported():
    cfg = TrainConfig.scaled(50, batch_size=8)
    model = init_model(TINY, seed=0)
    with pytest.raises(TrainingDiverged) as info:
        train(model, make_dataset("delta", {"points": [[1e200, 1e200]]}), cfg)
    assert info.value.step == 0 and "step 0" in str(info.value)


def test_checkpoints_and_loss_csv(tmp_path):
    cfg = TrainConfig.scaled(6, batch_size=4, checkpoint_every=3)
    res = train(init_model(TINY, seed=0), make_dataset("delta"), cfg, out_dir=tmp_path)
    assert (tmp_path / "model_step3.json").exists() and (tmp_path / "model_step6.bin").exists()
    write_loss_csv(res.trace, tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr" and len(lines) == 7


@pytest.mark.parametrize("kw", [{"objective": "ddpm"}, {"steps": 10, "warmup_steps": 10},
                                {"decay_milestones": ((5, 1e-4), (3, 1e-5))}, {"drop_prob": 2.0}])
def test_bad_train_config(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)
