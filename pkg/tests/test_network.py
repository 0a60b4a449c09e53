import numpy as np
import pytest

from meanflow_lab import autodiff as ad
from meanflow_lab.network import (
    NULL,
    ModelConfigError,
    VelocityModel,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
)


def test_input_width_and_null_row():
    m = init_model(VelocityModel(), seed=0)
    assert m.params["W0"].shape == (2 + 2 * 32 + 16, 128)
    assert m.params["W_out"].shape == (128, 2)
    assert m.params["cond_embed"].shape == (5, 16)


def test_fresh_model_outputs_zero():
    m = init_model(VelocityModel(), seed=3)
    rng = np.random.default_rng(0)
    out = m(rng.normal(size=(7, 2)), rng.random(7), np.zeros(7), rng.integers(-1, 4, 7))
    assert np.array_equal(out.data, np.zeros((7, 2)))


def test_init_deterministic_and_seed_dependent():
    a, b, c = (init_model(VelocityModel(), seed=s) for s in (1, 1, 2))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_time_embedding_at_zero_alternates():
    emb = time_embedding(np.zeros((1, 1)), 8, 10.0).data
    np.testing.assert_allclose(emb, [[0, 1, 0, 1, 0, 1, 0, 1]], atol=1e-15)


def test_dt_zero_is_the_instantaneous_query(small_model):
    z = np.array([[0.3, -0.4]])
    a = forward(small_model, z, 0.6, 0.0, 1)
    b = small_model(z, np.array([0.6]), np.zeros((1, 1)), np.array([1]))
    assert np.array_equal(a.data, b.data)


def test_single_point_and_batch_agree(small_model):
    z = np.array([0.3, -0.4])
    single = small_model(z, 0.5, 0.25, 2)
    batch = small_model(z[None], 0.5, 0.25, np.array([2]))
    assert single.shape == (2,)
    assert np.array_equal(single.data, batch.data[0])


def test_condition_changes_output_and_null_is_shared(small_model):
    z = np.zeros((3, 2)) + 0.1
    out = small_model(z, 0.5, 0.1, np.array([0, 1, 2])).data
    assert not np.allclose(out[0], out[1])
    a = small_model(z, 0.5, 0.1, None).data
    b = small_model(z, 0.5, 0.1, np.full(3, NULL)).data
    assert np.array_equal(a, b)


def test_forward_jvp_matches_finite_differences(small_model):
    rng = np.random.default_rng(4)
    z, tz = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    t = rng.uniform(0.3, 0.7, size=(5, 1))
    dt = t * 0.5
    c = np.array([0, 1, 2, NULL, 0])
    tt, tdt = np.ones((5, 1)), np.ones((5, 1))

    def f(z, t, dt):
        return small_model(z, t, dt, c)

    _, tan = ad.jvp(f, [z, t, dt], [tz, tt, tdt])
    h = 1e-6
    fd = (f(z + h * tz, t + h, dt + h).data - f(z - h * tz, t - h, dt - h).data) / (2 * h)
    assert np.max(np.abs(tan.data - fd)) / np.max(np.abs(fd)) < 1e-4


def test_forward_is_reproducible(small_model):
    z = np.random.default_rng(0).normal(size=(4, 2))
    a = small_model(z, 0.4, 0.2, 1).data
    b = small_model(z, 0.4, 0.2, 1).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("t, dt", [(0.3, 0.5), (1.2, 0.0), (0.5, -0.1)])
def test_bad_times_rejected(small_model, t, dt):
    with pytest.raises(ValueError):
        small_model(np.zeros((1, 2)), t, dt, 0)


@pytest.mark.parametrize("c", [3, -2])
def test_condition_out_of_range(small_model, c):
    with pytest.raises(ValueError):
        small_model(np.zeros((1, 2)), 0.5, 0.0, c)


@pytest.mark.parametrize("kw", [{"time_embed_dim": 7}, {"hidden_dims": (0,)}, {"activation": "relu"},
                                {"data_dim": -1}])
def test_invalid_config(kw):
    with pytest.raises(ModelConfigError):
        init_model(VelocityModel(**kw))


def test_checkpoint_roundtrip(tmp_path, small_model):
    save_checkpoint(small_model, tmp_path / "m")
    loaded = load_checkpoint(tmp_path / "m")
    assert loaded.architecture() == small_model.architecture()
    assert all(np.array_equal(loaded.params[k], small_model.params[k]) for k in small_model.params)
    blob = (tmp_path / "m.bin").read_bytes()
    assert len(blob) == 8 * sum(p.size for p in small_model.params.values())
    assert blob[:8] == small_model.params["cond_embed"].ravel()[:1].astype("<f8").tobytes()


def test_checkpoint_truncated_blob(tmp_path, small_model):
    save_checkpoint(small_model, tmp_path / "m")
    p = tmp_path / "m.bin"
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ModelConfigError):
        load_checkpoint(tmp_path / "m")


def test_time_warp_fixes_endpoints_and_stretches_small_t():
    from meanflow_lab.network import warp_time

    s = warp_time(np.array([[0.0], [1e-3], [0.5], [1.0]]), 1e-3).data.ravel()
    assert s[0] == 0.0 and s[3] == pytest.approx(1.0, abs=1e-15)
    assert s[1] == pytest.approx(np.log(2) / np.log(1001), rel=1e-14)
    assert warp_time(np.array([[0.3]]), 0.0).data[0, 0] == 0.3


def test_time_warp_jvp_matches_finite_differences():
    from conftest import perturbed

    m = perturbed(init_model(VelocityModel(hidden_dims=(16,), time_warp=1e-3, num_conditions=2), seed=0))
    rng = np.random.default_rng(0)
    z, t = rng.normal(size=(5, 2)), rng.uniform(0.001, 0.9, (5, 1))
    c = np.array([0, 1, -1, 0, 1])

    def f(z, t, dt):
        return m(z, t, dt, c)

    ones = np.ones_like(t)
    _, tan = ad.jvp(f, [z, t, t / 2], [z, ones, ones])
    h = 1e-7
    fd = (f(z + h * z, t + h, t / 2 + h).data - f(z - h * z, t - h, t / 2 - h).data) / (2 * h)
    assert np.max(np.abs(tan.data - fd)) / np.max(np.abs(fd)) < 1e-4
