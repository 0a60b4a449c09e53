import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanflow_lab import autodiff as ad
from meanflow_lab.network import VelocityModel, init_model
from meanflow_lab.objectives import (
    FlowBatch,
    fm_loss,
    make_flow_batch,
    make_flow_sample,
    meanflow_loss,
    meanflow_target,
)

from conftest import ConstantStub, LinearStub, perturbed


def test_path_endpoints():
    x, eps = np.array([1.0, -3.0]), np.array([0.5, 2.0])
    assert np.array_equal(make_flow_sample(x, eps, 0, 0).z, x)
    assert np.array_equal(make_flow_sample(x, eps, 0, 1).z, eps)


def test_path_midpoint():
    s = make_flow_sample([0.0, 0.0], [2.0, -2.0], 0.2, 0.5)
    assert s.z.tolist() == [1.0, -1.0]
    assert s.v.tolist() == [2.0, -2.0]


def test_r_after_t_rejected():
    with pytest.raises(ValueError):
        make_flow_sample([0.0], [1.0], 0.6, 0.5)
    with pytest.raises(ValueError):
        make_flow_batch(np.zeros((2, 2)), np.zeros((2, 2)), [0.1, 0.6], [0.5, 0.5])


def test_fm_loss_stubs():
    b = make_flow_batch([[0.0]], [[2.0]], 0.3, 0.3)
    assert fm_loss(ConstantStub([1.0]), b).data == 1.0
    b = make_flow_batch([[1.0, 0.0]], [[3.0, 1.0]], 0.5, 0.5)
    assert fm_loss(ConstantStub(b.v[0]), b).data == 0.0


def test_fm_loss_zero_model_is_mean_sq_v():
    rng = np.random.default_rng(0)
    b = make_flow_batch(rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), 0.4, 0.4)
    m = init_model(VelocityModel(num_conditions=1), seed=0)
    assert fm_loss(m, b).data == pytest.approx(np.mean((b.v ** 2).sum(1)), rel=1e-15)


def test_fm_loss_requires_r_equal_t():
    b = make_flow_batch([[0.0, 0.0]], [[1.0, 1.0]], 0.2, 0.5)
    with pytest.raises(ValueError):
        fm_loss(ConstantStub([0.0, 0.0]), b)


def test_target_on_linear_stub():
    s = make_flow_sample([0.0, 0.0], [1.0, 1.0], 0.25, 0.75)
    tgt = meanflow_target(LinearStub(np.diag([1.0, 2.0])), s)
    np.testing.assert_allclose(tgt.data, [0.5, 0.0], atol=1e-12, rtol=0)


def test_target_is_v_when_r_equals_t(small_model):
    rng = np.random.default_rng(1)
    b = make_flow_batch(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), 0.3, 0.3, [0, 1, 2, -1, 0])
    assert np.array_equal(meanflow_target(small_model, b).data, b.v)


def test_target_is_v_for_zero_head():
    m = init_model(VelocityModel(num_conditions=1), seed=0)
    b = make_flow_batch([[0.1, 0.2]], [[1.0, -1.0]], 0.1, 0.9)
    assert np.array_equal(meanflow_target(m, b).data, b.v)


def test_meanflow_loss_zero_head_single_sample():
    m = init_model(VelocityModel(num_conditions=1), seed=0)
    b = make_flow_batch([[0.0, 0.0]], [[2.0, 0.0]], 0.2, 0.7)
    assert meanflow_loss(m, b).data == 4.0


def test_target_derivative_matches_finite_differences(small_model):
    rng = np.random.default_rng(2)
    b = make_flow_batch(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), [0.1, 0.2, 0.0, 0.3],
                        [0.5, 0.6, 0.4, 0.8], [0, 1, 2, -1])
    dudt = (b.v - meanflow_target(small_model, b).data) / b.dt[:, None]
    h = 1e-6

    def u(s):
        return small_model(b.z + s * b.v, (b.t + s)[:, None], (b.dt + s)[:, None], b.c).data

    fd = (u(h) - u(-h)) / (2 * h)
    assert np.max(np.abs(dudt - fd)) / np.max(np.abs(fd)) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_r_equal_t_reduction_is_exact(seed):
    rng = np.random.default_rng(seed)
    cfg = VelocityModel(hidden_dims=(8,), time_embed_dim=4, cond_embed_dim=2, num_conditions=2)
    m = perturbed(init_model(cfg, seed=seed % 7), seed=seed)
    B = 3
    t = rng.random(B)
    b = make_flow_batch(rng.normal(size=(B, 2)), rng.normal(size=(B, 2)), t, t, rng.integers(-1, 2, B))
    assert meanflow_loss(m, b).data == fm_loss(m, b).data


def test_stop_gradient_marker_is_active(small_model):
    rng = np.random.default_rng(3)
    b = make_flow_batch(rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), 0.1, 0.8, 0)
    names = small_model.param_names

    def g(stop):
        def f(*leaves):
            return meanflow_loss(small_model, b, params=dict(zip(names, leaves)), stop=stop)

        return ad.grad(f, small_model.param_list())

    with_stop, without = g(True), g(False)
    assert any(not np.allclose(a, c) for a, c in zip(with_stop, without))


def test_batch_helpers():
    b = make_flow_batch(np.zeros((3, 2)), np.ones((3, 2)), [0.1, 0.2, 0.3], 0.5)
    assert len(b) == 3
    np.testing.assert_allclose(b.dt, [0.4, 0.3, 0.2])
    assert np.array_equal(b.with_r_equal_t().r, b.t)
    s = make_flow_sample([0.0, 0.0], [1.0, 1.0], 0.1, 0.5, 2)
    assert isinstance(FlowBatch.from_samples([s, s]), FlowBatch)
