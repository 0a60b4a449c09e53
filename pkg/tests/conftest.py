import numpy as np
import pytest

from meanflow_lab import autodiff as ad
from meanflow_lab.network import VelocityModel, init_model


class LinearStub:
    """u(z, t, dt, c) = z @ A.T, ignoring time and condition."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=np.float64)

    def __call__(self, z, t, dt, c, params=None):
        return ad.matmul(ad.as_value(z), self.A.T)


class ConstantStub:
    def __init__(self, k):
        self.k = np.asarray(k, dtype=np.float64)
        self.data_dim = self.k.size

    def __call__(self, z, t, dt, c, params=None):
        z = ad.as_value(z)
        return ad.add(ad.scale(z, 0.0), self.k)


def perturbed(model, seed=0, scale=0.3):
    """Copy of ``model`` with a random (non-zero) output head."""
    rng = np.random.default_rng(seed)
    arrays = [p if k not in ("W_out", "b_out") else rng.normal(scale=scale, size=p.shape)
              for k, p in model.params.items()]
    return model.with_params(arrays)


@pytest.fixture
def small_model():
    cfg = VelocityModel(hidden_dims=(16, 16), time_embed_dim=8, cond_embed_dim=4, num_conditions=3)
    return perturbed(init_model(cfg, seed=0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
