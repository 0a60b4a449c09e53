"""Linear flow path, FM regression loss and the MeanFlow loss.

Both losses share one squared-error reduction so that a batch with ``r == t``
gives the same number through either objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .network import NULL


@dataclass(frozen=True)
class FlowSample:
    x: np.ndarray
    eps: np.ndarray
    r: float
    t: float
    z: np.ndarray
    v: np.ndarray
    c: int = NULL


@dataclass(frozen=True)
class FlowBatch:
    """Row-stacked training tuples; ``c`` uses NULL for dropped conditions."""

    x: np.ndarray
    eps: np.ndarray
    r: np.ndarray
    t: np.ndarray
    z: np.ndarray
    v: np.ndarray
    c: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dt(self) -> np.ndarray:
        return self.t - self.r

    def with_r_equal_t(self) -> "FlowBatch":
        return make_flow_batch(self.x, self.eps, self.t, self.t, self.c)

    @classmethod
    def from_samples(cls, samples) -> "FlowBatch":
        samples = list(samples)
        return make_flow_batch(
            np.stack([s.x for s in samples]),
            np.stack([s.eps for s in samples]),
            np.array([s.r for s in samples]),
            np.array([s.t for s in samples]),
            np.array([s.c for s in samples], dtype=np.int64),
        )


def _interp(x, eps, t):
    return (1.0 - t) * x + t * eps


def make_flow_sample(x, eps, r: float, t: float, c: int = NULL) -> FlowSample:
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    r, t = float(r), float(t)
    if x.shape != eps.shape:
        raise ValueError(f"x {x.shape} and eps {eps.shape} differ in shape")
    if not 0.0 <= r <= t <= 1.0:
        raise ValueError(f"need 0 <= r <= t <= 1, got r={r}, t={t}")
    return FlowSample(x=x, eps=eps, r=r, t=t, z=_interp(x, eps, t), v=eps - x, c=int(c))


def make_flow_batch(x, eps, r, t, c=None) -> FlowBatch:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    B = x.shape[0]
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), (B,)).copy()
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,)).copy()
    c = np.full(B, NULL, dtype=np.int64) if c is None else np.broadcast_to(np.asarray(c, dtype=np.int64), (B,)).copy()
    if x.shape != eps.shape:
        raise ValueError(f"x {x.shape} and eps {eps.shape} differ in shape")
    if B < 1:
        raise ValueError("empty batch")
    if not ((0.0 <= r) & (r <= t) & (t <= 1.0)).all():
        raise ValueError("need 0 <= r <= t <= 1 for every sample")
    tc = t[:, None]
    return FlowBatch(x=x, eps=eps, r=r, t=t, z=_interp(x, eps, tc), v=eps - x, c=c)


def _as_batch(b) -> tuple[FlowBatch, bool]:
    if isinstance(b, FlowSample):
        return FlowBatch.from_samples([b]), True
    return b, False


def squared_error(pred: ad.Value, target) -> ad.Value:
    """Mean over rows of the squared L2 distance."""
    return ad.mean(ad.sqnorm(ad.sub(pred, target), axis=1))


def fm_loss(model, batch: FlowBatch, params=None) -> ad.Value:
    """Instantaneous-velocity regression; requires every sample to have r == t."""
    if not np.array_equal(batch.r, batch.t):
        raise ValueError("fm_loss needs r == t for every sample")
    pred = model(batch.z, batch.t, np.zeros_like(batch.t), batch.c, params=params)
    return squared_error(pred, ad.Value(batch.v))


def _frozen(params):
    if params is None:
        return None
    return {k: (p.data if isinstance(p, ad.Value) else p) for k, p in params.items()}


def _jvp_along_flow(model, batch: FlowBatch, params):
    """Model output at (z, t, t - r) and its total t-derivative with r held fixed.

    Moving t with r fixed moves dt = t - r at the same rate, so the tangent
    is (v, 1, 1) on (z, t, dt).
    """
    c = batch.c

    def u(z, t, dt):
        return model(z, t, dt, c, params=params)

    ones = np.ones((len(batch), 1))
    return ad.jvp(u, [batch.z, batch.t[:, None], batch.dt[:, None]], [batch.v, ones, ones])


def _target(batch: FlowBatch, dudt: ad.Value, stop: bool) -> ad.Value:
    target = ad.sub(batch.v, ad.mul(batch.dt[:, None], dudt))
    return ad.stop_gradient(target) if stop else target


def meanflow_target(model, batch, params=None, stop: bool = True) -> ad.Value:
    """Regression target ``v - (t - r) * du/dt``, gradient-frozen unless ``stop`` is False."""
    batch, single = _as_batch(batch)
    _, dudt = _jvp_along_flow(model, batch, _frozen(params) if stop else params)
    target = _target(batch, dudt, stop)
    if single:
        target = ad.reshape(target, batch.v.shape[1:])
    return target


def meanflow_loss(model, batch: FlowBatch, params=None, stop: bool = True) -> ad.Value:
    """Mean squared distance between u(z_t, t, t - r, c) and the frozen target.

    The prediction is the primal output of the same JVP pass that produces the
    target, so the model is evaluated once per batch.
    """
    pred, dudt = _jvp_along_flow(model, batch, params)
    return squared_error(pred, _target(batch, dudt, stop))
