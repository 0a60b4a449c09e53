"""Conditional 2D toy distributions with known structure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NULL
from .objectives import FlowBatch, make_flow_batch
from .sampling import TimePairConfig, sample_time_pairs

KINDS = ("delta", "gaussian_mixture", "moons", "checkerboard")


class DatasetError(ValueError):
    pass


def _default_params(kind: str) -> dict:
    if kind == "delta":
        return {"points": [[1.0, 1.0]]}
    if kind == "gaussian_mixture":
        return {"means": [[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]], "sigma": 0.3}
    if kind == "moons":
        return {"noise": 0.08}
    if kind == "checkerboard":
        return {"cells": 4, "size": 4.0}
    raise DatasetError(f"unknown dataset kind {kind!r}; choose from {KINDS}")


@dataclass
class ToyDataset:
    """A labelled 2D distribution; class k draws only from its own component(s).

    * ``delta``: one fixed point per class (``points``).
    * ``gaussian_mixture``: isotropic Gaussians, one per class (``means``, ``sigma``).
    * ``moons``: two interleaved half circles, one per class (``noise``).
    * ``checkerboard``: the dark cells of a ``cells`` x ``cells`` board of
      side ``size``; the class is the quadrant.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def num_classes(self) -> int:
        if self.kind == "delta":
            return len(self.params["points"])
        if self.kind == "gaussian_mixture":
            return len(self.params["means"])
        if self.kind == "moons":
            return 2
        return 4

    @property
    def data_dim(self) -> int:
        return 2

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def sample(self, n: int, rng: np.random.Generator | None = None, classes=None) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` points and labels; ``classes`` pins the labels (uniform otherwise)."""
        rng = self.rng() if rng is None else rng
        if classes is None:
            classes = rng.integers(0, self.num_classes, size=n)
        else:
            classes = np.broadcast_to(np.asarray(classes, dtype=np.int64), (n,)).copy()
            if ((classes < 0) | (classes >= self.num_classes)).any():
                raise DatasetError("class label out of range")
        return _DRAW[self.kind](self, classes, rng), classes

    def sample_class(self, k: int, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        return self.sample(n, rng, classes=np.full(n, k))[0]

    def describe(self) -> dict:
        return {"kind": self.kind, "params": self.params, "seed": self.seed}


def _draw_delta(ds, classes, rng):
    pts = np.asarray(ds.params["points"], dtype=np.float64)
    return pts[classes].copy()


def _draw_gmm(ds, classes, rng):
    means = np.asarray(ds.params["means"], dtype=np.float64)
    return means[classes] + ds.params["sigma"] * rng.standard_normal((len(classes), 2))


def _draw_moons(ds, classes, rng):
    theta = rng.uniform(0.0, np.pi, size=len(classes))
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    pts = np.where(classes[:, None] == 0, upper, lower)
    pts = (pts - np.array([0.5, 0.25])) * 2.0
    return pts + ds.params["noise"] * rng.standard_normal((len(classes), 2))


def _draw_checkerboard(ds, classes, rng):
    cells = int(ds.params["cells"])
    size = float(ds.params["size"])
    w = size / cells
    half = cells // 2
    # dark cells (i + j even) per quadrant, quadrant index = 2*(row>=half) + (col>=half)
    per_q = [[(i, j) for i in range(cells) for j in range(cells)
              if (i + j) % 2 == 0 and 2 * (i >= half) + (j >= half) == q] for q in range(4)]
    out = np.empty((len(classes), 2))
    pick = rng.random(len(classes))
    offs = rng.random((len(classes), 2))
    for q in range(4):
        idx = np.flatnonzero(classes == q)
        if idx.size == 0:
            continue
        cq = np.asarray(per_q[q])
        chosen = cq[np.minimum((pick[idx] * len(cq)).astype(int), len(cq) - 1)]
        out[idx, 0] = -size / 2 + (chosen[:, 1] + offs[idx, 0]) * w
        out[idx, 1] = -size / 2 + (chosen[:, 0] + offs[idx, 1]) * w
    return out


_DRAW = {
    "delta": _draw_delta,
    "gaussian_mixture": _draw_gmm,
    "moons": _draw_moons,
    "checkerboard": _draw_checkerboard,
}


def make_dataset(kind: str, params: dict | None = None, seed: int = 0) -> ToyDataset:
    merged = {**_default_params(kind), **(params or {})}
    if kind == "delta":
        pts = np.asarray(merged["points"], dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
            raise DatasetError("delta needs a non-empty list of 2D points")
        merged["points"] = pts.tolist()
    elif kind == "gaussian_mixture":
        means = np.asarray(merged["means"], dtype=np.float64)
        if means.ndim != 2 or means.shape[1] != 2 or len(means) < 1:
            raise DatasetError("gaussian_mixture needs a non-empty list of 2D means")
        if not merged["sigma"] > 0:
            raise DatasetError("gaussian_mixture sigma must be positive")
        merged["means"] = means.tolist()
        merged["sigma"] = float(merged["sigma"])
    elif kind == "moons":
        if merged["noise"] < 0:
            raise DatasetError("moons noise must be non-negative")
    elif kind == "checkerboard":
        if int(merged["cells"]) < 2 or int(merged["cells"]) % 2 or not merged["size"] > 0:
            raise DatasetError("checkerboard needs an even cells >= 2 and a positive size")
    return ToyDataset(kind=kind, params=merged, seed=int(seed))


def sample_training_batch(
    ds: ToyDataset,
    batch_size: int,
    drop_prob: float,
    tp: TimePairConfig,
    rng: np.random.Generator,
) -> FlowBatch:
    """x from the dataset, standard-normal eps, logit-normal (r, t), labels dropped to NULL."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not 0.0 <= drop_prob <= 1.0:
        raise ValueError("drop_prob must be in [0, 1]")
    x, c = ds.sample(batch_size, rng)
    eps = rng.standard_normal(x.shape)
    r, t = sample_time_pairs(tp, rng, batch_size)
    drop = rng.random(batch_size) < drop_prob
    c = np.where(drop, NULL, c)
    return make_flow_batch(x, eps, r, t, c)
