"""AdamW training loop for the FM and MeanFlow objectives."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from . import autodiff as ad
from .data import ToyDataset, sample_training_batch
from .network import VelocityModel, save_checkpoint
from .objectives import fm_loss, meanflow_loss
from .sampling import TimePairConfig

log = logging.getLogger(__name__)

OBJECTIVES = ("fm", "meanflow")


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, lr: float, loss: float, reason: str = "non-finite loss"):
        super().__init__(f"{reason} at step {step} (lr={lr:.3g}, loss={loss!r})")
        self.step, self.lr, self.loss = step, lr, loss


@dataclass
class TrainConfig:
    objective: str = "meanflow"
    steps: int = 20_000
    batch_size: int = 256
    lr_max: float = 1e-3
    warmup_steps: int = 500
    # (step, lr) pairs; lr is held constant from each step on
    decay_milestones: tuple = ((12_500, 1e-4), (17_500, 1e-5))
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 1e-6
    drop_prob: float = 0.1
    time_pair: TimePairConfig = field(default_factory=TimePairConfig)
    grad_clip: float | None = None
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.steps < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("steps/warmup_steps must be >= 0 and batch_size >= 1")
        if self.steps and self.warmup_steps >= self.steps:
            raise ValueError("warmup_steps must be smaller than steps")
        ms = [int(s) for s, _ in self.decay_milestones]
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("decay milestones must be strictly increasing in step")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must be in [0, 1]")
        self.decay_milestones = tuple((int(s), float(lr)) for s, lr in self.decay_milestones)

    @classmethod
    def scaled(cls, steps: int, **kw) -> "TrainConfig":
        """Desk schedule shape (warmup 2.5%, drops at 62.5% and 87.5%) for any length."""
        lr = kw.pop("lr_max", cls.lr_max)
        first = steps * 5 // 8
        return cls(
            steps=steps,
            lr_max=lr,
            warmup_steps=min(max(1, steps // 40), max(steps - 1, 0)),
            decay_milestones=((first, lr / 10), (max(first + 1, steps * 7 // 8), lr / 100)),
            **kw,
        )


def lr_at_step(cfg: TrainConfig, step: int) -> float:
    """Linear warmup from 0 to ``lr_max``, then piecewise-constant drops."""
    if not 0 <= step < max(cfg.steps, 1):
        raise ValueError(f"step {step} outside [0, {cfg.steps})")
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr_max * step / cfg.warmup_steps
    lr = cfg.lr_max
    for at, value in cfg.decay_milestones:
        if step >= at:
            lr = value
    return lr


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adamw_update(params, grads, state: OptimizerState, lr: float, cfg: TrainConfig):
    """One decoupled-weight-decay Adam step; returns new params and state.

    ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    if lr < 0:
        raise ValueError("lr must be non-negative")
    step = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient")
        p, m, v = p.copy(), m.copy(), v.copy()
        _kernels.adamw_inplace(p, g, m, v, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, bc1, bc2)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    return new_p, OptimizerState(new_m, new_v, step)


def _clip(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total <= max_norm:
        return grads
    return [g * (max_norm / total) for g in grads]


def loss_fn(cfg: TrainConfig):
    return fm_loss if cfg.objective == "fm" else meanflow_loss


def train_step(model: VelocityModel, batch, cfg: TrainConfig, params, state, lr):
    """Loss, gradient and AdamW update for one batch."""
    names = model.param_names
    objective = loss_fn(cfg)
    if cfg.objective == "fm":
        batch = batch.with_r_equal_t()

    def f(*leaves):
        return objective(model, batch, params=dict(zip(names, leaves)))

    loss, grads = ad.value_and_grad(f, params)
    if cfg.grad_clip:
        grads = _clip(grads, cfg.grad_clip)
    params, state = adamw_update(params, grads, state, lr, cfg)
    return loss, params, state


@dataclass
class TrainResult:
    model: VelocityModel
    trace: list  # (step, loss, lr)

    @property
    def losses(self) -> np.ndarray:
        return np.array([row[1] for row in self.trace])


def train(model: VelocityModel, dataset: ToyDataset, cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Run ``cfg.steps`` optimizer steps; deterministic for a given ``cfg.seed``.

    The FM objective ignores sampled r and trains on r = t. Raises
    :class:`TrainingDiverged` on a non-finite loss or gradient.
    """
    rng = np.random.default_rng(cfg.seed)
    params = [p.copy() for p in model.param_list()]
    state = OptimizerState.zeros_like(params)
    trace = []
    for step in range(cfg.steps):
        lr = lr_at_step(cfg, step)
        batch = sample_training_batch(dataset, cfg.batch_size, cfg.drop_prob, cfg.time_pair, rng)
        try:
            loss, params, state = train_step(model, batch, cfg, params, state, lr)
        except FloatingPointError as exc:
            raise TrainingDiverged(step, lr, float("nan"), str(exc)) from exc
        if not math.isfinite(loss):
            raise TrainingDiverged(step, lr, loss)
        trace.append((step, loss, lr))
        if step % 1000 == 0:
            log.info("step %d loss %.5f lr %.3g", step, loss, lr)
        if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model.with_params(params, step=step + 1), Path(out_dir) / f"model_step{step + 1}")
    return TrainResult(model.with_params(params, step=model.step + cfg.steps), trace)


def write_loss_csv(trace, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "lr"])
        for step, loss, lr in trace:
            w.writerow([step, repr(float(loss)), repr(float(lr))])
