"""Time-pair sampling, classifier-free guidance and the samplers.

Samplers accept any velocity callable ``u(z, t, dt, c, params=None)``; a
:class:`~meanflow_lab.network.VelocityModel` is one. Wrap it in
:class:`CountingVelocity` to count batched model evaluations (each call
evaluates every row once, so calls == per-sample NFE).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NULL

GUIDANCE_MODES = ("none", "standard", "scaled")
DEGENERATE_SQNORM = 1e-12


class DegenerateDirectionError(ArithmeticError):
    """The unconditional prediction is too close to zero to project onto."""


@dataclass(frozen=True)
class TimePairConfig:
    mu: float = -2.0
    sigma: float = 2.0
    neq_ratio: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.neq_ratio <= 1.0:
            raise ValueError(f"neq_ratio must be in [0, 1], got {self.neq_ratio}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "none"
    omega: float = 1.0

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ValueError(f"guidance mode must be one of {GUIDANCE_MODES}, got {self.mode!r}")
        if self.mode != "none" and self.omega < 1.0:
            raise ValueError(f"guidance strength must be >= 1, got {self.omega}")

    @property
    def guided(self) -> bool:
        return self.mode != "none"


_T_LO = np.nextafter(0.0, 1.0)
_T_HI = np.nextafter(1.0, 0.0)


def _logit_normal(rng, mu, sigma, size):
    return np.clip(1.0 / (1.0 + np.exp(-rng.normal(mu, sigma, size))), _T_LO, _T_HI)


def sample_time_pairs(cfg: TimePairConfig, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` (r, t) pairs with 0 < r <= t < 1.

    A fraction ``neq_ratio`` of pairs (in expectation) uses two independent
    logit-normal draws sorted into (min, max); the rest duplicate one draw.
    """
    a = _logit_normal(rng, cfg.mu, cfg.sigma, n)
    b = _logit_normal(rng, cfg.mu, cfg.sigma, n)
    neq = rng.random(n) < cfg.neq_ratio
    r = np.where(neq, np.minimum(a, b), a)
    t = np.where(neq, np.maximum(a, b), a)
    return r, t


def sample_time_pair(cfg: TimePairConfig, rng: np.random.Generator) -> tuple[float, float]:
    r, t = sample_time_pairs(cfg, rng, 1)
    return float(r[0]), float(t[0])


def cfg_scale_factor(u_c, u_u) -> float:
    """Projection coefficient <u_c, u_u> / ||u_u||^2 for one sample."""
    u_c = np.asarray(u_c, dtype=np.float64).ravel()
    u_u = np.asarray(u_u, dtype=np.float64).ravel()
    nn = float(u_u @ u_u)
    if nn < DEGENERATE_SQNORM:
        raise DegenerateDirectionError(f"||u_u||^2 = {nn:.3g} is below {DEGENERATE_SQNORM}")
    return float(u_c @ u_u) / nn


def scale_factors(u_c: np.ndarray, u_u: np.ndarray) -> np.ndarray:
    """Row-wise projection coefficients; degenerate rows fall back to s = 1."""
    u_c = np.asarray(u_c, dtype=np.float64)
    u_u = np.asarray(u_u, dtype=np.float64)
    flat_c = u_c.reshape(u_c.shape[0], -1)
    flat_u = u_u.reshape(u_u.shape[0], -1)
    nn = (flat_u * flat_u).sum(axis=1)
    ok = nn >= DEGENERATE_SQNORM
    s = np.ones(len(nn))
    s[ok] = (flat_c[ok] * flat_u[ok]).sum(axis=1) / nn[ok]
    return s


def apply_guidance(u_c, u_u, cfg: GuidanceConfig) -> np.ndarray:
    """Combine conditional and unconditional predictions.

    Accepts a single prediction vector or a (B, D) batch (one scale factor per
    row in scaled mode).
    """
    u_c = np.asarray(u_c, dtype=np.float64)
    if cfg.mode == "none" or cfg.omega == 1.0:
        return u_c.copy()
    u_u = np.asarray(u_u, dtype=np.float64)
    if u_c.shape != u_u.shape:
        raise ValueError(f"prediction shapes differ: {u_c.shape} vs {u_u.shape}")
    w = cfg.omega
    if cfg.mode == "standard":
        return w * u_c + (1.0 - w) * u_u
    if u_c.ndim == 1:
        try:
            s = cfg_scale_factor(u_c, u_u)
        except DegenerateDirectionError:
            s = 1.0
        return w * u_c + (1.0 - w) * s * u_u
    s = scale_factors(u_c, u_u).reshape((-1,) + (1,) * (u_c.ndim - 1))
    return w * u_c + (1.0 - w) * s * u_u


class CountingVelocity:
    """Velocity callable wrapper that counts batched evaluations."""

    def __init__(self, model):
        self.model = model
        self.calls = 0

    def __call__(self, z, t, dt, c, params=None):
        self.calls += 1
        return self.model(z, t, dt, c, params=params)


def _eval(model, z, t, dt, c) -> np.ndarray:
    out = model(z, t, dt, c)
    return np.asarray(getattr(out, "data", out), dtype=np.float64)


def guided_velocity(model, z, t: float, dt: float, c, cfg: GuidanceConfig) -> np.ndarray:
    u_c = _eval(model, z, t, dt, c)
    if not cfg.guided:
        return u_c
    u_u = _eval(model, z, t, dt, NULL)
    return apply_guidance(u_c, u_u, cfg)


def _check_eps(eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim not in (1, 2):
        raise ValueError("eps must be a point or a (B, D) batch")
    return eps


def one_step_sample(model, eps, c, cfg: GuidanceConfig = GuidanceConfig()) -> np.ndarray:
    """z0 = eps - u(eps, r=0, t=1)."""
    eps = _check_eps(eps)
    return eps - guided_velocity(model, eps, 1.0, 1.0, c, cfg)


def time_grid(n_steps: int) -> np.ndarray:
    """Uniform grid 1 = t_n > ... > t_0 = 0, listed from t_n down."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    return np.linspace(1.0, 0.0, n_steps + 1)


def multi_step_sample(model, eps, c, cfg: GuidanceConfig = GuidanceConfig(), n_steps: int = 1) -> np.ndarray:
    """Chain average-velocity jumps over the uniform grid."""
    grid = time_grid(n_steps)
    z = _check_eps(eps)
    for t_hi, t_lo in zip(grid[:-1], grid[1:]):
        h = t_hi - t_lo
        g = guided_velocity(model, z, t_hi, h, c, cfg)
        z = z - h * g
    return z


def fm_euler_sample(model, eps, c, cfg: GuidanceConfig = GuidanceConfig(), n_steps: int = 25) -> np.ndarray:
    """Explicit Euler on dz/dt = u(z, t, 0, c) from t=1 down to t=0."""
    grid = time_grid(n_steps)
    z = _check_eps(eps)
    for t_hi, t_lo in zip(grid[:-1], grid[1:]):
        z = z - (t_hi - t_lo) * guided_velocity(model, z, t_hi, 0.0, c, cfg)
    return z


SAMPLERS = {
    "meanflow": multi_step_sample,
    "fm_euler": fm_euler_sample,
}


@dataclass(frozen=True)
class SamplerSpec:
    """Which sampler, how many steps and which guidance."""

    kind: str = "meanflow"
    steps: int = 1
    guidance: GuidanceConfig = GuidanceConfig()

    def __post_init__(self):
        if self.kind not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.kind!r}; choose from {sorted(SAMPLERS)}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def label(self) -> str:
        g = self.guidance
        tag = "unguided" if not g.guided else f"{g.mode}-w{g.omega:g}"
        return f"{self.kind}-{self.steps}step-{tag}"

    def expected_nfe(self) -> int:
        return self.steps * (2 if self.guidance.guided else 1)

    def run(self, model, eps, c) -> np.ndarray:
        if self.kind == "meanflow":
            if self.steps == 1:
                return one_step_sample(model, eps, c, self.guidance)
            return multi_step_sample(model, eps, c, self.guidance, self.steps)
        return fm_euler_sample(model, eps, c, self.guidance, self.steps)
