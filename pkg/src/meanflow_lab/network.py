"""Conditional average-velocity MLP ``u(z, t, dt, c)``."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

NULL = -1  # the dropped / unconditional class label in condition arrays

CKPT_FORMAT = "meanflow-ckpt/1"


class ModelConfigError(ValueError):
    pass


@dataclass
class VelocityModel:
    data_dim: int = 2
    hidden_dims: tuple = (128, 128, 128)
    time_embed_dim: int = 32
    num_conditions: int = 4
    cond_embed_dim: int = 16
    activation: str = "silu"
    time_freq_max: float = 3.0
    time_warp: float = 0.0
    seed: int = 0
    step: int = 0
    params: dict = field(default_factory=dict, repr=False)

    @property
    def input_dim(self) -> int:
        return self.data_dim + 2 * self.time_embed_dim + self.cond_embed_dim

    @property
    def param_names(self) -> list[str]:
        return list(self.params)

    def param_list(self) -> list[np.ndarray]:
        return [self.params[k] for k in self.params]

    def with_params(self, arrays, step: int | None = None) -> "VelocityModel":
        new = {k: np.asarray(a, dtype=np.float64) for k, a in zip(self.params, arrays)}
        return VelocityModel(**self.architecture(), seed=self.seed,
                             step=self.step if step is None else step, params=new)

    def architecture(self) -> dict:
        return {
            "data_dim": self.data_dim,
            "hidden_dims": tuple(self.hidden_dims),
            "time_embed_dim": self.time_embed_dim,
            "num_conditions": self.num_conditions,
            "cond_embed_dim": self.cond_embed_dim,
            "activation": self.activation,
            "time_freq_max": self.time_freq_max,
            "time_warp": self.time_warp,
        }

    def __call__(self, z, t, dt, c, params=None):
        return forward(self, z, t, dt, c, params=params)


def validate_architecture(cfg: VelocityModel) -> None:
    dims = [cfg.data_dim, cfg.time_embed_dim, cfg.num_conditions, cfg.cond_embed_dim, *cfg.hidden_dims]
    if any(int(d) != d or d <= 0 for d in dims):
        raise ModelConfigError(f"all dimensions must be positive integers, got {dims}")
    if cfg.time_embed_dim % 2:
        raise ModelConfigError("time_embed_dim must be even")
    if cfg.activation not in ("silu", "tanh"):
        raise ModelConfigError(f"unknown activation {cfg.activation!r}")
    if not cfg.hidden_dims:
        raise ModelConfigError("need at least one hidden layer")
    if cfg.time_freq_max < 1.0:
        raise ModelConfigError("time_freq_max must be >= 1")
    if not 0.0 <= cfg.time_warp < 1.0:
        raise ModelConfigError("time_warp must be in [0, 1)")


def init_model(config: VelocityModel | dict | None = None, seed: int = 0) -> VelocityModel:
    """Fresh parameters: He-uniform hidden layers, zero output head.

    The zero head makes the untrained model output exactly zero, so its
    one-step map is the identity.
    """
    if config is None:
        config = VelocityModel()
    elif isinstance(config, dict):
        config = VelocityModel(**config)
    validate_architecture(config)
    rng = np.random.default_rng(seed)
    params = {"cond_embed": rng.uniform(-1.0, 1.0, size=(config.num_conditions + 1, config.cond_embed_dim))}
    fan_in = config.input_dim
    for i, width in enumerate(config.hidden_dims):
        bound = math.sqrt(6.0 / fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, width))
        params[f"b{i}"] = np.zeros(width)
        fan_in = width
    params["W_out"] = np.zeros((fan_in, config.data_dim))
    params["b_out"] = np.zeros(config.data_dim)
    return VelocityModel(**config.architecture(), seed=seed, step=0, params=params)


def time_frequencies(embed_dim: int, freq_max: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Interleaved (frequency, phase) rows so that sin(t*f + phase) = [sin, cos, sin, cos, ...]."""
    half = embed_dim // 2
    base = np.exp(np.linspace(0.0, math.log(freq_max), half))
    freqs = np.repeat(base, 2).reshape(1, embed_dim)
    phase = np.tile([0.0, math.pi / 2], half)
    return freqs, phase


def time_embedding(t, embed_dim: int, freq_max: float = 3.0) -> ad.Value:
    """Sinusoidal embedding of a (B, 1) column of times."""
    freqs, phase = time_frequencies(embed_dim, freq_max)
    return ad.sin(ad.add(ad.matmul(t, freqs), phase))


def warp_time(t, tau: float) -> ad.Value:
    """log(1 + t/tau) / log(1 + 1/tau): fixes 0 and 1, stretches small t.

    ``tau = 0`` disables the warp.
    """
    if not tau:
        return ad.as_value(t)
    return ad.scale(ad.log(ad.add(ad.scale(t, 1.0 / tau), 1.0)), 1.0 / math.log1p(1.0 / tau))


def _time_column(x, batch: int, name: str) -> ad.Value:
    x = ad.as_value(x)
    if x.shape in ((), (1,)):
        x = ad.add(np.zeros((batch, 1)), ad.reshape(x, ()))
    elif x.shape == (batch,):
        x = ad.reshape(x, (batch, 1))
    elif x.shape != (batch, 1):
        raise ad.ShapeError(f"{name} has shape {x.shape}, expected scalar, ({batch},) or ({batch}, 1)")
    if ((x.data < 0.0) | (x.data > 1.0)).any():
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


def condition_onehot(c, batch: int, num_conditions: int) -> np.ndarray:
    """One-hot rows over K+1 embedding rows; ``None`` or NULL selects the null row K."""
    if c is None:
        c = NULL
    c = np.asarray(c)
    if c.ndim == 0:
        c = np.full(batch, int(c))
    if c.shape != (batch,):
        raise ad.ShapeError(f"condition array has shape {c.shape}, expected ({batch},)")
    if not np.issubdtype(c.dtype, np.integer):
        raise TypeError("condition labels must be integers")
    if ((c < NULL) | (c >= num_conditions)).any():
        raise ValueError(f"condition index out of range [0, {num_conditions}) or NULL")
    rows = np.where(c == NULL, num_conditions, c)
    onehot = np.zeros((batch, num_conditions + 1))
    onehot[np.arange(batch), rows] = 1.0
    return onehot


def forward(model: VelocityModel, z, t, dt, c, params=None) -> ad.Value:
    """Evaluate u(z, t, dt, c) for a batch of rows or a single 1-d point.

    ``t`` and ``dt`` may be scalars, (B,) arrays or (B, 1) Values; pass Values
    carrying tangents to take a JVP through time. ``params`` (a dict keyed like
    ``model.params``) overrides the stored parameters, e.g. with live leaves.
    """
    p = model.params if params is None else params
    z = ad.as_value(z)
    single = z.ndim == 1
    if single:
        z = ad.reshape(z, (1, -1))
    if z.ndim != 2 or z.shape[1] != model.data_dim:
        raise ad.ShapeError(f"z has shape {z.shape}, expected (B, {model.data_dim})")
    batch = z.shape[0]
    t = _time_column(t, batch, "t")
    dt = _time_column(dt, batch, "dt")
    if (dt.data > t.data).any():
        raise ValueError("dt must not exceed t (r = t - dt must be >= 0)")

    act = ad.silu if model.activation == "silu" else ad.tanh
    onehot = condition_onehot(c, batch, model.num_conditions)
    h = ad.concat([
        z,
        time_embedding(warp_time(t, model.time_warp), model.time_embed_dim, model.time_freq_max),
        time_embedding(dt, model.time_embed_dim, model.time_freq_max),
        ad.matmul(onehot, p["cond_embed"]),
    ])
    for i in range(len(model.hidden_dims)):
        h = act(ad.affine(h, p[f"W{i}"], p[f"b{i}"]))
    out = ad.affine(h, p["W_out"], p["b_out"])
    if single:
        out = ad.reshape(out, (model.data_dim,))
    return out


# -- checkpoints ---------------------------------------------------------------


def _ckpt_paths(prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    if prefix.suffix in (".json", ".bin"):
        prefix = prefix.with_suffix("")
    return prefix.with_suffix(".json"), prefix.with_suffix(".bin")


def save_checkpoint(model: VelocityModel, prefix) -> tuple[Path, Path]:
    """Write ``<prefix>.json`` (manifest) and ``<prefix>.bin`` (little-endian f8 blob)."""
    manifest_path, blob_path = _ckpt_paths(prefix)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    arch = model.architecture()
    arch["hidden_dims"] = list(arch["hidden_dims"])
    manifest = {
        "format": CKPT_FORMAT,
        "architecture": arch,
        "seed": int(model.seed),
        "step": int(model.step),
        "dtype": "<f8",
        "blob": blob_path.name,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    blob = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in model.params.values())
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    blob_path.write_bytes(blob)
    return manifest_path, blob_path


def load_checkpoint(prefix) -> VelocityModel:
    manifest_path, blob_path = _ckpt_paths(prefix)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CKPT_FORMAT:
        raise ModelConfigError(f"{manifest_path}: unsupported checkpoint format {manifest.get('format')!r}")
    flat = np.frombuffer(blob_path.read_bytes(), dtype="<f8")
    params, offset = {}, 0
    for entry in manifest["params"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if offset + n > flat.size:
            raise ModelConfigError(f"{blob_path}: blob too short for parameter {entry['name']!r}")
        params[entry["name"]] = flat[offset:offset + n].reshape(entry["shape"]).astype(np.float64)
        offset += n
    if offset != flat.size:
        raise ModelConfigError(f"{blob_path}: {flat.size - offset} trailing values")
    arch = dict(manifest["architecture"])
    arch["hidden_dims"] = tuple(arch["hidden_dims"])
    return VelocityModel(**arch, seed=manifest["seed"], step=manifest["step"], params=params)
