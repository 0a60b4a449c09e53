"""Run configuration: an INI-style ``key = value`` file with section headers.

Values are parsed as JSON when possible (numbers, lists, booleans, null) and
kept as strings otherwise; a bare comma list like ``128, 128`` becomes a list.
Precedence is command-line override > file > built-in default. Unknown
sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import ToyDataset, make_dataset
from .network import VelocityModel, validate_architecture
from .sampling import GuidanceConfig, SamplerSpec, TimePairConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    n: int = 2000
    seeds: tuple = (0, 1, 2, 3, 4)
    hist_bins: int = 40
    hist_range: float = 4.0


@dataclass
class AblateConfig:
    omegas: tuple = (1.0, 1.5, 2.5, 3.5, 4.5)
    modes: tuple = ("standard", "scaled")
    ratios: tuple = (0.1, 0.5, 0.9)
    ratio_seeds: tuple = (0, 1, 2)
    ratio_steps: int = 20_000


@dataclass
class SampleConfig:
    kind: str = "meanflow"
    steps: int = 1
    n: int = 1000
    cls: int | None = None  # None cycles through all classes


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    data: dict = field(default_factory=lambda: {"kind": "gaussian_mixture"})
    model: VelocityModel = field(default_factory=VelocityModel)
    train: TrainConfig = field(default_factory=TrainConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    sampler: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def dataset(self) -> ToyDataset:
        d = dict(self.data)
        kind = d.pop("kind")
        return make_dataset(kind, d, seed=self.seed)

    def sampler_spec(self) -> SamplerSpec:
        return SamplerSpec(self.sampler.kind, self.sampler.steps, self.guidance)

    def model_config(self) -> VelocityModel:
        return replace(self.model, num_conditions=self.dataset().num_classes)

    def to_dict(self) -> dict:
        out = {
            "run": {"seed": self.seed, "out": self.out},
            "data": dict(self.data),
            "model": {k: v for k, v in self.model.architecture().items()},
            "train": {k: v for k, v in asdict(self.train).items() if k != "time_pair"},
            "time_pair": asdict(self.train.time_pair),
            "guidance": asdict(self.guidance),
            "sampler": asdict(self.sampler),
            "eval": asdict(self.eval),
            "ablate": asdict(self.ablate),
        }
        return json.loads(json.dumps(out))  # tuples -> lists

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_MODEL_KEYS = ("hidden_dims", "time_embed_dim", "cond_embed_dim", "activation", "time_freq_max", "time_warp")
_SECTIONS = {
    "run": ("seed", "out"),
    "data": None,  # kind-specific; validated by make_dataset
    "model": _MODEL_KEYS,
    "train": tuple(f.name for f in fields(TrainConfig) if f.name not in ("time_pair", "seed")),
    "time_pair": tuple(f.name for f in fields(TimePairConfig)),
    "guidance": ("mode", "omega"),
    "sampler": tuple(f.name for f in fields(SampleConfig)),
    "eval": tuple(f.name for f in fields(EvalConfig)),
    "ablate": tuple(f.name for f in fields(AblateConfig)),
}
_DATA_KEYS = {
    "delta": ("points",),
    "gaussian_mixture": ("means", "sigma"),
    "moons": ("noise",),
    "checkerboard": ("cells", "size"),
}


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    return text


def _tuple(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def read_sections(path) -> dict[str, dict]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return {s: {k: parse_value(v) for k, v in parser.items(s)} for s in parser.sections()}


def parse_override(item: str) -> tuple[str, str, object]:
    """``section.key=value`` -> (section, key, parsed value)."""
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    lhs, rhs = item.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section, key, parse_value(rhs)


def build_config(sections: dict[str, dict]) -> RunConfig:
    for name, values in sections.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        allowed = _SECTIONS[name]
        if allowed is not None:
            bad = sorted(set(values) - set(allowed))
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(bad)}")

    run = sections.get("run", {})
    data = dict(sections.get("data", {"kind": "gaussian_mixture"}))
    kind = data.get("kind", "gaussian_mixture")
    if kind not in _DATA_KEYS:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    bad = sorted(set(data) - {"kind", *_DATA_KEYS[kind]})
    if bad:
        raise ConfigError(f"unknown key(s) in [data] for kind {kind}: {', '.join(bad)}")
    data["kind"] = kind

    try:
        seed = int(run.get("seed", 0))
        model_kw = dict(sections.get("model", {}))
        if "hidden_dims" in model_kw:
            model_kw["hidden_dims"] = tuple(int(h) for h in _tuple(model_kw["hidden_dims"]))
        model = VelocityModel(**model_kw)
        validate_architecture(model)
        tp = TimePairConfig(**sections.get("time_pair", {}))
        train_kw = dict(sections.get("train", {}))
        if "decay_milestones" in train_kw:
            train_kw["decay_milestones"] = tuple(tuple(m) for m in train_kw["decay_milestones"])
        if train_kw.get("steps") is not None and "warmup_steps" not in train_kw \
                and "decay_milestones" not in train_kw:
            lr = train_kw.pop("lr_max", TrainConfig.lr_max)
            steps = int(train_kw.pop("steps"))
            train = TrainConfig.scaled(steps, lr_max=lr, time_pair=tp, seed=seed, **train_kw)
        else:
            train = TrainConfig(time_pair=tp, seed=seed, **train_kw)
        guidance = GuidanceConfig(**sections.get("guidance", {}))
        sampler = SampleConfig(**sections.get("sampler", {}))
        ev = dict(sections.get("eval", {}))
        if "seeds" in ev:
            ev["seeds"] = tuple(int(s) for s in _tuple(ev["seeds"]))
        ab = {k: _tuple(v) if k != "ratio_steps" else int(v) for k, v in sections.get("ablate", {}).items()}
        cfg = RunConfig(
            seed=seed,
            out=str(run.get("out", "runs/default")),
            data=data,
            model=model,
            train=train,
            guidance=guidance,
            sampler=sampler,
            eval=EvalConfig(**ev),
            ablate=AblateConfig(**ab),
        )
        cfg.dataset()
        SamplerSpec(cfg.sampler.kind, cfg.sampler.steps, cfg.guidance)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    """Read ``path`` (optional), apply ``section.key=value`` overrides, validate."""
    sections = read_sections(path) if path is not None else {}
    for item in overrides:
        section, key, value = parse_override(item) if isinstance(item, str) else item
        sections.setdefault(section, {})[key] = value
    return build_config(sections)
