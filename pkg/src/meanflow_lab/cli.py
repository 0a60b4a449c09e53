"""``meanflow`` command line: train / sample / eval / bench / ablate.

Exit status: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .config import ConfigError, RunConfig, load_config
from .metrics import (
    HistGrid,
    cfg_sweep,
    energy_distance,
    eval_set,
    generate,
    histogram_kl,
    rt_ratio_ablation,
    scatter_svg,
    speed_bench,
)
from .network import ModelConfigError, init_model, load_checkpoint, save_checkpoint
from .sampling import GuidanceConfig, SamplerSpec
from .trainer import TrainConfig, TrainingDiverged, train, write_loss_csv

log = logging.getLogger("meanflow_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _add_common(p: argparse.ArgumentParser, ckpt: bool = False, config_required: bool = False) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="run config file (INI key = value)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--seed", type=int, help="run seed (overrides [run] seed)")
    p.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    if ckpt:
        p.add_argument("--ckpt", type=Path, required=True, help="checkpoint prefix, e.g. runs/x/model")


def _add_guidance(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cfg-mode", choices=("none", "standard", "scaled"), help="guidance mode")
    p.add_argument("--omega", type=float, help="guidance strength (>= 1)")
    p.add_argument("--sampler", choices=("meanflow", "fm_euler"), help="sampler kind")
    p.add_argument("--steps", type=int, help="sampling steps (default 1: one-step generation)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model; writes checkpoint, loss.csv and config.json")
    _add_common(p, config_required=True)

    p = sub.add_parser("sample", help="generate samples; writes samples.csv and samples.svg")
    _add_common(p, ckpt=True)
    _add_guidance(p)
    p.add_argument("-n", "--num", type=int, help="number of samples")
    p.add_argument("--cls", type=int, help="condition class (default: cycle through all classes)")

    p = sub.add_parser("eval", help="energy distance and histogram KL to held-out data; writes metrics.json")
    _add_common(p, ckpt=True)
    _add_guidance(p)

    p = sub.add_parser("bench", help="time one-step vs multi-step sampling; writes bench.json")
    _add_common(p, ckpt=True)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--omega", type=float, default=1.5)
    p.add_argument("--multi-steps", type=int, default=25)

    p = sub.add_parser("ablate", help="guidance sweep or r!=t ratio ablation tables")
    p.add_argument("which", choices=("cfg-sweep", "rt-ratio"))
    _add_common(p)
    p.add_argument("--ckpt", type=Path, help="trained model for cfg-sweep")
    p.add_argument("--steps", type=int, help="sampling steps for cfg-sweep (default 1)")
    return parser


def _resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("run", "seed", args.seed))
    if args.out is not None:
        overrides.append(("run", "out", str(args.out)))
    for flag, (section, key) in {
        "cfg_mode": ("guidance", "mode"),
        "omega": ("guidance", "omega"),
        "sampler": ("sampler", "kind"),
        "steps": ("sampler", "steps"),
        "num": ("sampler", "n"),
        "cls": ("sampler", "cls"),
    }.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((section, key, value))
    cfg = load_config(args.config, overrides)
    if getattr(args, "omega", None) is not None and getattr(args, "cfg_mode", None) is None \
            and cfg.guidance.mode == "none" and args.command != "bench":
        raise ConfigError("--omega given without a guidance mode; add --cfg-mode standard|scaled")
    return cfg


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _labels(cfg: RunConfig, n: int, num_classes: int) -> np.ndarray:
    if cfg.sampler.cls is not None:
        if not 0 <= cfg.sampler.cls < num_classes:
            raise ConfigError(f"--cls must be in [0, {num_classes})")
        return np.full(n, cfg.sampler.cls, dtype=np.int64)
    return np.arange(n, dtype=np.int64) % num_classes


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    ds = cfg.dataset()
    model = init_model(cfg.model_config(), seed=cfg.seed)
    result = train(model, ds, cfg.train, out_dir=out)
    save_checkpoint(result.model, out / "model")
    write_loss_csv(result.trace, out / "loss.csv")
    print(f"trained {cfg.train.steps} steps; checkpoint {out / 'model'}; final loss {result.trace[-1][1]:.6f}"
          if result.trace else f"0 steps; checkpoint {out / 'model'}")
    return EXIT_OK


def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out is not None or any(o.startswith("run.out=") for o in args.overrides) or args.config is not None:
        return Path(cfg.out)
    return args.ckpt.parent


def cmd_sample(args, cfg: RunConfig) -> int:
    model = load_checkpoint(args.ckpt)
    out = _out_dir(args, cfg)
    spec = cfg.sampler_spec()
    labels = _labels(cfg, cfg.sampler.n, model.num_conditions)
    x = generate(model, spec, labels, cfg.seed)
    if not np.isfinite(x).all():
        raise FloatingPointError("sampler produced non-finite output")
    out.mkdir(parents=True, exist_ok=True)
    with (out / "samples.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x0", "x1", "cls"])
        for (a, b), k in zip(x, labels):
            w.writerow([repr(float(a)), repr(float(b)), int(k)])
    ref = None
    if args.config is not None:
        ref = cfg.dataset().sample(len(labels), np.random.default_rng([cfg.seed, 1]), classes=labels)[0]
    scatter_svg(out / "samples.svg", x, ref, title=spec.label)
    print(f"{len(x)} samples ({spec.label}) -> {out / 'samples.csv'}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    model = load_checkpoint(args.ckpt)
    ds = cfg.dataset()
    if ds.num_classes != model.num_conditions:
        raise ConfigError(f"dataset has {ds.num_classes} classes but the model expects {model.num_conditions}")
    spec = cfg.sampler_spec()
    r = cfg.eval.hist_range
    grid = HistGrid((-r, -r), (r, r), cfg.eval.hist_bins)
    metrics, per_seed = {}, []
    for seed in cfg.eval.seeds:
        x_ref, labels = eval_set(ds, cfg.eval.n, seed)
        x = generate(model, spec, labels, seed)
        ed = energy_distance(x, x_ref)
        kl = histogram_kl(x_ref, x, grid)
        per_seed.append({"seed": seed, "energy_distance": ed, "histogram_kl": kl})
    metrics["energy_distance_mean"] = float(np.mean([p["energy_distance"] for p in per_seed]))
    metrics["histogram_kl_mean"] = float(np.mean([p["histogram_kl"] for p in per_seed]))
    report = {"sampler": spec.label, "nfe_per_sample": spec.expected_nfe(), "metrics": metrics,
              "per_seed": per_seed, "config": cfg.to_dict(), "checkpoint": str(args.ckpt)}
    if not all(np.isfinite(v) for v in metrics.values()):
        raise FloatingPointError("non-finite metric")
    path = _write_json(_out_dir(args, cfg) / "metrics.json", report)
    print(f"energy distance {metrics['energy_distance_mean']:.5f}, histogram KL "
          f"{metrics['histogram_kl_mean']:.5f} -> {path}")
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    model = load_checkpoint(args.ckpt)
    g = GuidanceConfig("scaled", args.omega)
    specs = [
        SamplerSpec("meanflow", 1, g),
        SamplerSpec("meanflow", args.multi_steps, g),
        SamplerSpec("fm_euler", args.multi_steps, g),
    ]
    report = speed_bench(model, specs, batch=args.batch, repeats=args.repeats, seed=cfg.seed)
    one, multi = specs[0].label, specs[1].label
    report.metrics["time_ratio_multi_over_one"] = report.timings[multi]["median_s"] / report.timings[one]["median_s"]
    paths = report.write(_out_dir(args, cfg), "bench")
    for row in report.table:
        print(f"{row['sampler']:<40} nfe={row['nfe']:<4} {row['per_sample_s'] * 1e6:9.2f} us/sample")
    print(f"multi/one-step time ratio {report.metrics['time_ratio_multi_over_one']:.1f} "
          f"[{_kernels.BACKEND}] -> {paths[0]}")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    ds = cfg.dataset()
    out = Path(cfg.out)
    if args.which == "cfg-sweep":
        if args.ckpt is None:
            raise ConfigError("ablate cfg-sweep needs --ckpt")
        model = load_checkpoint(args.ckpt)
        report = cfg_sweep(model, ds, cfg.ablate.omegas, cfg.ablate.modes, kind=cfg.sampler.kind,
                           steps=args.steps or cfg.sampler.steps, n_eval=cfg.eval.n, seeds=cfg.eval.seeds)
        paths = report.write(out, "cfg_sweep")
    else:
        template = TrainConfig.scaled(cfg.ablate.ratio_steps, lr_max=cfg.train.lr_max,
                                      batch_size=cfg.train.batch_size, time_pair=cfg.train.time_pair,
                                      drop_prob=cfg.train.drop_prob)
        report = rt_ratio_ablation(ds, cfg.ablate.ratios, template, cfg.model_config(),
                                   seeds=cfg.ablate.ratio_seeds, n_eval=cfg.eval.n)
        paths = report.write(out, "rt_ratio")
    sys.stdout.write(report.table_csv())
    print(f"-> {', '.join(str(p) for p in paths)}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "bench": cmd_bench, "ablate": cmd_ablate}


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ModelConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
