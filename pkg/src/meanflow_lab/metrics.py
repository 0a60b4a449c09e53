"""Two-sample metrics, sampler timing and the guidance / r!=t ablation sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .data import ToyDataset
from .network import VelocityModel, init_model
from .sampling import CountingVelocity, GuidanceConfig, SamplerSpec, TimePairConfig
from .trainer import TrainConfig, train

DEFAULT_OMEGAS = (1.0, 1.5, 2.5, 3.5, 4.5)
DEFAULT_RATIOS = (0.1, 0.5, 0.9)


def _points(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] == 0:
        raise ValueError("sample sets must be non-empty (n, d) arrays")
    return A


def energy_distance(A, B) -> float:
    """V-statistic energy distance 2E|a-b| - E|a-a'| - E|b-b'| over all pairs."""
    A, B = _points(A), _points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch {A.shape[1]} vs {B.shape[1]}")
    mpd = _kernels.mean_pairwise_distance
    ab = mpd(A, B) if A.shape[0] <= B.shape[0] else mpd(B, A)
    return max(0.0, 2.0 * ab - mpd(A, A) - mpd(B, B))


@dataclass(frozen=True)
class HistGrid:
    lo: tuple = (-4.0, -4.0)
    hi: tuple = (4.0, 4.0)
    bins: int = 40
    smoothing: float = 1e-6

    def __post_init__(self):
        if self.bins < 1 or not all(h > l for l, h in zip(self.lo, self.hi)):
            raise ValueError("degenerate histogram grid")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be positive")


def histogram_kl(A, B, grid: HistGrid = HistGrid()) -> float:
    """KL(P_A || P_B) between additively smoothed 2D histograms on a shared grid.

    Points outside the grid are dropped before normalisation.
    """
    A, B = _points(A), _points(B)
    if A.shape[1] != 2 or B.shape[1] != 2:
        raise ValueError("histogram_kl is defined for 2D points")
    args = (grid.lo[0], grid.hi[0], grid.lo[1], grid.hi[1], grid.bins)
    p = _kernels.hist2d(A, *args) + grid.smoothing
    q = _kernels.hist2d(B, *args) + grid.smoothing
    p /= p.sum()
    q /= q.sum()
    return max(0.0, float((p * np.log(p / q)).sum()))


@dataclass
class RunReport:
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    nfe: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    table: list = field(default_factory=list)  # rows for the CSV view

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        for k, v in self.metrics.items():
            if not math.isfinite(v):
                raise FloatingPointError(f"metric {k} is not finite: {v}")
        for k, v in self.nfe.items():
            if int(v) != v:
                raise ValueError(f"evaluation count {k} is not an integer")

    def to_dict(self) -> dict:
        return {"config": self.config, "metrics": self.metrics, "timings": self.timings,
                "nfe": self.nfe, "seeds": list(self.seeds), "table": self.table}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table_csv(self) -> str:
        if not self.table:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.table[0]), lineterminator="\n")
        w.writeheader()
        for row in self.table:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    def write(self, out_dir, stem: str) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"{stem}.json"]
        paths[0].write_text(self.to_json())
        if self.table:
            paths.append(out_dir / f"{stem}.csv")
            paths[1].write_text(self.table_csv())
        return paths


# -- timing --------------------------------------------------------------------


def _timed(fn, warmup: int, repeats: int) -> list[float]:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def speed_bench(model, specs, batch: int = 256, repeats: int = 5, warmup: int = 2, seed: int = 0) -> RunReport:
    """Median wall-clock per generated sample and exact NFE for each sampler spec."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((batch, model.data_dim))
    c = np.zeros(batch, dtype=np.int64)
    report = RunReport(config={"batch": batch, "repeats": repeats, "warmup": warmup,
                               "backend": _kernels.BACKEND}, seeds=[seed])
    for spec in specs:
        counter = CountingVelocity(model)
        spec.run(counter, eps, c)
        report.nfe[spec.label] = counter.calls
        times = _timed(lambda: spec.run(model, eps, c), warmup, repeats)
        med = statistics.median(times)
        report.timings[spec.label] = {"median_s": med, "per_sample_s": med / batch, "all_s": times}
        report.table.append({"sampler": spec.label, "nfe": counter.calls,
                             "median_s": med, "per_sample_s": med / batch})
    return report


# -- sweeps --------------------------------------------------------------------


def eval_set(ds: ToyDataset, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Held-out (x, labels) for one evaluation seed, independent of training draws."""
    return ds.sample(n, np.random.default_rng([seed, 1]))


def generate(model, spec: SamplerSpec, labels: np.ndarray, seed: int) -> np.ndarray:
    eps = np.random.default_rng([seed, 2]).standard_normal((len(labels), model.data_dim))
    return spec.run(model, eps, labels)


def cfg_sweep(
    model: VelocityModel,
    ds: ToyDataset,
    omegas=DEFAULT_OMEGAS,
    modes=("standard", "scaled"),
    kind: str = "meanflow",
    steps: int = 1,
    n_eval: int = 2000,
    seeds=(0, 1, 2, 3, 4),
) -> RunReport:
    """Energy distance to held-out data for every (seed, omega, mode) cell."""
    report = RunReport(config={"omegas": list(omegas), "modes": list(modes), "sampler": kind,
                               "steps": steps, "n_eval": n_eval, "dataset": ds.describe()},
                       seeds=list(seeds))
    for seed in seeds:
        x_ref, labels = eval_set(ds, n_eval, seed)
        for omega in omegas:
            for mode in modes:
                spec = SamplerSpec(kind, steps, GuidanceConfig(mode, omega))
                ed = energy_distance(generate(model, spec, labels, seed), x_ref)
                report.metrics[f"ed/seed{seed}/w{omega:g}/{mode}"] = ed
                report.table.append({"seed": seed, "omega": float(omega), "mode": mode, "energy_distance": ed})
    report.table.sort(key=lambda r: (r["seed"], r["omega"], r["mode"]))
    return report


def rt_ratio_ablation(
    ds: ToyDataset,
    ratios=DEFAULT_RATIOS,
    template: TrainConfig | None = None,
    model_config: VelocityModel | None = None,
    seeds=(0, 1, 2),
    n_eval: int = 2000,
) -> RunReport:
    """Train one model per (ratio, seed) and score its unguided one-step samples."""
    template = template or TrainConfig()
    model_config = model_config or VelocityModel(num_conditions=ds.num_classes)
    spec = SamplerSpec("meanflow", 1)
    report = RunReport(config={"ratios": list(ratios), "steps": template.steps, "n_eval": n_eval,
                               "dataset": ds.describe()}, seeds=list(seeds))
    for ratio in ratios:
        for seed in seeds:
            tp = replace(template.time_pair, neq_ratio=ratio) if isinstance(template.time_pair, TimePairConfig) \
                else TimePairConfig(neq_ratio=ratio)
            cfg = replace(template, time_pair=tp, seed=seed)
            model = train(init_model(model_config, seed=seed), ds, cfg).model
            x_ref, labels = eval_set(ds, n_eval, seed)
            ed = energy_distance(generate(model, spec, labels, seed), x_ref)
            report.metrics[f"ed/ratio{ratio:g}/seed{seed}"] = ed
            report.table.append({"ratio": float(ratio), "seed": seed, "energy_distance": ed})
    return report


# -- plots ---------------------------------------------------------------------


def scatter_svg(path, generated, reference=None, title: str = "") -> Path:
    """Scatter of generated (and optionally reference) points, without timestamps."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "meanflow-lab"}):
        fig, ax = plt.subplots(figsize=(4, 4))
        if reference is not None:
            ax.scatter(reference[:, 0], reference[:, 1], s=2, c="0.7", label="data")
        ax.scatter(generated[:, 0], generated[:, 1], s=2, c="tab:blue", label="generated")
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.legend(loc="upper right", markerscale=4, fontsize=7)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
