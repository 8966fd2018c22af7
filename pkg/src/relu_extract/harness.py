"""Experiment driver: build targets, extract under a budget, score against ground truth, sweep and aggregate."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .deeper import ExtractionConfig, extract_network
from .isomorphism import align
from .layer1 import Layer1Config, recover_layer1
from .model import RecoveredModel
from .network import ConfigError, Network, init_he
from .oracle import BudgetExhausted, Oracle, QueryBudget
from .probe import ProbeConfig

logger = logging.getLogger(__name__)

CSV_SCHEMA = "relu-extract-sweep/1"
CSV_FIELDS = ["schema", "kind", "config_hash", "sweep_value", "seed", "widths", "queries", "queries_per_parameter",
              "log_err_w_l1", "log_err_b_l1", "log_err_w_l2", "log_err_b_l2", "recovered_l1", "recovered_l2",
              "functional_max", "wall_time", "partial", "missing", "error"]


@dataclass
class ExperimentConfig:
    widths: list[int] = field(default_factory=lambda: [10, 10, 10, 2])
    stage: str = "layer1"                  # layer1 | full
    trained: bool = False
    n_points: int = 1000                   # memorization task size
    epochs: int = 1000
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    sweep_layer: int | None = None         # hidden layer (1-based) whose width is swept
    sweep_values: list[int] = field(default_factory=list)
    budget: int | None = None
    probe: dict = field(default_factory=dict)   # overrides of ProbeConfig fields
    samples: int = 1000                    # points for the functional comparison
    use_width_hint: bool = True
    parallelism: int = 1
    out_dir: str = "results"

    def __post_init__(self):
        if self.stage not in ("layer1", "full"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if len(self.widths) < 3:
            raise ConfigError("widths need input, at least one hidden layer and output")
        if self.sweep_layer is not None and not 1 <= self.sweep_layer <= len(self.widths) - 2:
            raise ConfigError(f"sweep_layer {self.sweep_layer} is not a hidden layer")
        unknown = set(self.probe) - set(ProbeConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown probe settings {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"bad config {path}: {exc}") from exc

    def hash(self) -> str:
        """Hash of everything that affects results (output location and parallelism excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("parallelism")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(**self.probe)

    def widths_for(self, value: int | None) -> list[int]:
        w = list(self.widths)
        if self.sweep_layer is not None and value is not None:
            w[self.sweep_layer] = int(value)
        return w


@dataclass
class RunRecord:
    config_hash: str
    sweep_value: int | None
    seed: int
    widths: list[int]
    layers: list[dict] = field(default_factory=list)
    query_count: int = 0
    queries_per_parameter: float = math.nan
    functional_max: float | None = None
    functional_scale: float | None = None
    wall_time: float = 0.0
    partial: bool = False
    missing: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)

    def layer_value(self, layer: int, key: str) -> float:
        for la in self.layers:
            if la["layer"] == layer:
                return la[key]
        return math.nan


def build_target(cfg: ExperimentConfig, widths: list[int], seed: int) -> Network:
    net = init_he(widths, seed)
    if cfg.trained:
        from .training import train_memorization
        net = train_memorization(net, n_points=cfg.n_points, epochs=cfg.epochs, seed=seed).net
    return net


def extract(oracle: Oracle, cfg: ExperimentConfig, widths: list[int], seed: int) -> RecoveredModel:
    pc = cfg.probe_config()
    hint = widths[1:-1] if cfg.use_width_hint else None
    if cfg.stage == "layer1":
        rng = np.random.default_rng(seed)
        l1 = Layer1Config(target=hint[0] if hint else None, probe=pc)
        model = RecoveredModel(oracle.input_dim, [])
        try:
            est, _ = recover_layer1(oracle, l1, rng)
            model.complete = True
        except BudgetExhausted as exc:
            est = exc.partial[0]
            model.notes.append(str(exc))
        model.layers.append(est)
        model.query_count = oracle.query_count
        model.queries_by_stage["layer1"] = oracle.query_count
        return model
    ecfg = ExtractionConfig(widths_hint=hint, layer1=Layer1Config(probe=pc), seed=seed)
    return extract_network(oracle, ecfg)


def run_one(cfg: ExperimentConfig, value: int | None, seed: int) -> RunRecord:
    widths = cfg.widths_for(value)
    rec = RunRecord(cfg.hash(), value, seed, widths)
    t0 = time.perf_counter()
    try:
        net = build_target(cfg, widths, seed)
        oracle = Oracle.from_network(net, QueryBudget(cfg.budget))
        model = extract(oracle, cfg, widths, seed)
        rep = align(model, net, n_samples=cfg.samples if cfg.stage == "full" else 0, seed=seed)
        rec.layers = [asdict(la) for la in rep.layers]
        rec.query_count = model.query_count
        rec.queries_per_parameter = rep.queries_per_parameter or math.nan
        rec.functional_max, rec.functional_scale = rep.functional_max, rep.functional_scale
        rec.partial = not model.complete
        rec.missing = int(sum(L.missing.sum() for L in model.layers))
    except Exception as exc:  # one failed run must not stop the sweep
        logger.exception("run value=%s seed=%d failed", value, seed)
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.partial = True
    rec.wall_time = time.perf_counter() - t0
    return rec


def _run_args(args):
    return run_one(*args)


def run_sweep(cfg: ExperimentConfig) -> list[RunRecord]:
    """One run per (sweep value, seed), in that order; runs share nothing."""
    values = cfg.sweep_values if cfg.sweep_layer is not None and cfg.sweep_values else [None]
    jobs = [(cfg, v, s) for v in values for s in cfg.seeds]
    if not jobs:
        return []
    if cfg.parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            return list(pool.map(_run_args, jobs))
    return [run_one(*j) for j in jobs]


# -- reporting ---------------------------------------------------------------

def _row(rec: RunRecord) -> dict:
    return {
        "schema": CSV_SCHEMA, "kind": "run", "config_hash": rec.config_hash, "sweep_value": rec.sweep_value,
        "seed": rec.seed, "widths": "-".join(map(str, rec.widths)), "queries": rec.query_count,
        "queries_per_parameter": rec.queries_per_parameter,
        "log_err_w_l1": rec.layer_value(1, "weight_log_error"), "log_err_b_l1": rec.layer_value(1, "bias_log_error"),
        "log_err_w_l2": rec.layer_value(2, "weight_log_error"), "log_err_b_l2": rec.layer_value(2, "bias_log_error"),
        "recovered_l1": _recovered(rec, 1), "recovered_l2": _recovered(rec, 2),
        "functional_max": rec.functional_max, "wall_time": rec.wall_time, "partial": int(rec.partial),
        "missing": rec.missing, "error": rec.error or "",
    }


def _recovered(rec: RunRecord, layer: int) -> float:
    for la in rec.layers:
        if la["layer"] == layer:
            return sum(la["matched"]) / la["n_true"]
    return math.nan


NUMERIC = ["queries", "queries_per_parameter", "log_err_w_l1", "log_err_b_l1", "log_err_w_l2", "log_err_b_l2",
           "recovered_l1", "recovered_l2", "functional_max", "wall_time", "partial", "missing"]


def aggregate(records: list[RunRecord]) -> list[dict]:
    """Mean and sample standard deviation per sweep value, over successful runs."""
    out = []
    values = list(dict.fromkeys(r.sweep_value for r in records))
    for v in values:
        rows = [_row(r) for r in records if r.sweep_value == v and r.error is None]
        if not rows:
            continue
        for kind, fn in (("mean", np.nanmean), ("sd", lambda a: np.nanstd(a, ddof=1) if len(a) > 1 else 0.0)):
            agg = {"schema": CSV_SCHEMA, "kind": kind, "config_hash": rows[0]["config_hash"], "sweep_value": v,
                   "seed": "", "widths": rows[0]["widths"], "error": ""}
            for k in NUMERIC:
                vals = np.array([np.nan if row[k] is None else float(row[k]) for row in rows])
                agg[k] = float(fn(vals)) if np.isfinite(vals).any() else math.nan
            out.append(agg)
    return out


def write_csv(records: list[RunRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for rec in records:
            w.writerow(_row(rec))
        for row in aggregate(records):
            w.writerow(row)
    return path


def append_log(records: list[RunRecord], path) -> Path:
    """Append-only JSON-lines log of raw records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), default=_json_default) + "\n")
    return path


def read_log(path) -> list[RunRecord]:
    return [RunRecord.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def plot_sweep(records: list[RunRecord], path, layer: int = 1, xlabel: str = "width") -> Path:
    """Queries per parameter and log normalized error against the swept value, mean with +-1 sd band."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = aggregate(records)
    means = [r for r in agg if r["kind"] == "mean"]
    sds = {r["sweep_value"]: r for r in agg if r["kind"] == "sd"}
    x = np.array([r["sweep_value"] if r["sweep_value"] is not None else 0 for r in means], dtype=float)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    panels = [("queries_per_parameter", "queries per parameter"), (f"log_err_w_l{layer}", "log normalized error")]
    for ax, (key, label) in zip(axes, panels):
        m = np.array([r[key] for r in means])
        s = np.array([sds[r["sweep_value"]][key] for r in means])
        ax.plot(x, m, marker="o", color="tab:blue", label="weights" if "err" in key else None)
        ax.fill_between(x, m - s, m + s, color="tab:blue", alpha=0.25)
        if "err" in key:
            mb = np.array([r[f"log_err_b_l{layer}"] for r in means])
            sb = np.array([sds[r["sweep_value"]][f"log_err_b_l{layer}"] for r in means])
            ax.plot(x, mb, marker="s", color="tab:red", label="biases")
            ax.fill_between(x, mb - sb, mb + sb, color="tab:red", alpha=0.25)
            ax.legend()
        ax.set_xlabel(xlabel)
        ax.set_ylabel(label)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def report(records: list[RunRecord], cfg: ExperimentConfig) -> dict[str, Path]:
    """Write CSV, raw log and figure under ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    h = cfg.hash()
    paths = {"csv": write_csv(records, out / f"sweep-{h}.csv"), "log": append_log(records, out / "runs.jsonl")}
    (out / f"config-{h}.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    paths["config"] = out / f"config-{h}.json"
    if any(r.error is None for r in records):
        layer = cfg.sweep_layer or 1
        paths["figure"] = plot_sweep(records, out / f"sweep-{h}.svg", layer=layer,
                                     xlabel=f"width of layer {cfg.sweep_layer}" if cfg.sweep_layer else "run")
    return paths
