"""Experiment grid: post-train once, fine-tune every configuration for every
round, evaluate EER and drift, and emit machine/human reports."""

from __future__ import annotations

import copy
import json
import math
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .classifier import Architecture, init_params
from .datagen import BenchmarkSpec, Dataset, default_spec, generate_benchmark, load_spec
from .errors import InputError, TrainingError
from .evalkit import dataset_eer, drift_report
from .objectives import GrpoConfig
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

BASELINE_LABEL = "post-trained (no fine-tuning)"
REPORT_VERSION = 1


@dataclass
class ExperimentGrid:
    runs: list[tuple[str, TrainConfig]]
    eval_sets: list[str] | None = None
    rounds: int = 3
    base_seed: int = 0
    arch: Architecture = field(default_factory=Architecture)
    posttrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        algo="sft", max_epochs=30, batch_size=32, learning_rate=3e-3,
        validation_interval_steps=200))
    drift_projections: int = 128
    drift_seed: int = 0
    benchmark: str | dict = "default"
    # round r trains with seed base_seed + seed_stride * r; 0 repeats one seed
    seed_stride: int = 1

    def __post_init__(self):
        names = [n for n, _ in self.runs]
        if len(set(names)) != len(names):
            raise InputError("run names must be unique")
        if self.rounds < 1:
            raise InputError("rounds must be at least 1")

    def config_echo(self) -> dict:
        return {
            "rounds": self.rounds,
            "base_seed": self.base_seed,
            "seed_stride": self.seed_stride,
            "architecture": self.arch.descriptor(),
            "posttrain": self.posttrain.to_dict(),
            "runs": [{"name": n, **c.to_dict()} for n, c in self.runs],
            "drift": {"projections": self.drift_projections, "seed": self.drift_seed},
        }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def grid_from_dict(d: dict) -> ExperimentGrid:
    defaults = d.get("defaults", {})
    runs = []
    for r in d["runs"]:
        r = dict(r)
        name = r.pop("name")
        runs.append((name, TrainConfig.from_dict(_merge(defaults, r))))
    post = TrainConfig.from_dict(dict({"algo": "sft"}, **d.get("posttrain", {})))
    arch = d.get("architecture")
    drift = d.get("drift", {})
    return ExperimentGrid(
        runs=runs,
        eval_sets=d.get("eval_sets"),
        rounds=int(d.get("rounds", 3)),
        base_seed=int(d.get("base_seed", 0)),
        arch=Architecture.from_descriptor(arch) if arch else Architecture(),
        posttrain=post,
        drift_projections=int(drift.get("projections", 128)),
        drift_seed=int(drift.get("seed", 0)),
        benchmark=d.get("benchmark", "default"),
        seed_stride=int(d.get("seed_stride", 1)),
    )


def load_grid(path) -> ExperimentGrid:
    path = Path(path)
    with open(path) as fh:
        grid = grid_from_dict(yaml.safe_load(fh))
    if isinstance(grid.benchmark, str) and grid.benchmark != "default":
        bm = Path(grid.benchmark)
        grid.benchmark = str(bm if bm.is_absolute() else path.parent / bm)
    return grid


def default_grid() -> ExperimentGrid:
    return load_grid(Path(__file__).with_name("default_grid.yaml"))


def resolve_benchmark(grid: ExperimentGrid) -> BenchmarkSpec:
    if isinstance(grid.benchmark, dict):
        return BenchmarkSpec.from_dict(grid.benchmark)
    if grid.benchmark == "default":
        return default_spec()
    return load_spec(grid.benchmark)


@dataclass
class GridReport:
    config: dict
    eval_sets: list[str]
    in_domain_sets: list[str]
    ood_sets: list[str]
    rows: dict[str, dict]
    baseline: dict | None = None

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "config": self.config,
            "eval_sets": self.eval_sets,
            "in_domain_sets": self.in_domain_sets,
            "ood_sets": self.ood_sets,
            "baseline": self.baseline,
            "rows": self.rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridReport":
        return cls(d["config"], d["eval_sets"], d["in_domain_sets"], d["ood_sets"], d["rows"],
                   d.get("baseline"))

    @property
    def failed(self) -> list[str]:
        return [name for name, row in self.rows.items() if row["status"] != "ok"]


def posttrain_model(grid: ExperimentGrid, data: dict[str, Dataset]) -> np.ndarray:
    """The shared starting point for all fine-tuning runs."""
    arch = grid.arch
    pt = data["posttrain_train"]
    cfg = replace(grid.posttrain, seed=grid.base_seed)
    rec = train(arch, init_params(arch, grid.base_seed), {"train": pt, "validation": pt}, cfg)
    return rec.selected.params


def _mean(xs):
    # shifted around the first value so that identical rounds average exactly
    if not xs:
        return None
    x0 = float(xs[0])
    return x0 + math.fsum(float(x) - x0 for x in xs) / len(xs)


def _evaluate(grid, params, data, sets):
    eers = {s: dataset_eer(grid.arch, params, data[s]) for s in sets}
    rep = drift_report(grid.arch, params, [data[s] for s in sets], data["drift_reference"],
                       grid.drift_projections, grid.drift_seed)
    return eers, rep.drift


def _row(eer_rounds, drift_rounds, in_sets, ood_sets, status="ok", extra=None):
    eer = {s: _mean(v) for s, v in eer_rounds.items()}
    row = {
        "status": status,
        "eer": eer,
        "eer_rounds": eer_rounds,
        "in_domain_avg": _mean([eer[s] for s in in_sets]) if eer else None,
        "ood_avg": _mean([eer[s] for s in ood_sets]) if eer else None,
        "drift": {s: _mean(v) for s, v in drift_rounds.items()},
    }
    if extra:
        row.update(extra)
    return row


def run_grid(grid: ExperimentGrid, spec: BenchmarkSpec | None = None) -> GridReport:
    """Post-train once, then fine-tune each run for ``grid.rounds`` rounds with
    seed ``base_seed + seed_stride * round``. A failing cell is reported and skipped."""
    spec = spec if spec is not None else resolve_benchmark(grid)
    data = generate_benchmark(spec)
    in_sets = ["in_domain_test"]
    ood_sets = [s for s in spec.split_names() if s.startswith("ood_")]
    sets = grid.eval_sets or in_sets + ood_sets
    unknown = [s for s in sets if s not in data]
    if unknown:
        raise InputError(f"unknown evaluation sets: {unknown}")
    in_sets = [s for s in sets if s in in_sets]
    ood_sets = [s for s in sets if s in ood_sets]

    post = posttrain_model(grid, data)
    splits = {"train": data["finetune_train"], "validation": data["finetune_val"]}
    eers, drift = _evaluate(grid, post, data, sets)
    baseline = _row({s: [v] for s, v in eers.items()}, {s: [v] for s, v in drift.items()},
                    in_sets, ood_sets)
    rows = {}

    for name, cfg in grid.runs:
        eer_rounds = {s: [] for s in sets}
        drift_rounds = {s: [] for s in sets}
        steps, diags = [], []
        status = "ok"
        error = None
        for rnd in range(grid.rounds):
            try:
                rec = train(grid.arch, post, splits, replace(cfg, seed=grid.base_seed + grid.seed_stride * rnd))
            except (TrainingError, InputError, FloatingPointError) as e:
                status, error = "failed", f"round {rnd}: {e}"
                log.error("run %s failed: %s", name, error)
                break
            e_r, d_r = _evaluate(grid, rec.selected.params, data, sets)
            for s in sets:
                eer_rounds[s].append(e_r[s])
                drift_rounds[s].append(d_r[s])
            steps.append(rec.selected.step)
            last = rec.history[-1]
            diags.append({"final_train_loss": last.train_loss, **last.diagnostics})
        if status != "ok":
            rows[name] = {"status": status, "error": error, "eer": None, "eer_rounds": None,
                          "in_domain_avg": None, "ood_avg": None, "drift": None}
            continue
        rows[name] = _row(eer_rounds, drift_rounds, in_sets, ood_sets,
                          extra={"selected_steps": steps, "diagnostics": diags})
    return GridReport(grid.config_echo(), sets, in_sets, ood_sets, rows, baseline)


# -- report formats ---------------------------------------------------------

def _clean(obj):
    # JSON has no NaN; emit null instead so the machine format stays standard
    if isinstance(obj, float):
        return None if obj != obj else obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def machine_report(report: GridReport) -> str:
    return json.dumps(_clean(report.to_dict()), indent=2, allow_nan=False) + "\n"


def parse_machine_report(text: str) -> GridReport:
    return GridReport.from_dict(json.loads(text))


def _pct(v):
    return "failed" if v is None else f"{100.0 * v:.2f}"


def _eer_cells(row, cols, width):
    cells = []
    for c in cols:
        if row["status"] != "ok":
            v = None
        elif c == "in.ave":
            v = row["in_domain_avg"]
        elif c == "ood.ave":
            v = row["ood_avg"]
        else:
            v = row["eer"][c]
        cells.append(_pct(v).rjust(width))
    return "".join(cells)


def _drift_cells(row, cols, width):
    if row["status"] != "ok":
        return "".join("failed".rjust(width) for _ in cols)
    return "".join(f"{row['drift'][c]:.4f}".rjust(width) for c in cols)


def human_report(report: GridReport) -> str:
    """Aligned tables: one row per run with the EER (%) of every test set and
    the in-domain and out-of-domain averages, then the drift per test set.
    The model before fine-tuning is listed below each table."""
    cols = report.in_domain_sets + ["in.ave"] + report.ood_sets + ["ood.ave"]
    names = list(report.rows) + ([BASELINE_LABEL] if report.baseline else [])
    name_w = max(len("run"), *(len(n) for n in names))
    w = max(8, *(len(c) for c in cols)) + 1
    rule = "-" * (name_w + w * len(cols))
    lines = ["Test set EERs (%)", "", "run".ljust(name_w) + "".join(c.rjust(w) for c in cols)]
    lines += [n.ljust(name_w) + _eer_cells(r, cols, w) for n, r in report.rows.items()]
    if report.baseline:
        lines += [rule, BASELINE_LABEL.ljust(name_w) + _eer_cells(report.baseline, cols, w)]
    dcols = report.eval_sets
    lines += ["", "Drift (sliced W1 of FAKE embeddings against the reference set)", "",
              "run".ljust(name_w) + "".join(c.rjust(w) for c in dcols)]
    lines += [n.ljust(name_w) + _drift_cells(r, dcols, w) for n, r in report.rows.items()]
    if report.baseline:
        lines += ["-" * (name_w + w * len(dcols)),
                  BASELINE_LABEL.ljust(name_w) + _drift_cells(report.baseline, dcols, w)]
    return "\n".join(lines) + "\n"


def emit_report(report: GridReport, out_dir, formats=("machine", "human"),
                stem: str = "grid_report") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "machine":
            path = out_dir / f"{stem}.json"
            path.write_text(machine_report(report))
        elif fmt == "human":
            path = out_dir / f"{stem}.txt"
            path.write_text(human_report(report))
        else:
            raise InputError(f"unknown report format {fmt!r}")
        written.append(path)
    return written


__all__ = [
    "ExperimentGrid", "GridReport", "GrpoConfig", "run_grid", "emit_report", "machine_report",
    "parse_machine_report", "human_report", "load_grid", "default_grid", "grid_from_dict",
    "posttrain_model",
]
