"""Fine-tuning loops: SFT, GRPO and its variants, and SFT-then-GRPO staging.

Three parameter sets are tracked during GRPO training: the trained
parameters, the old snapshot used for sampling and the ratio denominator,
and the frozen reference for the KL penalty (the initial parameters).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import Architecture, forward_batch, log_probs_batch
from .datagen import Dataset
from .errors import InputError, TrainingError
from .evalkit import dataset_eer
from .objectives import GrpoConfig, grpo_loss_arrays, sft_loss
from .rollout import batch_advantages, sample_labels_batch

ALGOS = ("sft", "grpo", "grpo_s", "grpo_no_neg", "sft_then_grpo", "sft_then_grpo_s")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def optimizer_step(params, gradient, state: AdamState, learning_rate: float,
                   step: int | None = None) -> tuple[np.ndarray, AdamState]:
    """One Adam update (beta1=0.9, beta2=0.999, eps=1e-8). Pure: returns new
    arrays and a new state."""
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != np.shape(params):
        raise InputError("gradient and parameter layouts differ")
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient", step=step if step is not None else state.t)
    t = state.t + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * g * g
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    new = params - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new, AdamState(m, v, t)


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "grpo"
    max_epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    validation_interval_steps: int = 50
    seed: int = 0
    grpo: GrpoConfig = field(default_factory=GrpoConfig)

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise InputError(f"algo must be one of {ALGOS}")
        if self.max_epochs < 0 or self.batch_size < 1 or self.validation_interval_steps < 1:
            raise InputError("max_epochs, batch_size and validation_interval_steps out of range")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "grpo"}
        d["grpo"] = self.grpo.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        grpo = GrpoConfig(**d.pop("grpo", {}))
        return cls(grpo=grpo, **d)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    params: np.ndarray
    step: int
    validation_eer: float


@dataclass
class HistoryEntry:
    step: int
    train_loss: float
    validation_eer: float
    stage: str = ""
    diagnostics: dict = field(default_factory=dict)


@dataclass(eq=False)
class TrainRecord:
    history: list[HistoryEntry]
    checkpoints: list[Checkpoint]
    selected: Checkpoint
    wall_seconds: float = 0.0
    snapshot_log: list = field(default_factory=list)

    def same_as(self, other: "TrainRecord") -> bool:
        """Equality ignoring wall-clock time."""
        def rows(rec):
            return [(h.step, repr(h.train_loss), repr(h.validation_eer), h.stage)
                    for h in rec.history]
        return (
            rows(self) == rows(other)
            and self.selected.step == other.selected.step
            and np.array_equal(self.selected.params, other.selected.params)
        )

    def log_lines(self) -> list[str]:
        """Training log: a tab-separated header then one line per validation."""
        lines = ["stage\tstep\ttrain_loss\tvalidation_eer"]
        for h in self.history:
            lines.append(f"{h.stage}\t{h.step}\t{h.train_loss!r}\t{h.validation_eer!r}")
        return lines


def select_best(history: list[Checkpoint]) -> Checkpoint:
    """Lowest validation EER; earliest step on ties."""
    if not history:
        raise InputError("no checkpoints to select from")
    best = history[0]
    for c in history[1:]:
        if c.validation_eer < best.validation_eer:
            best = c
    return best


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0x5EED]).permutation(n)


def _grpo_cfg_for(algo: str, cfg: GrpoConfig) -> GrpoConfig:
    if algo in ("grpo_s", "sft_then_grpo_s"):
        return cfg.simplified()
    if algo == "grpo_no_neg":
        return replace(cfg, use_negative_reward=False)
    return cfg


def _validate(arch, params, val, step, loss, stage, diag, history, checkpoints):
    v = dataset_eer(arch, params, val)
    history.append(HistoryEntry(step, loss, v, stage, diag))
    checkpoints.append(Checkpoint(params.copy(), step, v))


def _run_stage(arch, init, train, val, cfg: TrainConfig, stage: str, kind: str,
               observer=None):
    """Train one stage. ``kind`` is "sft" or a GRPO algo name."""
    params = np.array(init, dtype=np.float64, copy=True)
    ref = params.copy()
    old = params.copy()
    state = AdamState.fresh(arch.n_params)
    history: list[HistoryEntry] = []
    checkpoints: list[Checkpoint] = []
    snapshot_log = []
    n = len(train)
    B = cfg.batch_size
    gcfg = _grpo_cfg_for(kind, cfg.grpo) if kind != "sft" else None
    step = 0
    loss = float("nan")
    diag: dict = {}
    _validate(arch, params, val, 0, loss, stage, {}, history, checkpoints)
    if observer is not None:
        observer(step, params, old, ref)

    for epoch in range(cfg.max_epochs):
        order = _epoch_order(n, cfg.seed, epoch)
        for start in range(0, n, B):
            idx = order[start:start + B]
            X = train.features[idx]
            y = train.labels[idx]
            if kind == "sft":
                lv = sft_loss(arch, params, train.subset(idx))
            else:
                _, old_probs, _ = forward_batch(arch, old, X)
                keys = [(cfg.seed, epoch, int(i)) for i in idx]
                labels = sample_labels_batch(old_probs[:, 0], gcfg.group_size, keys)
                rewards, adv = batch_advantages(labels, y, gcfg.advantage_floor,
                                                gcfg.use_negative_reward)
                old_logp = None if gcfg.stop_gradient_ratio else np.log(old_probs)
                ref_logp = None
                if gcfg.beta != 0.0:
                    ref_logp, _, _ = log_probs_batch(arch, ref, X)
                lv = grpo_loss_arrays(arch, params, X, labels, adv, gcfg,
                                      old_logp=old_logp, ref_logp=ref_logp, rewards=rewards)
            params, state = optimizer_step(params, lv.gradient, state, cfg.learning_rate,
                                           step=step + 1)
            step += 1
            loss = lv.value
            diag = lv.diagnostics
            if gcfg is not None and gcfg.stop_gradient_ratio:
                old = params  # sampling policy is the current one, every batch
            elif gcfg is not None and step % gcfg.old_refresh_steps == 0:
                old = params.copy()
                snapshot_log.append(step)
            if observer is not None:
                observer(step, params, old, ref)
            if step % cfg.validation_interval_steps == 0:
                _validate(arch, params, val, step, loss, stage, dict(diag), history, checkpoints)
    if history[-1].step != step:
        _validate(arch, params, val, step, loss, stage, dict(diag), history, checkpoints)
    return history, checkpoints, snapshot_log


def _check_splits(arch, splits):
    for key in ("train", "validation"):
        ds = splits.get(key)
        if ds is None or len(ds) == 0:
            raise InputError(f"split {key!r} must be nonempty")
        if ds.dim != arch.input_dim:
            raise InputError(f"split {key!r} has feature length {ds.dim}, expected {arch.input_dim}")
    val = splits["validation"]
    if np.all(val.labels == val.labels[0]):
        raise InputError("validation split needs both REAL and FAKE samples")


def train(arch: Architecture, init, splits: dict[str, Dataset], cfg: TrainConfig,
          observer=None) -> TrainRecord:
    """Run ``cfg.algo`` from ``init``.

    ``observer(step, params, old_params, ref_params)`` is called after every
    optimizer step (and once at step 0) when given.
    """
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (arch.n_params,):
        raise InputError("init parameters do not match the architecture")
    _check_splits(arch, splits)
    if cfg.algo.startswith("sft_then_"):
        return run_stage_pipeline(arch, init, splits, cfg, observer=observer)
    t0 = time.perf_counter()
    kind = "sft" if cfg.algo == "sft" else cfg.algo
    history, checkpoints, snaps = _run_stage(arch, init, splits["train"], splits["validation"],
                                             cfg, cfg.algo, kind, observer)
    return TrainRecord(history, checkpoints, select_best(checkpoints),
                       time.perf_counter() - t0, snaps)


def run_stage_pipeline(arch: Architecture, init, splits: dict[str, Dataset], cfg: TrainConfig,
                       stage2_epochs: int | None = None, observer=None) -> TrainRecord:
    """SFT, then GRPO (or simplified GRPO) from the SFT-selected checkpoint,
    which also becomes the frozen reference. Each stage runs for at most
    ``max_epochs``."""
    if not cfg.algo.startswith("sft_then_"):
        raise InputError("run_stage_pipeline needs algo sft_then_grpo or sft_then_grpo_s")
    _check_splits(arch, splits)
    t0 = time.perf_counter()
    tr, val = splits["train"], splits["validation"]
    h1, c1, _ = _run_stage(arch, init, tr, val, cfg, "sft", "sft")
    best1 = select_best(c1)
    kind = "grpo_s" if cfg.algo.endswith("_s") else "grpo"
    cfg2 = cfg if stage2_epochs is None else replace(cfg, max_epochs=stage2_epochs)
    cfg2 = replace(cfg2, seed=cfg.seed + 1_000_003)
    h2, c2, snaps = _run_stage(arch, best1.params, tr, val, cfg2, kind, kind, observer)
    selected = select_best(c2)
    return TrainRecord(h1 + h2, c1 + c2, selected, time.perf_counter() - t0, snaps)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
