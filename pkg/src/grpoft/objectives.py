"""Losses and gradients for SFT and GRPO-style fine-tuning.

Every loss here is a weighted sum of log-probabilities of the classifier, so
each one is assembled as a coefficient matrix ``coef[n, y]`` over
``log p(y|x_n)`` and pushed through a single backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .classifier import Architecture, grad_from_logp_coef, log_probs_batch
from .datagen import as_dataset
from .errors import InputError

KL_MODES = ("k3_estimator", "exact_binary")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 64
    beta: float = 0.04
    clip_epsilon: float = 0.2
    advantage_floor: float = 1e-5
    use_negative_reward: bool = True
    use_clipping: bool = True
    stop_gradient_ratio: bool = False
    kl_mode: str = "k3_estimator"
    old_refresh_steps: int = 1000

    def __post_init__(self):
        if self.group_size < 1:
            raise InputError("group_size must be positive")
        if self.beta < 0:
            raise InputError("beta must be nonnegative")
        if self.clip_epsilon <= 0:
            raise InputError("clip_epsilon must be positive")
        if self.advantage_floor < 0:
            raise InputError("advantage_floor must be nonnegative")
        if self.kl_mode not in KL_MODES:
            raise InputError(f"kl_mode must be one of {KL_MODES}")
        if self.old_refresh_steps < 1:
            raise InputError("old_refresh_steps must be positive")
        if self.stop_gradient_ratio and self.use_clipping:
            # the stop-gradient variant never clips
            object.__setattr__(self, "use_clipping", False)

    def simplified(self) -> "GrpoConfig":
        return replace(self, stop_gradient_ratio=True, use_clipping=False)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def sft_loss(arch: Architecture, params, batch) -> LossValue:
    """Mean negative log-likelihood of the ground-truth labels."""
    ds = as_dataset(batch)
    n = len(ds)
    if n == 0:
        raise InputError("sft_loss needs a nonempty batch")
    logp, probs, hidden = log_probs_batch(arch, params, ds.features)
    rows = np.arange(n)
    value = -float(np.mean(logp[rows, ds.labels]))
    coef = np.zeros((n, 2))
    coef[rows, ds.labels] = -1.0 / n
    grad = grad_from_logp_coef(arch, params, ds.features, probs, hidden, coef)
    return LossValue(value, grad, {"mean_nll": value})


def group_advantages(rewards: Sequence[float], rho: float = 1e-5,
                     use_negative: bool = True) -> np.ndarray:
    """Group-normalized advantages ``(r - mean) / (std + rho)``.

    ``std`` is the population standard deviation. With ``use_negative=False``
    the advantage is the raw 0/1 reward. A group with zero spread and
    ``rho == 0`` gets all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise InputError("rewards must be nonempty")
    if not use_negative:
        return r.copy()
    centered = r - r.mean()
    denom = r.std() + rho
    if denom == 0.0:
        return np.zeros_like(r)
    return centered / denom


def kl_penalty(arch: Architecture, params, ref_params, features, sampled_label,
               mode: str = "k3_estimator") -> tuple[float, np.ndarray]:
    """KL penalty toward the frozen reference; gradient w.r.t. ``params`` only.

    ``k3_estimator``: ``r - log r - 1`` with ``r = p_ref(y~|x) / p(y~|x)``.
    ``exact_binary``: ``sum_y p(y|x) log(p(y|x) / p_ref(y|x))``.
    """
    if mode not in KL_MODES:
        raise InputError(f"kl mode must be one of {KL_MODES}")
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    logp, probs, hidden = log_probs_batch(arch, params, X)
    logq, _, _ = log_probs_batch(arch, ref_params, X)
    coef = np.zeros((1, 2))
    if mode == "k3_estimator":
        y = int(sampled_label)
        log_r = logq[0, y] - logp[0, y]
        r = math.exp(log_r)
        value = r - log_r - 1.0
        coef[0, y] = 1.0 - r
    else:
        p = np.exp(logp[0])
        value = float(np.sum(p * (logp[0] - logq[0])))
        coef[0] = p * (logp[0] - logq[0] + 1.0)
    grad = grad_from_logp_coef(arch, params, X, probs, hidden, coef)
    return float(value), grad


def _group_arrays(groups, n_inputs):
    if len(groups) != n_inputs:
        raise InputError(f"{len(groups)} rollout groups for {n_inputs} inputs")
    labels = np.ascontiguousarray([[int(l) for l in g.sampled_labels] for g in groups],
                                  dtype=np.int64)
    adv = np.ascontiguousarray([list(g.advantages) for g in groups], dtype=np.float64)
    rewards = np.asarray([list(g.rewards) for g in groups], dtype=np.float64)
    if labels.ndim != 2 or adv.shape != labels.shape:
        raise InputError("all rollout groups must have the same size")
    return labels, adv, rewards


def grpo_loss_arrays(arch, params, X, labels, adv, cfg: GrpoConfig, *,
                     old_logp=None, ref_logp=None, old_params=None, ref_params=None,
                     rewards=None) -> LossValue:
    """Array-level GRPO loss; the trainer calls this directly.

    ``labels`` and ``adv`` have shape ``(n_inputs, G)``. Old/reference
    log-probabilities may be passed precomputed, otherwise they are computed
    from ``old_params`` / ``ref_params``.
    """
    logp, probs, hidden = log_probs_batch(arch, params, X)
    stop = cfg.stop_gradient_ratio
    if old_logp is None:
        if stop:
            old_logp = logp
        else:
            old_logp, _, _ = log_probs_batch(arch, old_params, X)
    use_kl = cfg.beta != 0.0
    if use_kl and ref_logp is None:
        ref_logp, _, _ = log_probs_batch(arch, ref_params, X)
    if not use_kl:
        ref_logp = logp  # unread by the kernel
    kl_mode = kernels.KL_K3 if cfg.kl_mode == "k3_estimator" else kernels.KL_EXACT
    surr, kl_sum, coef, n_clip = kernels.grpo_terms(
        np.ascontiguousarray(logp), np.ascontiguousarray(old_logp),
        np.ascontiguousarray(ref_logp), labels, adv, cfg.clip_epsilon, cfg.beta,
        cfg.use_clipping, stop, kl_mode)
    m = labels.size
    value = (-surr + cfg.beta * kl_sum) / m
    grad = grad_from_logp_coef(arch, params, X, probs, hidden, coef / m)
    diag = {
        "mean_reward": float(np.mean(rewards)) if rewards is not None else float("nan"),
        "mean_advantage": float(np.mean(adv)),
        "mean_kl": kl_sum / m if use_kl else 0.0,
        "clip_fraction": n_clip / m,
    }
    return LossValue(float(value), grad, diag)


def grpo_loss(arch: Architecture, params, old_params, ref_params, inputs, groups,
              cfg: GrpoConfig) -> LossValue:
    """Negated clipped surrogate plus ``beta`` times the mean KL penalty.

    Averaged over every (input, rollout) pair. With ``stop_gradient_ratio``
    the ratio's denominator is the current policy with gradients stopped,
    so its value is 1 and ``old_params`` is ignored.
    """
    ds = as_dataset(inputs)
    labels, adv, rewards = _group_arrays(groups, len(ds))
    return grpo_loss_arrays(arch, params, ds.features, labels, adv, cfg,
                            old_params=old_params, ref_params=ref_params, rewards=rewards)


def grpo_simplified_loss(arch: Architecture, params, ref_params, inputs, groups,
                         cfg: GrpoConfig) -> LossValue:
    if not cfg.stop_gradient_ratio or cfg.use_clipping:
        raise InputError("simplified GRPO needs stop_gradient_ratio=True and no clipping")
    return grpo_loss(arch, params, params, ref_params, inputs, groups, cfg)

