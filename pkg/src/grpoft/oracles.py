"""Brute-force references for the GRPO losses.

``oracle_exact_grpo`` replaces rollout sampling by an exact expectation.
Group advantages depend on the rewards only through the number ``k`` of
correct rollouts, so the expectation is a sum over ``k = 0..G`` with binomial
weights under the old policy. The oracle is written against the
single-sample classifier API and the two-value advantage formulas
``(1 - k/G) / (s + rho)`` and ``-(k/G) / (s + rho)``, not against the batched
loss code it checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .classifier import Architecture, Label, forward, grad_log_prob, init_params
from .datagen import Dataset, Sample
from .errors import InputError
from .objectives import (GrpoConfig, LossValue, grpo_loss, grpo_loss_arrays,
                         grpo_simplified_loss, kl_penalty, sft_loss)
from .rollout import RolloutGroup, batch_advantages, sample_labels_batch

MAX_ORACLE_GROUP = 12


def _other(label: Label) -> Label:
    return Label.FAKE if label == Label.REAL else Label.REAL


def two_value_advantages(k: int, G: int, rho: float, use_negative: bool) -> tuple[float, float]:
    """Advantages ``(A_correct, A_wrong)`` of a group with ``k`` of ``G`` correct."""
    if not use_negative:
        return 1.0, 0.0
    mean = k / G
    denom = math.sqrt(mean * (1.0 - mean)) + rho
    if denom == 0.0:
        return 0.0, 0.0
    return (1.0 - mean) / denom, -mean / denom


def _term(arch, params, old_params, ref_params, x, label, adv, cfg):
    """Per-rollout loss and gradient for one sampled label."""
    lp = math.log(forward(arch, params, x).probs[label])
    g_lp = grad_log_prob(arch, params, x, label)
    if cfg.stop_gradient_ratio:
        ratio = 1.0
        value, grad = -adv, -adv * g_lp
    else:
        ratio = math.exp(lp - math.log(forward(arch, old_params, x).probs[label]))
        unclipped = ratio * adv
        if cfg.use_clipping:
            clipped = min(max(ratio, 1.0 - cfg.clip_epsilon), 1.0 + cfg.clip_epsilon) * adv
        else:
            clipped = unclipped
        if clipped < unclipped:
            value, grad = -clipped, np.zeros_like(g_lp)
        else:
            value, grad = -unclipped, -adv * ratio * g_lp
    if cfg.beta != 0.0:
        kv, kg = _kl_reference(arch, params, ref_params, x, label, cfg.kl_mode)
        value += cfg.beta * kv
        grad = grad + cfg.beta * kg
    return value, grad


def _kl_reference(arch, params, ref_params, x, label, mode):
    p = forward(arch, params, x).probs
    q = forward(arch, ref_params, x).probs
    if mode == "k3_estimator":
        r = q[label] / p[label]
        return r - math.log(r) - 1.0, (1.0 - r) * grad_log_prob(arch, params, x, label)
    value = sum(p[y] * math.log(p[y] / q[y]) for y in Label)
    grad = sum(p[y] * math.log(p[y] / q[y]) * grad_log_prob(arch, params, x, y) for y in Label)
    return value, grad


def oracle_exact_grpo(arch: Architecture, params, old_params, ref_params, sample: Sample,
                      cfg: GrpoConfig) -> LossValue:
    """Exact expectation of the GRPO loss over rollout groups for one input."""
    G = cfg.group_size
    if G > MAX_ORACLE_GROUP:
        raise InputError(f"group_size {G} too large for enumeration (max {MAX_ORACLE_GROUP})")
    x = sample.features
    y = Label(int(sample.label))
    n = _other(y)
    sampler = params if cfg.stop_gradient_ratio else old_params
    q = forward(arch, sampler, x).probs[y]
    value = 0.0
    grad = np.zeros(arch.n_params)
    for k in range(G + 1):
        w = math.comb(G, k) * q ** k * (1.0 - q) ** (G - k)
        if w == 0.0:
            continue
        a_pos, a_neg = two_value_advantages(k, G, cfg.advantage_floor, cfg.use_negative_reward)
        if k:
            v, g = _term(arch, params, old_params, ref_params, x, y, a_pos, cfg)
            value += w * k / G * v
            grad += w * k / G * g
        if G - k:
            v, g = _term(arch, params, old_params, ref_params, x, n, a_neg, cfg)
            value += w * (G - k) / G * v
            grad += w * (G - k) / G * g
    return LossValue(value, grad, {"p_old_correct": q})


def no_negative_identity(arch: Architecture, params, old_params, ref_params, sample: Sample,
                         cfg: GrpoConfig) -> np.ndarray:
    """Closed form ``-p(y|x) grad log p(y|x) + beta grad L_p`` of the expected
    no-negative GRPO gradient (unclipped ratios). ``L_p`` is the penalty's
    expectation over labels drawn from the old policy."""
    x = sample.features
    y = Label(int(sample.label))
    p = forward(arch, params, x).probs
    grad = -p[y] * grad_log_prob(arch, params, x, y)
    if cfg.beta != 0.0:
        q_old = forward(arch, old_params, x).probs
        for lab in Label:
            grad = grad + cfg.beta * q_old[lab] * _kl_reference(
                arch, params, ref_params, x, lab, cfg.kl_mode)[1]
    return grad


def exact_expected_loss(arch: Architecture, params, old_params, ref_params, sample: Sample,
                        cfg: GrpoConfig) -> LossValue:
    """Exact expectation built from the production ``grpo_loss`` by feeding it
    one deterministic group per match count ``k``."""
    G = cfg.group_size
    if G > MAX_ORACLE_GROUP:
        raise InputError(f"group_size {G} too large for enumeration (max {MAX_ORACLE_GROUP})")
    y = Label(int(sample.label))
    sampler = params if cfg.stop_gradient_ratio else old_params
    q = forward(arch, sampler, sample.features).probs[y]
    value, grad = 0.0, np.zeros(arch.n_params)
    for k in range(G + 1):
        w = math.comb(G, k) * q ** k * (1.0 - q) ** (G - k)
        if w == 0.0:
            continue
        labels = [y] * k + [_other(y)] * (G - k)
        group = RolloutGroup.from_labels(0, labels, y, cfg.advantage_floor,
                                         cfg.use_negative_reward)
        lv = grpo_loss(arch, params, old_params, ref_params, [sample], [group], cfg)
        value += w * lv.value
        grad += w * lv.gradient
    return LossValue(value, grad)


@dataclass
class MonteCarloResult:
    group_size: int
    oracle_value: float
    mc_value: float
    standard_error: float
    n_groups: int

    @property
    def z(self) -> float:
        return abs(self.mc_value - self.oracle_value) / self.standard_error

    def within(self, n_se: float = 3.0) -> bool:
        return self.z <= n_se


def monte_carlo_agreement(arch: Architecture, params, old_params, ref_params, sample: Sample,
                          cfg: GrpoConfig, n_groups: int = 100_000, chunk: int = 1000,
                          seed: int = 0) -> MonteCarloResult:
    """Average the sampled loss over ``n_groups`` groups drawn with the
    production sampler; the standard error comes from chunk means."""
    if n_groups % chunk or n_groups < 2 * chunk:
        raise InputError("n_groups must be a multiple of chunk, with at least two chunks")
    oracle = oracle_exact_grpo(arch, params, old_params, ref_params, sample, cfg)
    X = np.repeat(np.atleast_2d(sample.features), chunk, axis=0)
    truth = np.full(chunk, int(sample.label), dtype=np.int64)
    sampler = params if cfg.stop_gradient_ratio else old_params
    p_real = np.full(chunk, forward(arch, sampler, sample.features).probs[Label.REAL])
    means = []
    for c in range(n_groups // chunk):
        keys = [(seed, c, i) for i in range(chunk)]
        labels = sample_labels_batch(p_real, cfg.group_size, keys)
        _, adv = batch_advantages(labels, truth, cfg.advantage_floor, cfg.use_negative_reward)
        lv = grpo_loss_arrays(arch, params, X, labels, adv, cfg,
                              old_params=old_params, ref_params=ref_params)
        means.append(lv.value)
    means = np.asarray(means)
    se = float(means.std(ddof=1) / math.sqrt(len(means)))
    return MonteCarloResult(cfg.group_size, oracle.value, float(means.mean()), se, n_groups)


# -- finite-difference gradient suite ---------------------------------------

FD_STEP = 1e-5

GRADIENT_VARIANTS = (
    "sft",
    "grpo_clipped_k3",
    "grpo_clipped_exact",
    "grpo_unclipped_k3",
    "grpo_unclipped_exact",
    "grpo_s_k3",
    "grpo_s_exact",
    "grpo_no_neg",
    "kl_k3",
    "kl_exact",
)

_ARCHS = (
    Architecture(3, (), "tanh"),
    Architecture(3, (5,), "tanh"),
    Architecture(3, (4, 3), "relu"),
)


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return float(np.max(np.abs(a - n)) / max(float(np.max(np.abs(n))), 1e-8))


def central_difference(f: Callable[[np.ndarray], float], theta, h: float = FD_STEP) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return out


def _near_relu_kink(arch, params, X, margin=1e-4) -> bool:
    if not arch.relu or not arch.hidden_dims:
        return False
    a = X
    off = 0
    dims = arch.dims
    for i in range(len(dims) - 2):
        fi, fo = dims[i], dims[i + 1]
        W = params[off:off + fi * fo].reshape(fi, fo)
        b = params[off + fi * fo:off + fi * fo + fo]
        off += fi * fo + fo
        z = a @ W + b
        if np.any(np.abs(z) < margin):
            return True
        a = np.maximum(z, 0.0)
    return False


def _near_clip_kink(arch, params, old, X, labels, eps, margin=1e-3) -> bool:
    from .classifier import log_probs_batch
    lp, _, _ = log_probs_batch(arch, params, X)
    lo, _, _ = log_probs_batch(arch, old, X)
    rows = np.arange(len(X))[:, None]
    r = np.exp(lp[rows, labels] - lo[rows, labels])
    return bool(np.any(np.abs(r - (1 + eps)) < margin) or np.any(np.abs(r - (1 - eps)) < margin))


@dataclass
class GradientCheck:
    variant: str
    trials: int
    max_relative_error: float
    passed: bool


@dataclass
class GradientReport:
    checks: list[GradientCheck]
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            out.append(f"{status} {c.variant:<22} trials={c.trials} "
                       f"max_rel_err={c.max_relative_error:.3e} tol={self.tolerance:g}")
        return out


def _variant_case(variant: str, rng: np.random.Generator):
    """Draw one random configuration; returns (arch, theta0, analytic, f)
    where ``f(theta)`` is the scalar whose gradient at ``theta0`` the
    analytic gradient must match, or None if the draw sits on a kink."""
    arch = _ARCHS[rng.integers(len(_ARCHS))]
    theta = init_params(arch, int(rng.integers(2**31))) + rng.normal(0.0, 0.5, arch.n_params)
    old = theta + rng.normal(0.0, 0.3, arch.n_params)
    ref = theta + rng.normal(0.0, 0.3, arch.n_params)
    n, G = 3, 4
    X = rng.normal(0.0, 1.0, (n, arch.input_dim))
    truth = rng.integers(0, 2, n)
    if _near_relu_kink(arch, theta, X):
        return None
    inputs = Dataset(X, truth.astype(np.int64), ("t",) * n)

    if variant == "sft":
        return arch, theta, sft_loss(arch, theta, inputs).gradient, \
            lambda t: sft_loss(arch, t, inputs).value
    if variant.startswith("kl_"):
        mode = "k3_estimator" if variant == "kl_k3" else "exact_binary"
        x, lab = X[0], Label(int(truth[0]))
        return arch, theta, kl_penalty(arch, theta, ref, x, lab, mode)[1], \
            lambda t: kl_penalty(arch, t, ref, x, lab, mode)[0]

    labels = rng.integers(0, 2, (n, G))
    mode = "exact_binary" if variant.endswith("_exact") else "k3_estimator"
    cfg = GrpoConfig(group_size=G, beta=float(rng.uniform(0.01, 1.0)), kl_mode=mode,
                     clip_epsilon=0.2, use_clipping="unclipped" not in variant,
                     use_negative_reward=variant != "grpo_no_neg")
    groups = [RolloutGroup.from_labels(i, labels[i], truth[i], cfg.advantage_floor,
                                       cfg.use_negative_reward) for i in range(n)]

    if variant.startswith("grpo_s"):
        scfg = cfg.simplified()
        analytic = grpo_simplified_loss(arch, theta, ref, inputs, groups, scfg).gradient
        # stop-gradient ratio: differentiate the unclipped loss with the
        # denominator frozen at theta0
        fcfg = replace(cfg, use_clipping=False)
        theta0 = theta.copy()
        return arch, theta, analytic, \
            lambda t: grpo_loss(arch, t, theta0, ref, inputs, groups, fcfg).value
    if cfg.use_clipping and _near_clip_kink(arch, theta, old, X, labels, cfg.clip_epsilon):
        return None
    analytic = grpo_loss(arch, theta, old, ref, inputs, groups, cfg).gradient
    return arch, theta, analytic, \
        lambda t: grpo_loss(arch, t, old, ref, inputs, groups, cfg).value


def check_gradients(trials: int = 100, tolerance: float = 1e-4, seed: int = 0,
                    corrupt: Callable[[str, np.ndarray], np.ndarray] | None = None,
                    variants=GRADIENT_VARIANTS) -> GradientReport:
    """Central finite differences for every loss variant.

    ``corrupt(variant, grad)`` may alter the analytic gradient before the
    comparison; it exists for negative-control tests.
    """
    if trials < 1:
        raise InputError("trials must be at least 1")
    checks = []
    for v_index, variant in enumerate(variants):
        if variant not in GRADIENT_VARIANTS:
            raise InputError(f"unknown gradient variant {variant!r}")
        rng = np.random.default_rng([seed, v_index])
        worst = 0.0
        done = 0
        while done < trials:
            case = _variant_case(variant, rng)
            if case is None:
                continue
            arch, theta, analytic, f = case
            numeric = central_difference(f, theta)
            if np.max(np.abs(numeric)) < 1e-6:
                continue  # too flat for a meaningful relative error
            if corrupt is not None:
                analytic = corrupt(variant, np.array(analytic))
            worst = max(worst, relative_error(analytic, numeric))
            done += 1
        checks.append(GradientCheck(variant, trials, worst, worst < tolerance))
    return GradientReport(checks, tolerance)
