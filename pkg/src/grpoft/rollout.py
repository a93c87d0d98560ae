"""Group sampling from the old policy and 0/1 rewards.

Random streams are Philox (counter-based) generators keyed by an integer
tuple, typically ``(seed, epoch, sample_index)``. Streams for distinct keys
are independent, so sampling order never changes the result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .classifier import Architecture, Label, forward_batch
from .datagen import Sample
from .errors import InputError
from .objectives import group_advantages


def stream(key) -> np.random.Generator:
    if isinstance(key, (int, np.integer)):
        key = (int(key),)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def reward(sampled: Label, truth: Label) -> float:
    return 1.0 if int(sampled) == int(truth) else 0.0


@dataclass(frozen=True)
class RolloutGroup:
    input_index: int
    sampled_labels: tuple[Label, ...]
    rewards: tuple[float, ...]
    mean_reward: float
    std_reward: float
    advantages: tuple[float, ...]

    @classmethod
    def from_labels(cls, input_index, labels, truth, rho=1e-5, use_negative=True):
        labels = tuple(Label(int(l)) for l in labels)
        r = np.array([reward(l, truth) for l in labels])
        adv = group_advantages(r, rho, use_negative)
        return cls(input_index, labels, tuple(r.tolist()), float(r.mean()), float(r.std()),
                   tuple(adv.tolist()))


def draw_labels(p_real: float, G: int, key) -> np.ndarray:
    """G independent labels, REAL with probability ``p_real``."""
    u = stream(key).random(G)
    return np.where(u < p_real, int(Label.REAL), int(Label.FAKE))


def sample_group(arch: Architecture, old_params, sample: Sample, G: int, rng_seed,
                 rho: float = 1e-5, use_negative: bool = True,
                 input_index: int = 0) -> RolloutGroup:
    if G < 1:
        raise InputError("group size must be at least 1")
    _, probs, _ = forward_batch(arch, old_params, sample.features)
    labels = draw_labels(probs[0, Label.REAL], G, rng_seed)
    return RolloutGroup.from_labels(input_index, labels, sample.label, rho, use_negative)


def sample_labels_batch(p_real: np.ndarray, G: int, keys: Sequence) -> np.ndarray:
    """Label matrix ``(len(keys), G)``; row ``i`` uses stream ``keys[i]``."""
    out = np.empty((len(keys), G), dtype=np.int64)
    for i, key in enumerate(keys):
        out[i] = draw_labels(p_real[i], G, key)
    return out


def batch_advantages(labels: np.ndarray, truth: np.ndarray, rho: float,
                     use_negative: bool) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rewards and advantages for a label matrix; row-wise
    identical to :func:`group_advantages`."""
    rewards = (labels == truth[:, None]).astype(np.float64)
    if not use_negative:
        return rewards, rewards.copy()
    mean = rewards.mean(axis=1, keepdims=True)
    std = rewards.std(axis=1, keepdims=True)
    denom = std + rho
    with np.errstate(invalid="ignore", divide="ignore"):
        adv = np.where(denom > 0, (rewards - mean) / np.where(denom > 0, denom, 1.0), 0.0)
    return rewards, adv
