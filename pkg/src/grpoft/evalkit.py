"""Equal error rate and embedding drift."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .classifier import Architecture, embeddings, scores_batch
from .datagen import Dataset
from .errors import InputError

DEFAULT_PROJECTIONS = 128


@dataclass(frozen=True)
class ScoreSet:
    real_scores: Sequence[float]
    fake_scores: Sequence[float]


def eer(scores: ScoreSet) -> tuple[float, float]:
    """Return ``(eer, threshold)``.

    Decision rule: score >= threshold means REAL. Thresholds sweep the pooled
    scores in increasing order (then +inf); FAR is the fraction of fake scores
    at or above the threshold and FRR the fraction of real scores below it.
    At the first sweep point where FRR >= FAR both curves are interpolated
    linearly, in sweep-index space, to their crossing.
    """
    real = np.asarray(scores.real_scores, dtype=np.float64)
    fake = np.asarray(scores.fake_scores, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise InputError("EER needs nonempty real and fake score lists")
    n, m = real.size, fake.size
    thr = np.unique(np.concatenate([real, fake]))
    # integer error counts: reals rejected (FRR * n), fakes accepted (FAR * m)
    rej = np.append(np.searchsorted(np.sort(real), thr, side="left"), n).tolist()
    acc = np.append(m - np.searchsorted(np.sort(fake), thr, side="left"), 0).tolist()
    thr = np.append(thr, np.inf)
    # FAR - FRR scaled by n * m; nonincreasing along the sweep, <= 0 at +inf
    diff = [a * n - r * m for a, r in zip(acc, rej)]
    k = next(i for i, d in enumerate(diff) if d <= 0)
    if diff[k] == 0 or k == 0:
        return acc[k] / m, float(thr[k])
    d0, d1 = diff[k - 1], diff[k]
    # crossing of the two linear pieces, computed exactly and rounded once
    value = Fraction(d0 * acc[k] - d1 * acc[k - 1], m * (d0 - d1))
    t = d0 / (d0 - d1)
    threshold = thr[k - 1] if not np.isfinite(thr[k]) else thr[k - 1] + t * (thr[k] - thr[k - 1])
    return float(value), float(threshold)


def dataset_eer(arch: Architecture, params, ds: Dataset) -> float:
    s = scores_batch(arch, params, ds.features)
    return eer(ScoreSet(s[ds.labels == 0], s[ds.labels == 1]))[0]


def _subsample(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(x) == n:
        return x
    return x[np.sort(rng.choice(len(x), size=n, replace=False))]


def wasserstein1_1d(a, b, seed: int = 0) -> float:
    """Exact W1 between equal-size empirical measures: mean absolute gap of
    the sorted samples. A larger set is first subsampled (seeded) to the
    smaller size."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InputError("wasserstein1_1d needs nonempty inputs")
    if a.size != b.size:
        rng = np.random.default_rng(seed)
        n = min(a.size, b.size)
        a, b = _subsample(a, n, rng), _subsample(b, n, rng)
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def projection_directions(dim: int, n_proj: int, seed: int) -> np.ndarray:
    """``n_proj`` unit vectors, uniform on the sphere, as rows."""
    u = np.random.default_rng(seed).standard_normal((n_proj, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def sliced_w1(emb_a, emb_b, projections: int = DEFAULT_PROJECTIONS, seed: int = 0) -> float:
    A = np.atleast_2d(np.asarray(emb_a, dtype=np.float64))
    B = np.atleast_2d(np.asarray(emb_b, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise InputError(f"embedding dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    if len(A) == 0 or len(B) == 0:
        raise InputError("sliced_w1 needs nonempty inputs")
    if projections < 1:
        raise InputError("projections must be positive")
    rng = np.random.default_rng([seed, 1])
    n = min(len(A), len(B))
    A, B = _subsample(A, n, rng), _subsample(B, n, rng)
    U = projection_directions(A.shape[1], projections, seed)
    pa = np.sort(A @ U.T, axis=0)
    pb = np.sort(B @ U.T, axis=0)
    return float(np.mean(np.mean(np.abs(pa - pb), axis=0)))


@dataclass
class DriftReport:
    drift: dict[str, float]
    counts: dict[str, int]
    reference_count: int
    projections: int
    seed: int
    extra: dict = field(default_factory=dict)


def drift_report(arch: Architecture, params, test_sets: Sequence[Dataset], reference: Dataset,
                 projections: int = DEFAULT_PROJECTIONS, seed: int = 0) -> DriftReport:
    """Sliced W1 between the FAKE-sample embeddings of each test set and
    those of the reference set."""
    ref_fake = reference.fakes()
    if len(ref_fake) == 0:
        raise InputError(f"dataset {reference.name or 'reference'!r} has no FAKE samples")
    ref_emb = embeddings(arch, params, ref_fake.features)
    drift, counts = {}, {}
    for i, ds in enumerate(test_sets):
        name = ds.name or f"set{i}"
        fk = ds.fakes()
        if len(fk) == 0:
            raise InputError(f"dataset {name!r} has no FAKE samples")
        drift[name] = sliced_w1(embeddings(arch, params, fk.features), ref_emb, projections, seed)
        counts[name] = len(fk)
    return DriftReport(drift, counts, len(ref_fake), projections, seed)
