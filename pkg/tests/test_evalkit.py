import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grpoft.classifier import Architecture, init_params
from grpoft.datagen import Dataset
from grpoft.errors import InputError
from grpoft.evalkit import (ScoreSet, dataset_eer, drift_report, eer, projection_directions,
                            sliced_w1, wasserstein1_1d)

from conftest import perturbed, toy_dataset


def sweep_eer(real, fake):
    """Plain-loop threshold sweep: accept (REAL) when score >= t; interpolate
    between consecutive sweep points at the first FRR >= FAR."""
    ts = sorted(set(real) | set(fake)) + [float("inf")]
    pts = []
    for t in ts:
        far = sum(f >= t for f in fake) / len(fake)
        frr = sum(r < t for r in real) / len(real)
        pts.append((far, frr))
    for i, (far, frr) in enumerate(pts):
        if frr >= far:
            if frr == far or i == 0:
                return far
            f0, r0 = pts[i - 1]
            w = (f0 - r0) / ((f0 - r0) - (far - frr))
            return f0 + w * (far - f0)
    raise AssertionError("sweep never crossed")


def test_eer_perfect_separation():
    assert eer(ScoreSet([0.9, 0.8], [0.1, 0.2]))[0] == 0.0


def test_eer_fully_inverted():
    assert eer(ScoreSet([0.1], [0.9]))[0] == 1.0


def test_eer_interleaved():
    real, fake = [0.8, 0.6, 0.4], [0.7, 0.5, 0.3]
    assert sweep_eer(real, fake) == pytest.approx(1 / 3, abs=1e-15)
    value, threshold = eer(ScoreSet(real, fake))
    assert value == pytest.approx(1 / 3, abs=1e-15) and threshold == 0.6


def test_eer_empty():
    with pytest.raises(InputError):
        eer(ScoreSet([], [1.0]))
    with pytest.raises(InputError):
        eer(ScoreSet([1.0], []))


score_lists = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=15)


@settings(max_examples=300, deadline=None)
@given(real=score_lists, fake=score_lists)
def test_eer_matches_loop_sweep(real, fake):
    value = eer(ScoreSet(real, fake))[0]
    assert 0.0 <= value <= 1.0
    assert value == pytest.approx(sweep_eer(real, fake), abs=1e-12)


def test_eer_monotone_invariance():
    r = np.random.default_rng(0)
    for _ in range(1000):
        n, m = r.integers(1, 20, 2)
        real, fake = r.normal(size=n), r.normal(size=m) + r.normal()
        if r.random() < 0.3:  # include ties
            fake[: m // 2] = np.round(fake[: m // 2], 1)
            real[: n // 2] = np.round(real[: n // 2], 1)
        for f in (np.exp, lambda x: x ** 3 + 2 * x, lambda x: 5 * x - 3):
            a = eer(ScoreSet(real, fake))[0]
            b = eer(ScoreSet(f(real), f(fake)))[0]
            assert abs(a - b) <= 1e-12


def test_eer_swap_symmetry_tie_free():
    r = np.random.default_rng(1)
    for _ in range(500):
        n, m = r.integers(1, 15, 2)
        real, fake = r.normal(size=n), r.normal(size=m) + r.normal()
        e = eer(ScoreSet(real, fake))[0]
        assert eer(ScoreSet(fake, real))[0] == pytest.approx(1 - e, abs=1e-12)


def test_dataset_eer_separated():
    a = Architecture(4, (), "tanh")
    # REAL logit = -x0: toy FAKE samples sit at large x0
    p = np.zeros(a.n_params)
    p[0] = -1.0
    assert dataset_eer(a, p, toy_dataset(200, 4, 0, shift=50.0)) == 0.0


# -- Wasserstein ----------------------------------------------------------------

def test_w1_examples():
    assert wasserstein1_1d([0, 1], [0, 1]) == 0.0
    assert wasserstein1_1d([0], [1]) == 1.0
    assert wasserstein1_1d([0, 2], [1, 3]) == 1.0
    with pytest.raises(InputError):
        wasserstein1_1d([], [1])


def test_w1_unequal_sizes_seeded():
    a, b = np.arange(10.0), np.arange(4.0)
    assert wasserstein1_1d(a, b, seed=3) == wasserstein1_1d(a, b, seed=3)
    assert wasserstein1_1d(np.zeros(7), np.zeros(3)) == 0.0


def test_w1_metric_axioms_exhaustive():
    r = np.random.default_rng(2)
    for n in range(1, 9):
        sets = [r.integers(-3, 4, n).astype(float) for _ in range(6)]
        sets.append(sets[0][::-1].copy())  # same multiset as sets[0]
        for a, b in itertools.product(sets, repeat=2):
            d = wasserstein1_1d(a, b)
            assert d >= 0.0
            assert d == wasserstein1_1d(b, a)
            assert (d == 0.0) == (sorted(a) == sorted(b))
        for a, b, c in itertools.product(sets, repeat=3):
            assert wasserstein1_1d(a, c) <= wasserstein1_1d(a, b) + wasserstein1_1d(b, c) + 1e-12
    assert wasserstein1_1d(sets[0], sets[-1]) == 0.0


def test_sliced_self_and_offset():
    r = np.random.default_rng(3)
    A = r.normal(size=(50, 6))
    assert sliced_w1(A, A, 128, 0) <= 1e-9
    c = np.array([0.5, -1.0, 2.0, 0.0, 0.3, 0.0])
    U = projection_directions(6, 128, 0)
    want = np.mean(np.abs(U @ c))
    assert sliced_w1(A, A + c, 128, 0) == pytest.approx(want, rel=0.05)
    assert np.allclose(np.linalg.norm(U, axis=1), 1.0)


def test_sliced_deterministic_and_checked():
    r = np.random.default_rng(4)
    A, B = r.normal(size=(30, 3)), r.normal(size=(45, 3))
    assert sliced_w1(A, B, 16, 7) == sliced_w1(A, B, 16, 7)
    with pytest.raises(InputError):
        sliced_w1(A, r.normal(size=(5, 4)))
    with pytest.raises(InputError):
        sliced_w1(A, B, 0)


def test_drift_report_reference_self(arch):
    p = perturbed(arch, 0)
    ref = toy_dataset(60, 8, 1, name="ref")
    rep = drift_report(arch, p, [ref, toy_dataset(40, 8, 2, name="t")], ref, 32, 5)
    assert rep.drift["ref"] <= 1e-9
    assert rep.counts == {"ref": 30, "t": 20} and rep.reference_count == 30
    again = drift_report(arch, p, [ref, toy_dataset(40, 8, 2, name="t")], ref, 32, 5)
    assert again.drift == rep.drift


def test_drift_report_needs_fakes(arch):
    ds = toy_dataset(20, 8, 1)
    reals = Dataset(ds.features[ds.labels == 0], ds.labels[ds.labels == 0],
                    ("a",) * 10, "only_real")
    with pytest.raises(InputError, match="only_real"):
        drift_report(arch, init_params(arch, 0), [reals], ds)
