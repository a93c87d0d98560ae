import numpy as np
import pytest

from grpoft.classifier import Architecture, Label, init_params
from grpoft.datagen import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def arch():
    return Architecture()


@pytest.fixture
def linear_arch():
    return Architecture(2, (), "tanh")


def linear_params(w_real, w_fake, b_real=0.0, b_fake=0.0):
    """Parameter vector of a 2-input linear model from its weight columns."""
    W = np.column_stack([w_real, w_fake])
    return np.concatenate([W.ravel(), [b_real, b_fake]])


def perturbed(arch, seed, scale=0.5):
    r = np.random.default_rng(seed)
    return init_params(arch, seed) + r.normal(0.0, scale, arch.n_params)


def toy_dataset(n, dim, seed, shift=3.0, name="toy"):
    """Balanced two-class Gaussian set; FAKE is shifted along axis 0."""
    r = np.random.default_rng(seed)
    labels = np.array([Label.REAL, Label.FAKE] * (n // 2), dtype=np.int64)
    X = r.normal(size=(n, dim))
    X[labels == Label.FAKE, 0] += shift
    return Dataset(X, labels, ("toy",) * n, name)


# -- acceptance criteria reporting ---------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, title, passed, detail)`` records one acceptance line and
    returns ``passed`` so the test can assert on it."""
    def record(n, title, passed, detail=""):
        ACCEPTANCE[n] = (title, bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {title}"
                                    + (f" ({detail})" if detail else ""))
