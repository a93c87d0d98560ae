"""Two-class MLP detector with analytic score-function gradients.

The model maps a feature vector through zero or more hidden layers to two
logits ordered ``(REAL, FAKE)``. Parameters live in one flat float64 vector;
see :func:`layout` for the ordering.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InputError

PROB_FLOOR = 1e-12

CKPT_MAGIC = b"GRPOCKPT"
CKPT_VERSION = 1


class Label(enum.IntEnum):
    REAL = 0
    FAKE = 1

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, token: str) -> "Label":
        # strict: only the uppercase tokens are accepted
        try:
            return cls[token]
        except KeyError:
            raise InputError(f"unknown label token {token!r}") from None


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 8
    hidden_dims: tuple[int, ...] = (16,)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1:
            raise InputError("input_dim must be positive")
        if any(h < 1 for h in self.hidden_dims):
            raise InputError("hidden_dims must be positive")
        if self.activation not in ("tanh", "relu"):
            raise InputError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, 2)

    @property
    def n_params(self) -> int:
        d = self.dims
        return sum(a * b + b for a, b in zip(d[:-1], d[1:]))

    @property
    def relu(self) -> bool:
        return self.activation == "relu"

    def descriptor(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "activation": self.activation,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "Architecture":
        return cls(int(d["input_dim"]), tuple(d["hidden_dims"]), d["activation"])


def layout(arch: Architecture) -> list[tuple[str, int, tuple[int, ...]]]:
    """Describe the flat parameter vector as ``(name, offset, shape)`` blocks.

    Layers appear in input-to-output order; each contributes ``W{l}`` of shape
    ``(fan_in, fan_out)`` (row-major) then ``b{l}`` of shape ``(fan_out,)``.
    Output columns are ordered REAL, FAKE.
    """
    blocks = []
    off = 0
    d = arch.dims
    for li, (fan_in, fan_out) in enumerate(zip(d[:-1], d[1:])):
        blocks.append((f"W{li}", off, (fan_in, fan_out)))
        off += fan_in * fan_out
        blocks.append((f"b{li}", off, (fan_out,)))
        off += fan_out
    return blocks


def init_params(arch: Architecture, seed: int) -> np.ndarray:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.n_params)
    for name, off, shape in layout(arch):
        if name.startswith("W"):
            bound = 1.0 / math.sqrt(shape[0])
            size = shape[0] * shape[1]
            params[off:off + size] = rng.uniform(-bound, bound, size=size)
    return params


@dataclass(frozen=True)
class ForwardResult:
    logits: np.ndarray
    probs: np.ndarray
    embedding: np.ndarray = field(repr=False)


def _check(arch: Architecture, params, X) -> tuple[np.ndarray, np.ndarray]:
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.shape != (arch.n_params,):
        raise InputError(f"expected {arch.n_params} parameters, got {params.shape}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise InputError(f"features must have length {arch.input_dim}, got shape {X.shape}")
    return params, X


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def forward_batch(arch: Architecture, params, X):
    """Batched forward pass. Returns ``(logits, probs, hidden)``."""
    params, X = _check(arch, params, X)
    logits, hidden = kernels.mlp_forward(params, arch.dims, arch.relu, X)
    return logits, softmax_probs(logits), hidden


def embeddings(arch: Architecture, params, X) -> np.ndarray:
    """Last hidden activation per row; raw features for a linear model."""
    params, X = _check(arch, params, X)
    if not arch.hidden_dims:
        return X.copy()
    _, hidden = kernels.mlp_forward(params, arch.dims, arch.relu, X)
    return hidden[:, hidden.shape[1] - arch.hidden_dims[-1]:]


def log_probs_batch(arch: Architecture, params, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(log_probs, probs, hidden)`` for a batch."""
    _, probs, hidden = forward_batch(arch, params, X)
    return np.log(probs), probs, hidden


def backward_batch(arch: Architecture, params, X, hidden, dlogits) -> np.ndarray:
    params, X = _check(arch, params, X)
    dlogits = np.ascontiguousarray(dlogits, dtype=np.float64)
    return kernels.mlp_backward(params, arch.dims, arch.relu, X, hidden, dlogits)


def grad_from_logp_coef(arch, params, X, probs, hidden, coef) -> np.ndarray:
    """Gradient of ``sum_{n,y} coef[n,y] * log p(y|x_n)``.

    Uses d log p(y|x) / d logits = onehot(y) - p.
    """
    dlogits = coef - coef.sum(axis=1, keepdims=True) * probs
    return backward_batch(arch, params, X, hidden, dlogits)


def forward(arch: Architecture, params, features) -> ForwardResult:
    logits, probs, hidden = forward_batch(arch, params, features)
    if arch.hidden_dims:
        emb = hidden[0, hidden.shape[1] - arch.hidden_dims[-1]:]
    else:
        emb = np.asarray(features, dtype=np.float64).copy()
    return ForwardResult(logits[0], probs[0], emb)


def log_prob(arch: Architecture, params, features, label: Label) -> float:
    return float(np.log(forward(arch, params, features).probs[int(label)]))


def grad_log_prob(arch: Architecture, params, features, label: Label) -> np.ndarray:
    _, probs, hidden = forward_batch(arch, params, features)
    coef = np.zeros((1, 2))
    coef[0, int(label)] = 1.0
    return grad_from_logp_coef(arch, params, features, probs, hidden, coef)


def score(arch: Architecture, params, features) -> float:
    """REAL logit; higher means more likely bona fide."""
    return float(forward(arch, params, features).logits[Label.REAL])


def scores_batch(arch: Architecture, params, X) -> np.ndarray:
    logits, _, _ = forward_batch(arch, params, X)
    return logits[:, Label.REAL].copy()


# -- checkpoint files -------------------------------------------------------
#
# magic "GRPOCKPT" | u32 version | u32 descriptor length | descriptor (UTF-8
# JSON: architecture plus "step" and "validation_eer") | u64 parameter count |
# parameters as little-endian float64 in layout order.

def save_checkpoint(path, arch: Architecture, params, step: int = 0,
                    validation_eer: float | None = None) -> None:
    params = np.asarray(params, dtype="<f8")
    if params.shape != (arch.n_params,):
        raise InputError("parameter count does not match architecture")
    desc = dict(arch.descriptor(), step=int(step), validation_eer=validation_eer)
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.tobytes())


def load_checkpoint(path) -> tuple[Architecture, np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise InputError(f"{path}: not a checkpoint file")
    version, n_desc = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    desc = json.loads(data[pos:pos + n_desc].decode("utf-8"))
    pos += n_desc
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    arch = Architecture.from_descriptor(desc)
    if count != arch.n_params or len(data) - pos != 8 * count:
        raise InputError(f"{path}: parameter count mismatch")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    meta = {"step": desc.get("step", 0), "validation_eer": desc.get("validation_eer")}
    return arch, params, meta
