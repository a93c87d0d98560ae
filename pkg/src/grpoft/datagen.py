"""Seeded synthetic domain-shift benchmark and dataset files.

Every domain has class-conditional isotropic Gaussian mixtures. Each split is
drawn from its own random stream keyed by ``(seed, crc32(split name))``, so
resizing one split leaves the others untouched.
"""

from __future__ import annotations

import json
import math
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .classifier import Label
from .errors import InputError


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: Label
    domain: str

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.label == other.label and self.domain == other.domain
                and np.array_equal(self.features, other.features))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of samples; ``labels`` holds Label ints."""

    features: np.ndarray
    labels: np.ndarray
    domains: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        if f.ndim != 2:
            f = f.reshape(len(self.labels), -1)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "domains", tuple(self.domains))
        if not (len(f) == len(self.labels) == len(self.domains)):
            raise InputError("features, labels and domains must have equal length")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> Sample:
        return Sample(self.features[i].copy(), Label(int(self.labels[i])), self.domains[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.features.shape == other.features.shape
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and self.domains == other.domains)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx],
                       tuple(self.domains[i] for i in idx), self.name)

    def fakes(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == Label.FAKE))

    @classmethod
    def from_samples(cls, samples: Iterable[Sample], name: str = "") -> "Dataset":
        samples = list(samples)
        if not samples:
            return cls(np.zeros((0, 0)), np.zeros(0, dtype=np.int64), (), name)
        feats = np.stack([np.asarray(s.features, dtype=np.float64) for s in samples])
        return cls(feats, [int(s.label) for s in samples], [s.domain for s in samples], name)


def as_dataset(inputs) -> Dataset:
    if isinstance(inputs, Dataset):
        return inputs
    if isinstance(inputs, Sample):
        return Dataset.from_samples([inputs])
    return Dataset.from_samples(inputs)


# -- benchmark spec ---------------------------------------------------------

@dataclass
class Component:
    mean: list[float]
    scale: float = 1.0
    weight: float = 1.0


@dataclass
class DomainSpec:
    real: list[Component]
    fake: list[Component]


SPLIT_KEYS = ("posttrain_train", "finetune_train", "finetune_val",
              "in_domain_test", "ood_test", "drift_reference")


@dataclass
class BenchmarkSpec:
    input_dim: int
    domains: dict[str, DomainSpec]
    finetune_domain: str
    ood_domains: list[str]
    reference_domain: str
    posttrain_weights: dict[str, float]
    sizes: dict[str, int]
    real_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1:
            raise InputError("input_dim: must be positive")
        if not 0.0 < self.real_fraction < 1.0:
            raise InputError("real_fraction: must lie in (0, 1)")
        for key in SPLIT_KEYS:
            if int(self.sizes.get(key, 0)) < 1:
                raise InputError(f"sizes.{key}: must be a positive integer")
        names = [self.finetune_domain, self.reference_domain, *self.ood_domains,
                 *self.posttrain_weights]
        for n in names:
            if n not in self.domains:
                raise InputError(f"domains.{n}: undefined domain")
        if not self.ood_domains:
            raise InputError("ood_domains: at least one required")
        _check_weights("posttrain_weights", list(self.posttrain_weights.values()))
        for dname, dom in self.domains.items():
            for cls_name, comps in (("real", dom.real), ("fake", dom.fake)):
                where = f"domains.{dname}.{cls_name}"
                if not comps:
                    raise InputError(f"{where}: empty mixture")
                _check_weights(where, [c.weight for c in comps])
                for c in comps:
                    if c.scale <= 0:
                        raise InputError(f"{where}.scale: must be positive")
                    if len(c.mean) != self.input_dim:
                        raise InputError(f"{where}.mean: length must equal input_dim")

    def split_names(self) -> list[str]:
        return (["posttrain_train", "finetune_train", "finetune_val", "in_domain_test"]
                + [ood_split_name(d) for d in self.ood_domains] + ["drift_reference"])

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "seed": self.seed,
            "real_fraction": self.real_fraction,
            "finetune_domain": self.finetune_domain,
            "ood_domains": list(self.ood_domains),
            "reference_domain": self.reference_domain,
            "posttrain_weights": dict(self.posttrain_weights),
            "sizes": dict(self.sizes),
            "domains": {
                name: {cls_name: [{"mean": [float(v) for v in c.mean], "scale": c.scale,
                                   "weight": c.weight} for c in comps]
                       for cls_name, comps in (("real", d.real), ("fake", d.fake))}
                for name, d in self.domains.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkSpec":
        dim = int(d["input_dim"])

        def comp(c):
            mean = c.get("mean", [0.0] * dim)
            if isinstance(mean, dict):  # sparse {axis: value}
                dense = [0.0] * dim
                for k, v in mean.items():
                    dense[int(k)] = float(v)
                mean = dense
            return Component([float(v) for v in mean], float(c.get("scale", 1.0)),
                             float(c.get("weight", 1.0)))

        try:
            spec = cls(
                input_dim=dim,
                domains={name: DomainSpec([comp(c) for c in dd["real"]],
                                          [comp(c) for c in dd["fake"]])
                         for name, dd in d["domains"].items()},
                finetune_domain=d["finetune_domain"],
                ood_domains=list(d["ood_domains"]),
                reference_domain=d["reference_domain"],
                posttrain_weights={k: float(v) for k, v in d["posttrain_weights"].items()},
                sizes={k: int(v) for k, v in d["sizes"].items()},
                real_fraction=float(d.get("real_fraction", 0.5)),
                seed=int(d.get("seed", 0)),
            )
        except KeyError as e:
            raise InputError(f"{e.args[0]}: missing field") from None
        spec.validate()
        return spec


def _check_weights(where, weights):
    if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
        raise InputError(f"{where}: weights must be nonnegative and sum to 1")


def ood_split_name(domain: str) -> str:
    return f"ood_{domain}"


def load_spec(path) -> BenchmarkSpec:
    with open(path) as fh:
        return BenchmarkSpec.from_dict(yaml.safe_load(fh))


def dump_spec(spec: BenchmarkSpec, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(spec.to_dict(), fh, sort_keys=False, default_flow_style=None)


def default_spec(seed: int = 0) -> BenchmarkSpec:
    """The calibrated desk-scale benchmark used by the default grid."""
    path = Path(__file__).with_name("default_benchmark.yaml")
    spec = load_spec(path)
    spec.seed = seed
    return spec


# -- generation -------------------------------------------------------------

def split_rng(seed: int, split: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(split.encode())]))


def _draw(rng, comps: Sequence[Component], n: int, dim: int) -> np.ndarray:
    if n == 0:
        return np.zeros((0, dim))
    which = rng.choice(len(comps), size=n, p=[c.weight for c in comps])
    means = np.array([c.mean for c in comps])[which]
    scales = np.array([c.scale for c in comps])[which]
    return means + scales[:, None] * rng.standard_normal((n, dim))


def _generate_split(spec: BenchmarkSpec, split: str, size: int,
                    domain_weights: dict[str, float]) -> Dataset:
    rng = split_rng(spec.seed, split)
    n_real = int(math.floor(size * spec.real_fraction))
    counts = {Label.REAL: n_real, Label.FAKE: size - n_real}
    names = list(domain_weights)
    probs = np.array([domain_weights[n] for n in names])
    feats, labels, domains = [], [], []
    for label, n in counts.items():
        dom_idx = rng.choice(len(names), size=n, p=probs) if len(names) > 1 else np.zeros(n, int)
        for di, dname in enumerate(names):
            k = int(np.sum(dom_idx == di))
            dspec = spec.domains[dname]
            comps = dspec.real if label == Label.REAL else dspec.fake
            feats.append(_draw(rng, comps, k, spec.input_dim))
            labels.extend([int(label)] * k)
            domains.extend([dname] * k)
    X = np.concatenate(feats, axis=0)
    order = rng.permutation(size)
    return Dataset(X[order], np.asarray(labels)[order],
                   tuple(domains[i] for i in order), split)


def generate_benchmark(spec: BenchmarkSpec) -> dict[str, Dataset]:
    spec.validate()
    s = spec.sizes
    ft = {spec.finetune_domain: 1.0}
    out = {
        "posttrain_train": _generate_split(spec, "posttrain_train", s["posttrain_train"],
                                           spec.posttrain_weights),
        "finetune_train": _generate_split(spec, "finetune_train", s["finetune_train"], ft),
        "finetune_val": _generate_split(spec, "finetune_val", s["finetune_val"], ft),
        "in_domain_test": _generate_split(spec, "in_domain_test", s["in_domain_test"], ft),
    }
    for d in spec.ood_domains:
        name = ood_split_name(d)
        out[name] = _generate_split(spec, name, s["ood_test"], {d: 1.0})
    out["drift_reference"] = _generate_split(spec, "drift_reference", s["drift_reference"],
                                             {spec.reference_domain: 1.0})
    return out


# -- files ------------------------------------------------------------------

def _fmt(v: float) -> str:
    if not math.isfinite(v):
        raise InputError("non-finite feature value cannot be serialized")
    return format(v, ".17g")


def write_dataset(ds: Dataset, path) -> None:
    """One JSON object per line: ``features`` (17 significant digits),
    ``label`` ("REAL" or "FAKE") and ``domain``."""
    with open(path, "w") as fh:
        for i in range(len(ds)):
            feats = ",".join(_fmt(v) for v in ds.features[i].tolist())
            label = json.dumps(Label(int(ds.labels[i])).name)
            fh.write(f'{{"features":[{feats}],"label":{label},"domain":{json.dumps(ds.domains[i])}}}\n')


def read_dataset(path, name: str | None = None) -> Dataset:
    samples = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line, parse_int=float)
                feats = np.array(rec["features"], dtype=np.float64)
                token = rec["label"]
                domain = rec["domain"]
            except (ValueError, KeyError, TypeError) as e:
                raise InputError(f"{path}:{lineno}: malformed record ({e})") from None
            if not isinstance(token, str) or token not in Label.__members__:
                raise InputError(f"{path}:{lineno}: unknown label token {token!r}")
            if feats.ndim != 1 or (dim is not None and feats.size != dim):
                raise InputError(f"{path}:{lineno}: inconsistent feature length")
            if not isinstance(domain, str) or not domain:
                raise InputError(f"{path}:{lineno}: domain must be a nonempty string")
            dim = feats.size
            samples.append(Sample(feats, Label[token], domain))
    return Dataset.from_samples(samples, name if name is not None else Path(path).stem)


def summarize(ds) -> dict[tuple[str, str], int]:
    ds = as_dataset(ds)
    return dict(Counter((Label(int(l)).name, d) for l, d in zip(ds.labels, ds.domains)))

