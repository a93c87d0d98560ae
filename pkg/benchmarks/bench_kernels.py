"""Compare the compiled and numpy kernel backends.

Times the three hot kernels at the default training shapes (16 inputs x 64
rollouts, an 8-16-2 tanh network) and a short GRPO training run end to end.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from grpoft import kernels
from grpoft.classifier import Architecture, init_params
from grpoft.datagen import default_spec, generate_benchmark
from grpoft.trainer import TrainConfig, train


def kernel_cases(arch, B=16, G=64, seed=0):
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed)
    X = rng.normal(size=(B, arch.input_dim))
    logits, hidden = kernels.get_backend("python").mlp_forward(params, arch.dims, arch.relu, X)
    logp = logits - np.logaddexp(logits[:, :1], logits[:, 1:])
    old = np.ascontiguousarray(logp + rng.normal(0, 0.05, logp.shape))
    ref = np.ascontiguousarray(logp + rng.normal(0, 0.05, logp.shape))
    labels = rng.integers(0, 2, (B, G)).astype(np.int64)
    adv = rng.normal(size=(B, G))
    dlogits = rng.normal(size=(B, 2))
    return {
        "mlp_forward": lambda k: k.mlp_forward(params, arch.dims, arch.relu, X),
        "mlp_backward": lambda k: k.mlp_backward(params, arch.dims, arch.relu, X, hidden, dlogits),
        "grpo_terms": lambda k: k.grpo_terms(np.ascontiguousarray(logp), old, ref, labels, adv,
                                             0.2, 0.04, True, False, kernels.KL_K3),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        kernels.get_backend("cython")
        backends = ["python", "cython"]
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")
        backends = ["python"]

    arch = Architecture()
    print(f"{'kernel':<16}" + "".join(f"{b + ' (us)':>16}" for b in backends) + f"{'speedup':>10}")
    for name, fn in kernel_cases(arch).items():
        times = []
        for b in backends:
            k = kernels.get_backend(b)
            n = 2000
            times.append(min(timeit.repeat(lambda: fn(k), number=n, repeat=args.repeat)) / n * 1e6)
        speed = f"{times[0] / times[-1]:.2f}x" if len(times) > 1 else "-"
        print(f"{name:<16}" + "".join(f"{t:>16.2f}" for t in times) + f"{speed:>10}")

    data = generate_benchmark(default_spec())
    splits = {"train": data["finetune_train"], "validation": data["finetune_val"]}
    cfg = TrainConfig(algo="grpo", max_epochs=2)
    init = init_params(arch, 0)
    print()
    results = {}
    for b in backends:
        with kernels.use_backend(b):
            best = min(timeit.repeat(lambda: train(arch, init, splits, cfg), number=1,
                                     repeat=max(1, args.repeat // 2)))
            results[b] = train(arch, init, splits, cfg).selected.params
        print(f"grpo train, 100 steps, {b:<7}: {best:.3f} s")
    if len(results) == 2:
        diff = np.max(np.abs(results["python"] - results["cython"]))
        print(f"max parameter difference between backends: {diff:.2e}")


if __name__ == "__main__":
    main()
