"""``grpoft`` command line.

Exit status: 0 on full success, 1 when a run, grid cell or verification
check fails, 2 on bad input (unreadable files, invalid arguments).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import Architecture, init_params, load_checkpoint, save_checkpoint
from .datagen import default_spec, dump_spec, generate_benchmark, load_spec, read_dataset, write_dataset
from .errors import InputError, TrainingError
from .evalkit import dataset_eer, drift_report
from .objectives import GrpoConfig, group_advantages
from .trainer import ALGOS, TrainConfig, train

log = logging.getLogger("grpoft")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _spec(path):
    return default_spec() if path is None else load_spec(path)


def cmd_gen_data(args) -> int:
    spec = _spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in generate_benchmark(spec).items():
        write_dataset(ds, out / f"{name}.jsonl")
        print(f"{name}\t{len(ds)}")
    dump_spec(spec, out / "benchmark.yaml")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    grpo = GrpoConfig(group_size=args.group_size, beta=args.beta, kl_mode=args.kl_mode,
                      old_refresh_steps=args.refresh_steps)
    return TrainConfig(algo=args.algo, max_epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.lr, validation_interval_steps=args.validation_interval,
                       seed=args.seed, grpo=grpo)


def cmd_train(args) -> int:
    data = Path(args.data)
    splits = {"train": read_dataset(data / f"{args.train_split}.jsonl", args.train_split),
              "validation": read_dataset(data / f"{args.val_split}.jsonl", args.val_split)}
    if args.init:
        arch, init, _ = load_checkpoint(args.init)
    else:
        hidden = tuple(int(h) for h in args.hidden.split(",") if h) if args.hidden else ()
        arch = Architecture(splits["train"].dim, hidden, args.activation)
        init = init_params(arch, args.seed)
    cfg = _train_config(args)
    try:
        rec = train(arch, init, splits, cfg)
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    sel = rec.selected
    save_checkpoint(args.out, arch, sel.params, step=sel.step, validation_eer=sel.validation_eer)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    log_path.write_text("\n".join(rec.log_lines()) + "\n")
    print(f"selected step {sel.step} validation EER {100 * sel.validation_eer:.2f}%")
    return EXIT_OK


def _datasets(paths):
    return [read_dataset(p, Path(p).stem) for p in paths]


def cmd_eval(args) -> int:
    arch, params, _ = load_checkpoint(args.checkpoint)
    for ds in _datasets(args.datasets):
        print(f"{ds.name}\t{dataset_eer(arch, params, ds)!r}")
    return EXIT_OK


def cmd_drift(args) -> int:
    arch, params, _ = load_checkpoint(args.checkpoint)
    ref = read_dataset(args.reference, Path(args.reference).stem)
    rep = drift_report(arch, params, _datasets(args.datasets), ref, args.projections, args.seed)
    print("set\tdrift\tfake_count")
    for name, value in rep.drift.items():
        print(f"{name}\t{value!r}\t{rep.counts[name]}")
    return EXIT_OK


def cmd_grid(args) -> int:
    from .harness import default_grid, emit_report, human_report, load_grid, run_grid

    grid = default_grid() if args.grid is None else load_grid(args.grid)
    if args.rounds is not None:
        grid.rounds = args.rounds
    spec = load_spec(args.spec) if args.spec else None
    report = run_grid(grid, spec)
    for path in emit_report(report, args.out, args.format):
        print(f"wrote {path}", file=sys.stderr)
    print(human_report(report), end="")
    if report.failed:
        print(f"failed runs: {', '.join(report.failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import oracles
    from .classifier import Label
    from .datagen import Sample

    ok = True

    def line(passed, text):
        nonlocal ok
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {text}")

    a = group_advantages([1, 1, 0, 0], 0.0)
    line(np.max(np.abs(a - [1, 1, -1, -1])) <= 1e-12, "advantages [1,1,0,0]")
    s3 = np.sqrt(3.0)
    b = group_advantages([1, 0, 0, 0], 0.0)
    line(np.max(np.abs(b - [s3, -1 / s3, -1 / s3, -1 / s3])) <= 1e-12, "advantages [1,0,0,0]")

    rep = oracles.check_gradients(args.trials, args.tolerance, seed=args.seed)
    for text in rep.lines():
        print(text)
    ok &= rep.passed

    rng = np.random.default_rng(args.seed)
    arch = Architecture()
    worst = 0.0
    for i in range(args.identity_points):
        th = init_params(arch, i) + rng.normal(0, 0.5, arch.n_params)
        old = th + rng.normal(0, 0.2, arch.n_params)
        ref = th + rng.normal(0, 0.2, arch.n_params)
        s = Sample(rng.normal(size=arch.input_dim), Label(int(rng.integers(2))), "v")
        cfg = GrpoConfig(group_size=8, use_negative_reward=False, use_clipping=False,
                         kl_mode=("k3_estimator", "exact_binary")[i % 2])
        g = oracles.exact_expected_loss(arch, th, old, ref, s, cfg).gradient
        worst = max(worst, float(np.max(np.abs(g - oracles.no_negative_identity(
            arch, th, old, ref, s, cfg)))))
    line(worst <= 1e-10, f"no-negative identity max_abs_err={worst:.2e} points={args.identity_points}")

    th = init_params(arch, args.seed)
    old = th + rng.normal(0, 0.1, arch.n_params)
    ref = th + rng.normal(0, 0.1, arch.n_params)
    s = Sample(rng.normal(size=arch.input_dim), Label.FAKE, "v")
    for G in (2, 4, 8):
        mc = oracles.monte_carlo_agreement(arch, th, old, ref, s, GrpoConfig(group_size=G),
                                           n_groups=args.mc_groups, seed=args.seed)
        line(mc.within(3.0), f"monte-carlo G={G} oracle={mc.oracle_value:.6f} "
             f"mc={mc.mc_value:.6f} se={mc.standard_error:.2e}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grpoft", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate benchmark dataset files")
    g.add_argument("--spec", help="benchmark YAML (default: packaged benchmark)")
    g.add_argument("--seed", type=int, help="override the benchmark seed")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fine-tune a classifier")
    t.add_argument("--data", required=True, help="directory written by gen-data")
    t.add_argument("--train-split", default="finetune_train")
    t.add_argument("--val-split", default="finetune_val")
    t.add_argument("--init", help="starting checkpoint (default: fresh init from --seed)")
    t.add_argument("--hidden", default="16", help="comma-separated hidden sizes for a fresh init")
    t.add_argument("--activation", default="tanh", choices=("tanh", "relu"))
    t.add_argument("--algo", default="grpo", choices=ALGOS)
    t.add_argument("--beta", type=float, default=0.04, help="KL penalty weight")
    t.add_argument("--group-size", type=int, default=64, help="rollouts per input")
    t.add_argument("--kl-mode", default="k3_estimator", choices=("k3_estimator", "exact_binary"))
    t.add_argument("--refresh-steps", type=int, default=1000,
                   help="optimizer steps between old-policy refreshes")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--validation-interval", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path for the selected model")
    t.add_argument("--log", help="training log path (default: <out>.log)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="EER of a checkpoint on dataset files")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("datasets", nargs="+")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("drift", help="sliced W1 drift of fake embeddings vs a reference")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--reference", required=True)
    d.add_argument("--projections", type=int, default=128)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("datasets", nargs="+")
    d.set_defaults(func=cmd_drift)

    r = sub.add_parser("grid", help="run an experiment grid and write reports")
    r.add_argument("--grid", help="grid YAML (default: packaged grid)")
    r.add_argument("--spec", help="benchmark YAML overriding the grid's benchmark")
    r.add_argument("--rounds", type=int)
    r.add_argument("--out", required=True, help="report directory")
    r.add_argument("--format", nargs="+", default=["machine", "human"],
                   choices=("machine", "human"))
    r.set_defaults(func=cmd_grid)

    v = sub.add_parser("verify", help="oracle and finite-difference checks")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--tolerance", type=float, default=1e-4)
    v.add_argument("--identity-points", type=int, default=20)
    v.add_argument("--mc-groups", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
