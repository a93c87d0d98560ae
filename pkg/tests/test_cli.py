import json
import subprocess
import sys

import pytest
import yaml

from grpoft import cli, oracles
from grpoft.classifier import load_checkpoint
from grpoft.datagen import read_dataset

from test_harness import SPEC


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "bench.yaml").write_text(yaml.safe_dump(SPEC))
    assert cli.main(["gen-data", "--spec", str(d / "bench.yaml"), "--out", str(d / "data")]) == 0
    return d


def test_gen_data_files(workdir):
    names = sorted(p.name for p in (workdir / "data").iterdir())
    assert names == sorted(["benchmark.yaml", "drift_reference.jsonl", "finetune_train.jsonl",
                            "finetune_val.jsonl", "in_domain_test.jsonl", "ood_u.jsonl",
                            "ood_v.jsonl", "posttrain_train.jsonl"])
    assert len(read_dataset(workdir / "data" / "ood_u.jsonl")) == 30


def test_train_eval_drift(workdir, capsys):
    data, ck = workdir / "data", workdir / "m.ckpt"
    rc = cli.main(["train", "--data", str(data), "--algo", "grpo", "--beta", "0.1",
                   "--group-size", "8", "--epochs", "2", "--seed", "3", "--hidden", "4",
                   "--validation-interval", "2", "--out", str(ck)])
    assert rc == 0
    arch, params, meta = load_checkpoint(ck)
    assert arch.input_dim == 3 and arch.hidden_dims == (4,)
    log = (workdir / "m.ckpt.log").read_text().splitlines()
    assert log[0] == "stage\tstep\ttrain_loss\tvalidation_eer"
    assert [int(l.split("\t")[1]) for l in log[1:]] == [0, 2, 4, 6]
    assert meta["validation_eer"] == min(float(l.split("\t")[3]) for l in log[1:])

    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(ck), str(data / "ood_u.jsonl"),
                     str(data / "in_domain_test.jsonl")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [l.split("\t")[0] for l in out] == ["ood_u", "in_domain_test"]
    assert all(0.0 <= float(l.split("\t")[1]) <= 1.0 for l in out)

    assert cli.main(["drift", "--checkpoint", str(ck), "--reference",
                     str(data / "drift_reference.jsonl"), "--projections", "8",
                     str(data / "drift_reference.jsonl"), str(data / "ood_v.jsonl")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "set\tdrift\tfake_count"
    assert float(out[1].split("\t")[1]) <= 1e-9


def test_train_from_checkpoint(workdir):
    data = workdir / "data"
    assert cli.main(["train", "--data", str(data), "--train-split", "posttrain_train",
                     "--val-split", "posttrain_train", "--algo", "sft", "--epochs", "1",
                     "--out", str(workdir / "post.ckpt")]) == 0
    assert cli.main(["train", "--data", str(data), "--init", str(workdir / "post.ckpt"),
                     "--algo", "sft_then_grpo_s", "--epochs", "1", "--group-size", "4",
                     "--out", str(workdir / "ft.ckpt"), "--log", str(workdir / "ft.log")]) == 0
    stages = {l.split("\t")[0] for l in (workdir / "ft.log").read_text().splitlines()[1:]}
    assert stages == {"sft", "grpo_s"}


def test_input_errors_exit_2(workdir, capsys):
    assert cli.main(["eval", "--checkpoint", str(workdir / "missing.ckpt"),
                     str(workdir / "data" / "ood_u.jsonl")]) == 2
    bad = workdir / "bad.jsonl"
    bad.write_text('{"features":[1,2,3],"label":"real","domain":"x"}\n')
    ck = workdir / "m.ckpt"
    if ck.exists():
        assert cli.main(["eval", "--checkpoint", str(ck), str(bad)]) == 2
    assert cli.main(["train", "--data", str(workdir / "data"), "--train-split", "nope",
                     "--out", str(workdir / "x.ckpt")]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--algo", "ppo", "--data", ".", "--out", "x"])
    assert e.value.code == 2


def write_grid(path, lr=1e-3):
    path.write_text(yaml.safe_dump({
        "rounds": 1, "benchmark": "bench.yaml",
        "architecture": {"input_dim": 3, "hidden_dims": [4], "activation": "tanh"},
        "posttrain": {"max_epochs": 1, "batch_size": 16},
        "defaults": {"max_epochs": 1, "batch_size": 8, "grpo": {"group_size": 4}},
        "runs": [{"name": "SFT", "algo": "sft", "learning_rate": lr},
                 {"name": "GRPO", "algo": "grpo"}],
        "drift": {"projections": 8},
    }))


def test_grid_command(workdir, capsys):
    write_grid(workdir / "grid.yaml")
    rc = cli.main(["grid", "--grid", str(workdir / "grid.yaml"), "--out", str(workdir / "rep")])
    assert rc == 0
    d = json.loads((workdir / "rep" / "grid_report.json").read_text())
    assert list(d["rows"]) == ["SFT", "GRPO"]
    assert "Test set EERs (%)" in capsys.readouterr().out


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grid_failure_exit_1(workdir, capsys):
    write_grid(workdir / "bad_grid.yaml", lr=1e308)
    rc = cli.main(["grid", "--grid", str(workdir / "bad_grid.yaml"), "--out",
                   str(workdir / "rep2"), "--format", "machine"])
    assert rc == 1
    assert "failed runs: SFT" in capsys.readouterr().err
    assert not (workdir / "rep2" / "grid_report.txt").exists()


def test_verify_command(capsys):
    assert cli.main(["verify", "--trials", "2", "--identity-points", "3",
                     "--mc-groups", "5000"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out and all(l.startswith("PASS") for l in out)
    assert len(out) == 2 + len(oracles.GRADIENT_VARIANTS) + 1 + 3


def test_verify_failure_exit_1(monkeypatch, capsys):
    real = oracles.check_gradients

    def corrupted(*a, **kw):
        return real(*a, corrupt=lambda v, g: g * 1.1, **kw)

    monkeypatch.setattr(oracles, "check_gradients", corrupted)
    assert cli.main(["verify", "--trials", "1", "--identity-points", "1",
                     "--mc-groups", "2000"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "grpoft.cli", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0
    for sub in ("gen-data", "train", "eval", "drift", "grid", "verify"):
        assert sub in out.stdout
