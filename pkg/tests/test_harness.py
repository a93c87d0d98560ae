import json
import re
from dataclasses import replace

import numpy as np
import pytest
import yaml

from grpoft.classifier import Architecture
from grpoft.datagen import BenchmarkSpec
from grpoft.errors import InputError
from grpoft.harness import (BASELINE_LABEL, ExperimentGrid, default_grid, emit_report,
                            grid_from_dict, human_report, load_grid, machine_report,
                            parse_machine_report, run_grid)
from grpoft.objectives import GrpoConfig
from grpoft.trainer import TrainConfig

SPEC = {
    "input_dim": 3, "seed": 1, "finetune_domain": "t", "ood_domains": ["u", "v"],
    "reference_domain": "r",
    "posttrain_weights": {"u": 0.4, "v": 0.4, "r": 0.2},
    "sizes": {"posttrain_train": 120, "finetune_train": 48, "finetune_val": 24,
              "in_domain_test": 40, "ood_test": 30, "drift_reference": 30},
    "domains": {
        "t": {"real": [{}], "fake": [{"mean": {2: 2.0}}]},
        "u": {"real": [{}], "fake": [{"mean": {0: 2.5}}]},
        "v": {"real": [{}], "fake": [{"mean": {1: 2.5}}]},
        "r": {"real": [{}], "fake": [{"mean": {0: 2.5}, "weight": 0.5},
                                     {"mean": {1: 2.5}, "weight": 0.5}]},
    },
}


def small_run(algo, **grpo):
    return TrainConfig(algo=algo, max_epochs=2, batch_size=8, validation_interval_steps=3,
                       grpo=GrpoConfig(group_size=8, old_refresh_steps=6, **grpo))


def small_grid(runs, rounds=1, **kw):
    return ExperimentGrid(
        runs=runs, rounds=rounds, arch=Architecture(3, (4,), "tanh"),
        posttrain=TrainConfig(algo="sft", max_epochs=2, batch_size=16, learning_rate=3e-3,
                              validation_interval_steps=5),
        drift_projections=16, benchmark=SPEC, **kw)


@pytest.fixture(scope="module")
def report():
    return run_grid(small_grid([("SFT", small_run("sft")), ("GRPO", small_run("grpo"))],
                               rounds=2))


def test_one_run_one_row():
    rep = run_grid(small_grid([("only", small_run("grpo_s"))]))
    assert list(rep.rows) == ["only"]
    assert set(rep.rows["only"]["eer"]) == {"in_domain_test", "ood_u", "ood_v"}
    table = human_report(rep).split("\n\n")[1].splitlines()
    assert [l.split()[0] for l in table[1:]] == ["only", "-" * len(table[2]), "post-trained"]


def test_identical_round_seeds_average_to_single_round():
    run = [("GRPO", small_run("grpo"))]
    one = run_grid(small_grid(run, rounds=1))
    three = run_grid(small_grid(run, rounds=3, seed_stride=0))
    for s, v in one.rows["GRPO"]["eer"].items():
        assert three.rows["GRPO"]["eer_rounds"][s] == [v] * 3
        assert three.rows["GRPO"]["eer"][s] == v
        assert three.rows["GRPO"]["drift"][s] == one.rows["GRPO"]["drift"][s]


def test_rounds_use_distinct_seeds(report):
    rounds = report.rows["GRPO"]["eer_rounds"]
    assert all(len(v) == 2 for v in rounds.values())
    cfgs = report.config["runs"]
    assert [c["name"] for c in cfgs] == ["SFT", "GRPO"]


def test_report_cells_and_averages(report):
    for row in report.rows.values():
        assert row["status"] == "ok"
        eer = row["eer"]
        for s in report.eval_sets:
            assert eer[s] == pytest.approx(np.mean(row["eer_rounds"][s]), abs=1e-15)
        assert row["in_domain_avg"] == eer["in_domain_test"]
        assert row["ood_avg"] == pytest.approx((eer["ood_u"] + eer["ood_v"]) / 2, abs=1e-15)
    assert report.in_domain_sets == ["in_domain_test"]
    assert report.ood_sets == ["ood_u", "ood_v"]
    assert report.baseline["status"] == "ok"


def test_deterministic_machine_report(report):
    again = run_grid(small_grid([("SFT", small_run("sft")), ("GRPO", small_run("grpo"))],
                                rounds=2))
    assert machine_report(again) == machine_report(report)


def test_machine_round_trip_byte_identical(report):
    text = machine_report(report)
    assert machine_report(parse_machine_report(text)) == text
    d = json.loads(text)
    assert d["version"] == 1 and "wall" not in text


def test_machine_full_precision(report):
    d = json.loads(machine_report(report))
    v = report.rows["GRPO"]["eer"]["ood_u"]
    assert d["rows"]["GRPO"]["eer"]["ood_u"] == v


def test_human_layout(report):
    text = human_report(report)
    header = text.splitlines()[2].split()
    assert header == ["run", "in_domain_test", "in.ave", "ood_u", "ood_v", "ood.ave"]
    body = text.split("\n\n")[1].splitlines()[1:]
    assert body[0].split()[0] == "SFT" and body[1].split()[0] == "GRPO"
    row = report.rows["GRPO"]
    cells = body[1].split()[1:]
    assert cells[0] == f"{100 * row['eer']['in_domain_test']:.2f}"
    assert cells[4] == f"{100 * row['ood_avg']:.2f}"
    assert all(re.fullmatch(r"\d+\.\d\d", c) for c in cells)
    assert BASELINE_LABEL in text
    # columns line up: every table row has the same width
    widths = {len(l) for l in body if not l.startswith("-")}
    assert len(widths) == 1


def test_other_runs_unaffected_by_a_changed_run(report):
    changed = run_grid(small_grid([("SFT", small_run("sft")),
                                   ("GRPO", small_run("grpo", beta=0.5))], rounds=2))
    assert changed.rows["SFT"] == report.rows["SFT"]
    assert changed.rows["GRPO"] != report.rows["GRPO"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_cell_is_reported_and_grid_continues():
    bad = replace(small_run("sft"), learning_rate=1e308)
    rep = run_grid(small_grid([("bad", bad), ("ok", small_run("sft"))]))
    assert rep.failed == ["bad"]
    assert rep.rows["bad"]["status"] == "failed" and "step" in rep.rows["bad"]["error"]
    assert rep.rows["ok"]["status"] == "ok"
    assert "failed" in human_report(rep).splitlines()[3]
    text = machine_report(rep)
    assert json.loads(text)["rows"]["bad"]["eer"] is None
    assert machine_report(parse_machine_report(text)) == text


def test_emit_report_files(tmp_path, report):
    paths = emit_report(report, tmp_path / "out")
    assert [p.name for p in paths] == ["grid_report.json", "grid_report.txt"]
    assert paths[0].read_text() == machine_report(report)
    assert paths[1].read_text() == human_report(report)
    with pytest.raises(InputError):
        emit_report(report, tmp_path, formats=("xml",))
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report(report, blocker)


def test_grid_validation():
    with pytest.raises(InputError):
        ExperimentGrid(runs=[("a", small_run("sft")), ("a", small_run("grpo"))])
    with pytest.raises(InputError):
        ExperimentGrid(runs=[("a", small_run("sft"))], rounds=0)
    with pytest.raises(InputError):
        run_grid(small_grid([("a", small_run("sft"))], eval_sets=["nope"]))


def test_grid_yaml(tmp_path):
    (tmp_path / "bench.yaml").write_text(yaml.safe_dump(SPEC))
    (tmp_path / "grid.yaml").write_text(yaml.safe_dump({
        "rounds": 2, "base_seed": 4, "benchmark": "bench.yaml",
        "architecture": {"input_dim": 3, "hidden_dims": [], "activation": "tanh"},
        "defaults": {"max_epochs": 1, "grpo": {"group_size": 4, "beta": 0.1}},
        "runs": [{"name": "A", "algo": "grpo"},
                 {"name": "B", "algo": "grpo", "grpo": {"beta": 1.0}}],
    }))
    g = load_grid(tmp_path / "grid.yaml")
    assert g.rounds == 2 and g.base_seed == 4 and g.arch.hidden_dims == ()
    assert g.benchmark == str(tmp_path / "bench.yaml")
    a, b = dict(g.runs)["A"], dict(g.runs)["B"]
    assert a.max_epochs == 1 and a.grpo.group_size == 4 and a.grpo.beta == 0.1
    assert b.grpo.beta == 1.0 and b.grpo.group_size == 4


def test_default_grid_contents():
    g = default_grid()
    algos = {name: cfg.algo for name, cfg in g.runs}
    assert algos == {"SFT": "sft", "GRPO_s": "grpo_s", "GRPO": "grpo",
                     "SFT->GRPO": "sft_then_grpo", "GRPO (beta=0)": "grpo",
                     "GRPO (beta=1)": "grpo", "GRPO w/o neg.": "grpo_no_neg"}
    runs = dict(g.runs)
    assert runs["GRPO (beta=0)"].grpo.beta == 0.0 and runs["GRPO (beta=1)"].grpo.beta == 1.0
    assert runs["GRPO"].grpo.group_size == 64 and runs["GRPO"].grpo.beta == 0.04
    assert g.rounds == 3 and g.drift_projections == 128
    assert grid_from_dict({"runs": [{"name": "x", "algo": "sft"}]}).rounds == 3
