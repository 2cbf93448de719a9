import json

import numpy as np
import pytest

from snnadv import harness
from snnadv.cli import main
from snnadv.data import load_image_set
from snnadv.persistence import load_model

from conftest import TEST_IMAGES, TRAIN_IMAGES


def small_config(path, attacks=()):
    cfg = {
        "data": {"train": str(TRAIN_IMAGES), "test": str(TEST_IMAGES), "train_limit": 300, "test_limit": 40},
        "architecture": "1x28x28-4s-16fc-10o",
        "ann": {"epochs": 3, "learning_rate": 0.1, "batch_size": 32},
        "snn": {"T": 8, "train": {"epochs": 1, "learning_rate": 0.1, "batch_size": 32}},
        "conversion": {"T": 30, "T_cal": 10, "calib_samples": 20},
        "attacks": list(attacks),
    }
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = small_config(root / "cfg.json", [{"method": "fgsm", "epsilon": 0.1}])
    models = root / "models"
    assert main(["matrix", "--config", str(cfg), "--models", str(models), "--train", "--out",
                 str(root / "report.csv")]) == 0
    return root, cfg, models


def test_matrix_trains_and_reports(workspace):
    root, _, models = workspace
    assert sorted(p.stem for p in models.glob("*.bin")) == sorted(harness.MODEL_NAMES)
    report = harness.read_report(root / "report.csv")
    assert len(report) == 12


def test_individual_training_commands_match_matrix(workspace, tmp_path):
    root, cfg, models = workspace
    assert main(["train-ann", "--config", str(cfg), "--out", str(tmp_path / "a.bin")]) == 0
    assert main(["convert", "--config", str(cfg), "--model", str(tmp_path / "a.bin"),
                 "--out", str(tmp_path / "s1.bin")]) == 0
    assert main(["train-snn", "--config", str(cfg), "--twin", "1", "--out", str(tmp_path / "s2x.bin")]) == 0
    for mine, theirs in (("a", "M_ANN"), ("s1", "M_SNN1"), ("s2x", "M_SNN2x")):
        assert (tmp_path / f"{mine}.bin").read_bytes() == (models / f"{theirs}.bin").read_bytes()


def test_craft_writes_bounded_set(workspace, tmp_path):
    root, cfg, models = workspace
    out = tmp_path / "adv"
    assert main(["craft", "--config", str(cfg), "--model", str(models / "M_SNN2.bin"), "--method", "ifgsm",
                 "--epsilon", "0.1", "--steps", "3", "--mode", "targeted-random", "--limit", "10",
                 "--out", str(out)]) == 0
    ds = load_image_set(out)
    assert len(ds) == 10 and ds.meta["source"] == "M_SNN2" and ds.meta["attack"]["steps"] == 3


def test_domain_clamp_flag(workspace, tmp_path):
    root, cfg, models = workspace
    out = tmp_path / "adv"
    main(["craft", "--config", str(cfg), "--model", str(models / "M_ANN.bin"), "--method", "fgsm",
          "--epsilon", "0.5", "--limit", "10", "--domain-clamp", "--out", str(out)])
    x = load_image_set(out).x
    stats = harness.load_data(harness.ExperimentConfig.load(cfg).data)[0].stats
    lo, hi = stats.domain(x.shape[1:])
    assert np.all(x >= lo) and np.all(x <= hi)


def test_eval_single_cell(workspace, tmp_path, capsys):
    root, cfg, models = workspace
    assert main(["eval", "--config", str(cfg), "--models", str(models), "--scenario", "bb-snn1",
                 "--target", "M_ANN", "--method", "fgsm", "--epsilon", "0.1", "--format", "json",
                 "--out", str(tmp_path / "cell.json")]) == 0
    (row,) = harness.read_report(tmp_path / "cell.json").rows
    assert (row.scenario, row.source, row.target) == ("bb-snn1", "M_SNN1x", "M_ANN")
    full = harness.read_report(root / "report.csv").select(scenario="bb-snn1", target="M_ANN")[0]
    assert f"{row.adv_acc:.4f}" == f"{full.adv_acc:.4f}"


def test_report_command(workspace, capsys, tmp_path):
    root, _, _ = workspace
    assert main(["report", str(root / "report.csv")]) == 0
    out = capsys.readouterr().out
    assert out.count("\n") == 13 and "whitebox" in out
    assert main(["report", str(root / "report.csv"), "--format", "json", "--out", str(tmp_path / "r.json")]) == 0
    assert len(harness.read_report(tmp_path / "r.json")) == 12


def test_seed_flag_changes_models(workspace, tmp_path):
    root, cfg, models = workspace
    main(["train-ann", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "a5.bin")])
    assert not np.array_equal(load_model(tmp_path / "a5.bin").params[-1]["W"],
                              load_model(models / "M_ANN.bin").params[-1]["W"])


def test_errors_are_reported(tmp_path, capsys):
    assert main(["train-ann", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 1
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage" * 10)
    assert main(["convert", "--model", str(bad), "--out", str(tmp_path / "y")]) == 1
    cfg = small_config(tmp_path / "c.json")
    assert main(["eval", "--config", str(cfg), "--models", str(tmp_path), "--scenario", "whitebox",
                 "--target", "M_ANN", "--method", "fgsm", "--epsilon", "0.1"]) == 1
    assert "missing models" in capsys.readouterr().err
