import json

import numpy as np
import pytest

from cookbench import pipeline
from cookbench.cli import EXIT_CONFIG, EXIT_OK, main
from cookbench.config import parse_config
from cookbench.data import ProvenanceKind, load_dataset
from cookbench.evalkit import read_report_csv
from cookbench.ssim import ssim_batch_min

TINY = """\
[recipe]
per_class_train = 16
per_class_test = 8
[train]
epochs = 2
batch_size = 16
[craft]
max_iters = 3
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def cli(*argv):
    return main([str(a) for a in argv])


# -- library pipeline ---------------------------------------------------------


def test_run_experiment_artifacts(tmp_path):
    cfg = parse_config(TINY, out=str(tmp_path / "run"), seed=3)
    result = pipeline.run_experiment(cfg)
    assert [r.method for r in result.reports] == ["antiadv", "perturbation"]
    names = {p.name for p in result.files}
    for stem in ("raw_train", "raw_test", "surrogate", "cooked_train_antiadv-pseudo-logit-adam", "report"):
        assert any(n.startswith(stem + "_seed3") for n in names), stem
    for p in result.files:
        assert p.is_file(), p
    cooked = load_dataset(tmp_path / "run" / "cooked_test_antiadv-pseudo-logit-adam_seed3.dcd")
    raw = load_dataset(tmp_path / "run" / "raw_test_seed3.dcd")
    assert cooked.provenance.kind is ProvenanceKind.COOKED
    assert ssim_batch_min(raw, cooked) >= 0.8
    manifest = json.loads((tmp_path / "run" / "cooked_test_antiadv-pseudo-logit-adam_seed3.dcd.json").read_text())
    assert manifest["craft_config"]["max_iters"] == 3
    rows = read_report_csv(result.report_csv)
    assert [r.seed for r in rows] == [3, 3]
    assert (tmp_path / "run" / "config_seed3.ini").read_text().startswith("[experiment]")


def test_noise_method_has_no_perturbation_arm(tmp_path):
    cfg = parse_config(TINY + "[experiment]\nmethod = noise\n", out=str(tmp_path))
    result = pipeline.run_experiment(cfg)
    assert [r.method for r in result.reports] == ["noise"]
    assert result.reports[0].direction == ""


def test_ablation_grid_shape():
    grid = pipeline.ablation_grid()
    assert len(grid) == 24 and len(set(grid)) == 24


def test_stage_error_names_stage(tmp_path):
    cfg = parse_config(TINY + "[experiment]\narch = small_mlp\n", out=str(tmp_path))
    bad = parse_config(TINY.replace("max_iters = 3", "max_iters = 3\nssim_window = 99"), out=str(tmp_path))
    pipeline.prepare(cfg)  # sanity: the MLP variant runs
    with pytest.raises(pipeline.StageError, match="cook"):
        pipeline.run_experiment(bad)


# -- command line -------------------------------------------------------------


def test_cli_step_by_step(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "o"
    assert cli("synth", "--config", tiny_cfg, "--out", out, "--seed", 1) == EXIT_OK
    train, test = out / "raw_train_seed1.dcd", out / "raw_test_seed1.dcd"
    assert cli("train", "--config", tiny_cfg, "--data", train, "--ckpt", out / "surr.dcm") == EXIT_OK
    for split in ("train", "test"):
        src = train if split == "train" else test
        assert cli("cook", "--config", tiny_cfg, "--data", src, "--surrogate", out / "surr.dcm", "--dest", out / f"c_{split}.dcd") == EXIT_OK
    assert (out / "c_test.dcd.json").is_file() and (out / "c_test.traces.csv").is_file()
    assert cli("train", "--config", tiny_cfg, "--role", "protected", "--data", out / "c_train.dcd", "--ckpt", out / "prot.dcm") == EXIT_OK
    assert cli("noise", "--config", tiny_cfg, "--data", test, "--dest", out / "n_test.dcd", "--sigma", 0.1) == EXIT_OK
    capsys.readouterr()
    args = ["eval", "--config", tiny_cfg, "--out", out, "--surrogate", out / "surr.dcm", "--protected-model", out / "prot.dcm", "--raw", test]
    assert cli(*args, "--protected-data", out / "c_test.dcd") == EXIT_OK
    assert "antiadv" in capsys.readouterr().out
    assert len(read_report_csv(out / "eval_seed0.csv")) == 1
    assert cli(*args, "--protected-data", out / "n_test.dcd", "--method", "noise") == EXIT_OK

    # Mismatched shapes: the training split is not aligned with the raw test split.
    assert cli(*args, "--protected-data", out / "c_train.dcd") == EXIT_CONFIG

    # A cooked set paired with a different surrogate needs --force.
    assert cli("train", "--config", tiny_cfg, "--seed", 5, "--data", train, "--ckpt", out / "other.dcm") == EXIT_OK
    other = ["eval", "--config", tiny_cfg, "--out", out, "--surrogate", out / "other.dcm", "--protected-model", out / "prot.dcm", "--raw", test, "--protected-data", out / "c_test.dcd"]
    assert cli(*other) == EXIT_CONFIG
    assert cli(*other, "--force") == EXIT_OK

    # Missing manifest is also a provenance failure.
    (out / "c_test.dcd.json").unlink()
    assert cli(*args, "--protected-data", out / "c_test.dcd") == EXIT_CONFIG


def test_cli_config_errors(tmp_path, tiny_cfg):
    assert cli("run", "--config", tmp_path / "missing.ini") == EXIT_CONFIG
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nepochs = -1\n")
    assert cli("run", "--config", bad) == EXIT_CONFIG
    assert cli("eval", "--config", tiny_cfg) == EXIT_CONFIG  # required arguments missing
    assert cli("train", "--config", tiny_cfg, "--data", tmp_path / "none.dcd", "--ckpt", tmp_path / "x.dcm") == EXIT_CONFIG
    assert cli() == EXIT_CONFIG
    garbage = tmp_path / "g.dcd"
    garbage.write_bytes(b"not a dataset")
    assert cli("train", "--config", tiny_cfg, "--data", garbage, "--ckpt", tmp_path / "x.dcm") == EXIT_CONFIG


def test_print_defaults(capsys):
    assert cli("--print-defaults") == EXIT_OK
    assert capsys.readouterr().out.startswith("[experiment]")


def test_cli_run_is_deterministic(tmp_path, tiny_cfg):
    for d in ("a", "b"):
        assert cli("run", "--config", tiny_cfg, "--out", tmp_path / d) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        a, b = (tmp_path / "a" / name).read_bytes(), (tmp_path / "b" / name).read_bytes()
        if name.endswith(".ini"):
            # The saved config records the output directory and nothing else differs.
            diff = [(x, y) for x, y in zip(a.splitlines(), b.splitlines()) if x != y]
            assert len(diff) == 1 and diff[0][0].startswith(b"out = ")
        else:
            assert a == b, name
    assert any(n.endswith(".csv") for n in files) and any(n.endswith(".dcd") for n in files)


def test_cli_ablate_rows(tmp_path, tiny_cfg):
    assert cli("ablate", "--config", tiny_cfg, "--out", tmp_path) == EXIT_OK
    rows = read_report_csv(tmp_path / "ablation_seed0.csv")
    assert len(rows) == 25
    cells = {(r.direction, r.target, r.loss, r.optimizer) for r in rows[:24]}
    assert cells == set(pipeline.ablation_grid())
    assert rows[24].method == "noise"
    assert all(np.isfinite(r.cp_acc) and r.pp_acc <= 0 for r in rows)
