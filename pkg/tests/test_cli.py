import numpy as np
import pytest

from labelmp.cli import TRAIN_DEFAULTS, main
from labelmp.data import serialize_dataset, split
from labelmp.metrics import MetricsReport
from labelmp.synthetic import memorization_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Toy pre-split dataset + schema on disk, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cliws")
    ds = memorization_dataset(n_samples=30, n_labels=5, seed=2)
    train, val, test = split(ds, (0.6, 0.2, 0.2), seed=0)
    data_dir = root / "toy"
    data_dir.mkdir()
    for name, part in (("train.txt", train), ("val.txt", val), ("test.txt", test)):
        serialize_dataset(part, data_dir / name)
    schema = root / "toy.schema"
    schema.write_text(f"L = 5\ndelta = {ds.schema.features}\ninput_kind = tabular\n")
    return {"root": root, "data": str(data_dir), "schema": str(schema)}


def fast_flags(**extra):
    flags = {"--d": "16", "--heads": "2", "--steps": "1", "--epochs": "2",
             "--batch": "8", "--lr": "0.005", "--dropout": "0.0", "--seed": "1"}
    flags.update(extra)
    return [tok for pair in flags.items() for tok in pair]


def test_defaults_mirror_reference_settings():
    assert TRAIN_DEFAULTS["steps"] == 2
    assert TRAIN_DEFAULTS["heads"] == 4
    assert TRAIN_DEFAULTS["lr"] == 2e-4
    assert TRAIN_DEFAULTS["batch"] == 32
    assert TRAIN_DEFAULTS["d"] == 512


def test_train_edgeless_smoke(workspace, tmp_path):
    ckpt = tmp_path / "el.ckpt"
    code = main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--variant", "el", "--out", str(ckpt)] + fast_flags())
    assert code == 0
    assert ckpt.exists()
    assert (tmp_path / "el.ckpt.log").exists()


def test_train_missing_schema_is_usage_error(workspace, tmp_path, capsys):
    code = main(["train", "--data", workspace["data"], "--schema",
                 str(tmp_path / "nope.schema"), "--out", str(tmp_path / "x.ckpt")]
                + fast_flags())
    assert code == 2
    assert "--schema" in capsys.readouterr().err


def test_train_prior_variant_needs_source(workspace, tmp_path, capsys):
    code = main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--variant", "pr", "--out", str(tmp_path / "x.ckpt")] + fast_flags())
    assert code == 2
    assert "--prior-graph" in capsys.readouterr().err


def test_prior_graph_conflicts_with_other_variants(workspace, tmp_path):
    code = main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--variant", "el", "--prior-graph", "cooccur",
                 "--out", str(tmp_path / "x.ckpt")] + fast_flags())
    assert code == 2


def test_train_prior_cooccur_and_eval_report(workspace, tmp_path, capsys):
    ckpt = tmp_path / "pr.ckpt"
    assert main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--variant", "pr", "--prior-graph", "cooccur",
                 "--out", str(ckpt)] + fast_flags()) == 0
    capsys.readouterr()

    report_path = tmp_path / "report.txt"
    code = main(["eval", "--ckpt", str(ckpt), "--data", workspace["data"],
                 "--schema", workspace["schema"], "--report", str(report_path)])
    assert code == 0
    out1 = capsys.readouterr().out
    lines = report_path.read_text().strip().splitlines()
    assert len(lines) == 10  # 5 metric lines + 5 threshold lines
    report = MetricsReport.from_text(report_path.read_text())
    assert set(report.values) == {"acc", "ha", "ebf1", "mif1", "maf1"}

    assert main(["eval", "--ckpt", str(ckpt), "--data", workspace["data"],
                 "--schema", workspace["schema"]]) == 0
    assert capsys.readouterr().out == out1  # deterministic re-evaluation


def test_eval_checkpoint_schema_mismatch_exit_3(workspace, tmp_path, capsys):
    ckpt = tmp_path / "small.ckpt"
    assert main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--out", str(ckpt)] + fast_flags()) == 0
    other_schema = tmp_path / "other.schema"
    other_schema.write_text("L = 7\ndelta = 35\ninput_kind = tabular\n")
    code = main(["eval", "--ckpt", str(ckpt), "--data", workspace["data"],
                 "--schema", str(other_schema)])
    assert code == 3


def test_explain_writes_trace_and_plots(workspace, tmp_path):
    ckpt = tmp_path / "fc.ckpt"
    assert main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--variant", "fc", "--out", str(ckpt)]
                + fast_flags(**{"--steps": "2"})) == 0
    out_dir = tmp_path / "explain"
    code = main(["explain", "--ckpt", str(ckpt), "--data", workspace["data"],
                 "--schema", workspace["schema"], "--sample", "0",
                 "--out-dir", str(out_dir)])
    assert code == 0
    names = {p.name for p in out_dir.iterdir()}
    assert names == {"sample0_trace.json", "sample0_probes.svg",
                     "sample0_label_to_feature.svg", "sample0_label_to_label.svg"}

    code = main(["explain", "--ckpt", str(ckpt), "--data", workspace["data"],
                 "--schema", workspace["schema"], "--sample", "999",
                 "--out-dir", str(out_dir)])
    assert code == 4


def test_bad_data_file_exit_5(workspace, tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("not a valid line without tab\n")
    code = main(["train", "--data", str(bad), "--schema", workspace["schema"],
                 "--out", str(tmp_path / "x.ckpt")] + fast_flags())
    assert code == 5


def test_config_file_precedence(workspace, tmp_path):
    config = tmp_path / "train.conf"
    config.write_text("d = 16\nheads = 2\nsteps = 1\nepochs = 1\nbatch = 8\n"
                      "dropout = 0.0\nlr = 0.005\nseed = 3\n")
    ckpt = tmp_path / "conf.ckpt"
    # --steps on the command line beats the config file's steps = 1
    code = main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--config", str(config), "--steps", "2", "--out", str(ckpt)])
    assert code == 0
    from labelmp.model import load_checkpoint
    model = load_checkpoint(ckpt)
    assert model.config.steps == 2
    assert model.config.dim == 16  # from the config file


def test_data_root_env_var(workspace, tmp_path, monkeypatch, capsys):
    import os
    monkeypatch.setenv("LABELMP_DATA_ROOT", str(workspace["root"]))
    ckpt = tmp_path / "env.ckpt"
    code = main(["train", "--data", "toy", "--schema", "toy.schema",
                 "--out", str(ckpt)] + fast_flags())
    assert code == 0


def test_mlp_baseline_training(workspace, tmp_path):
    ckpt = tmp_path / "mlp.ckpt"
    code = main(["train", "--data", workspace["data"], "--schema", workspace["schema"],
                 "--model", "mlp", "--out", str(ckpt)] + fast_flags())
    assert code == 0
    code = main(["eval", "--ckpt", str(ckpt), "--data", workspace["data"],
                 "--schema", workspace["schema"]])
    assert code == 0
    code = main(["explain", "--ckpt", str(ckpt), "--data", workspace["data"],
                 "--schema", workspace["schema"], "--sample", "0",
                 "--out-dir", str(tmp_path / "nope")])
    assert code == 2  # baseline has no attention to explain
