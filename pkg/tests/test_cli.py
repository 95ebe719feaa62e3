import csv

import numpy as np
import pandas as pd
import pytest
import yaml
from numpy.testing import assert_allclose

from pointpi.cli import ConfigError, RunConfig, main
from pointpi.model import load_checkpoint

SMALL = {
    "model": {"lag_window": 8, "horizon": 2, "encoder_hidden": 6, "submodel_widths": [8], "seed": 1},
    "train": {"lr": 0.003, "min_epoch": 1, "max_epoch": 2, "patience": 1, "batch_size": 256, "seed": 2},
    "split": {"train": 0.7, "val": 0.15, "test": 0.15, "seed": 3},
}


def _write_config(path, overrides=None):
    cfg = yaml.safe_load(yaml.safe_dump(SMALL))
    for section, values in (overrides or {}).items():
        cfg.setdefault(section, {}).update(values)
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.csv"
    assert main(["synth", "--out", str(data), "--days", "14", "--sites", "1", "--seed", "5"]) == 0
    config = _write_config(root / "run.yaml")
    assert main(["train", "--config", str(config), "--data", str(data), "--out-dir", str(root / "run"), "--quiet"]) == 0
    return root


# synth

def test_synth_row_count_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["synth", "--out", str(path), "--days", "10", "--sites", "1", "--seed", "3"]) == 0
    assert len(pd.read_csv(a)) == 960
    assert a.read_bytes() == b.read_bytes()
    assert list(pd.read_csv(a).columns) == ["timestamp", "site_id", "y", "ci", "i_clr", "i_cams"]


@pytest.mark.parametrize("argv", [["--days", "0"], ["--regime-mix", "1,2"], ["--sites", "x"]])
def test_synth_usage_errors(tmp_path, argv):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path / "x.csv"), *argv])
    assert exc.value.code == 2


def test_synth_regime_mix(tmp_path):
    out = tmp_path / "clear.csv"
    assert main(["synth", "--out", str(out), "--days", "20", "--regime-mix", "1,0,0"]) == 0
    frame = pd.read_csv(out)
    noon = frame[frame["timestamp"].str.endswith("12:00:00")]
    assert (noon["y"] / noon["i_clr"]).min() > 0.8


# config

def test_config_defaults_round_trip(tmp_path):
    run = RunConfig.from_dict({})
    assert run.model.horizon == 8
    run.dump(tmp_path / "c.yaml")
    again = RunConfig.load(tmp_path / "c.yaml")
    assert again.to_dict() == run.to_dict()


@pytest.mark.parametrize(
    "raw,where",
    [
        ({"modle": {}}, "modle"),
        ({"model": {"hidden": 3}}, "model.hidden"),
        ({"train": {"adam": {"beta3": 0.5}}}, "train.adam.beta3"),
        ({"model": {"horizon": "8"}}, "model.horizon"),
        ({"model": {"horizon": 2.5}}, "model.horizon"),
        ({"train": {"bn_recalibrate": 1}}, "train.bn_recalibrate"),
        ({"loss": {"p_day": "high"}}, "loss.p_day"),
        ({"loss": {"r_q": 2.0}}, "loss.r_q"),
        ({"train": {"min_epoch": 5, "max_epoch": 3}}, "train"),
        ({"loss": {"p_day": 0.1, "p_night": 0.2}}, "loss"),
        ({"split": {"train": 0.9}}, "split"),
        ({"model": {"n_lag_features": 4}}, "model"),
        ({"train": []}, "train"),
    ],
)
def test_config_errors_name_the_field(raw, where):
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict(raw)
    assert str(exc.value).startswith(where)


def test_example_configs_are_valid():
    from pathlib import Path

    for path in sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")):
        RunConfig.load(path)


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  horizn: 3\n")
    assert main(["train", "--config", str(bad), "--data", "x.csv", "--out-dir", str(tmp_path / "o")]) == 2
    assert "model.horizn" in capsys.readouterr().err


# train

def test_train_outputs(workspace):
    run = workspace / "run"
    expected = {"best.npz", "last.npz", "report.csv", "batches.csv", "r_history.csv",
                "config.resolved.yaml", "split_manifest.csv", "train_metrics.csv"}
    assert expected <= {p.name for p in run.iterdir()}
    report = pd.read_csv(run / "report.csv")
    assert "stop_reason" in report.columns
    assert report["stop_reason"].iloc[-1] in ("patience", "max_epoch")
    params, cfg, meta = load_checkpoint(run / "best.npz")
    assert cfg.horizon == 2 and meta["r_q"] > 0 and meta["which"] == "best"
    assert len(meta["barrier"]["r_day"]) == 2
    assert not (workspace / ".run.partial").exists()


def test_resolved_config_reproduces_the_run(workspace, tmp_path):
    resolved = workspace / "run" / "config.resolved.yaml"
    assert main(["train", "--config", str(resolved), "--out-dir", str(tmp_path / "again"), "--quiet"]) == 0
    for name in ("report.csv", "batches.csv", "r_history.csv", "train_metrics.csv", "best.npz"):
        assert (tmp_path / "again" / name).read_bytes() == (workspace / "run" / name).read_bytes()


def test_train_refuses_reused_out_dir(workspace, capsys):
    config = workspace / "run.yaml"
    argv = ["train", "--config", str(config), "--data", str(workspace / "data.csv"), "--out-dir", str(workspace / "run"), "--quiet"]
    assert main(argv) == 1
    assert "--force" in capsys.readouterr().err
    assert main([*argv, "--force"]) == 0


def test_train_missing_data_names_path(workspace, tmp_path, capsys):
    missing = tmp_path / "nowhere.csv"
    code = main(["train", "--config", str(workspace / "run.yaml"), "--data", str(missing), "--out-dir", str(tmp_path / "o")])
    assert code == 1
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_loss_flag_switches_to_pinball(workspace, tmp_path):
    out = tmp_path / "qr"
    argv = ["train", "--config", str(workspace / "run.yaml"), "--data", str(workspace / "data.csv"),
            "--out-dir", str(out), "--loss", "pinball", "--quiet"]
    assert main(argv) == 0
    assert yaml.safe_load((out / "config.resolved.yaml").read_text())["train"]["loss"] == "pinball"


# eval

def _metric_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_eval_on_train_split_matches_trainer_metrics(workspace, tmp_path):
    out = tmp_path / "train_eval.csv"
    assert main(["eval", "--checkpoint", str(workspace / "run" / "best.npz"), "--split", "train", "--out", str(out)]) == 0
    ours, trainer = _metric_rows(out), _metric_rows(workspace / "run" / "train_metrics.csv")
    assert [r["step"] for r in ours] == [r["step"] for r in trainer]
    for a, b in zip(ours, trainer):
        for key in ("picp", "pinaw", "pinalw", "winkler", "mae", "rmse", "mbe"):
            assert_allclose(float(a[key]), float(b[key]), rtol=0, atol=1e-8)


def test_eval_including_nights_raises_picp_and_is_flagged(workspace, tmp_path, capsys):
    ckpt = str(workspace / "run" / "best.npz")
    day, night = tmp_path / "day.csv", tmp_path / "all.csv"
    assert main(["eval", "--checkpoint", ckpt, "--out", str(day)]) == 0
    capsys.readouterr()
    assert main(["eval", "--checkpoint", ckpt, "--no-daytime-only", "--out", str(night)]) == 0
    assert "night hours included" in capsys.readouterr().out
    pooled_day = float(_metric_rows(day)[-1]["picp"])
    pooled_all = float(_metric_rows(night)[-1]["picp"])
    assert pooled_all > pooled_day


def test_eval_with_baseline(workspace, tmp_path, capsys):
    ckpt = str(workspace / "run" / "best.npz")
    out = tmp_path / "m.csv"
    assert main(["eval", "--checkpoint", ckpt, "--baseline", str(workspace / "run" / "last.npz"), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "[baseline]" in text and "PINALW comparison" in text
    assert (tmp_path / "m_baseline.csv").exists()


def test_eval_horizon_mismatch(workspace, capsys):
    assert main(["eval", "--checkpoint", str(workspace / "run" / "best.npz"), "--horizon", "3"]) == 1
    assert "horizon" in capsys.readouterr().err


def test_eval_empty_split_fails(workspace, tmp_path, capsys):
    config = _write_config(tmp_path / "c.yaml", {"split": {"train": 0.85, "val": 0.15, "test": 0.0}})
    run = tmp_path / "run"
    assert main(["train", "--config", str(config), "--data", str(workspace / "data.csv"), "--out-dir", str(run), "--quiet"]) == 0
    assert main(["eval", "--checkpoint", str(run / "best.npz")]) == 1
    assert "no complete windows" in capsys.readouterr().err


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz")]) == 1


# predict

def test_predict_rows_ordering_and_determinism(workspace, tmp_path):
    ckpt = str(workspace / "run" / "best.npz")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["predict", "--checkpoint", ckpt, "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    frame = pd.read_csv(a)
    assert list(frame.columns) == ["timestamp", "site_id", "step", "l_hat", "y_hat", "u_hat", "y_obs"]
    assert len(frame) % 2 == 0 and set(frame["step"]) == {1, 2}
    assert np.all(frame["l_hat"] <= frame["y_hat"]) and np.all(frame["y_hat"] <= frame["u_hat"])
    assert np.all(frame["u_hat"] > frame["l_hat"])


def test_predict_row_count_is_windows_times_horizon(workspace, tmp_path):
    from pointpi.data import Normalization, build_windows, fill_gaps, load_csv, split_dayblocks

    _, cfg, meta = load_checkpoint(workspace / "run" / "best.npz")
    run = RunConfig.from_dict(meta["run_config"])
    split = split_dayblocks(fill_gaps(load_csv(workspace / "data.csv")), run.split)
    n = len(build_windows(split.val, cfg.lag_window, cfg.horizon, Normalization(meta["r_q"])))
    out = tmp_path / "p.csv"
    assert main(["predict", "--checkpoint", str(workspace / "run" / "best.npz"), "--split", "val", "--out", str(out)]) == 0
    assert len(pd.read_csv(out)) == n * cfg.horizon


# report

def test_report_writes_svg_panels(workspace, tmp_path):
    ckpt = str(workspace / "run" / "best.npz")
    metrics, preds = tmp_path / "m.csv", tmp_path / "p.csv"
    assert main(["eval", "--checkpoint", ckpt, "--out", str(metrics)]) == 0
    assert main(["predict", "--checkpoint", ckpt, "--out", str(preds)]) == 0
    out = tmp_path / "fig"
    argv = ["report", "--eval-csv", str(metrics), "--train-report", str(workspace / "run" / "report.csv"),
            "--predictions", str(preds), "--out-dir", str(out)]
    assert main(argv) == 0
    names = {"losses.svg", "gamma.svg", "r.svg", "metrics.svg", "series.svg"}
    assert names == {p.name for p in out.iterdir()}
    for name in names:
        text = (out / name).read_text()
        assert text.lstrip().startswith("<?xml") and "<svg" in text
    assert "target 0.9" in (out / "metrics.svg").read_text()
    series = (out / "series.svg").read_text()
    for label in ("interval [l, u]", "observed y", "point forecast"):
        assert label in series
    first = {n: (out / n).read_bytes() for n in names}
    assert main(argv) == 0
    assert first == {n: (out / n).read_bytes() for n in names}


def test_report_rejects_malformed_csv(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    argv = ["report", "--eval-csv", str(bad), "--train-report", str(workspace / "run" / "report.csv"),
            "--out-dir", str(tmp_path / "fig")]
    assert main(argv) == 1
    assert "missing columns" in capsys.readouterr().err


def test_threads_env_validated(monkeypatch, tmp_path):
    monkeypatch.setenv("POINTPI_THREADS", "zero")
    assert main(["synth", "--out", str(tmp_path / "a.csv"), "--days", "1"]) == 2
    monkeypatch.setenv("POINTPI_THREADS", "1")
    assert main(["synth", "--out", str(tmp_path / "a.csv"), "--days", "1"]) == 0
