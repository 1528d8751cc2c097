import json

import numpy as np
import pandas as pd
import pytest

from gridcast.cli import main
from gridcast.errors import ConfigParse
from gridcast.experiment import parse_config

SYNTHETIC = """\
[data]
source = synthetic
n_clients = 3
n_days = 30

[experiment]
families = persistence, linreg, mlp
strategies = local, global
horizons = 24
seed = 0

[lookback]
linreg = 48
mlp = 48

[model]
hidden = 8

[train]
max_epochs = 1
warmup_steps = 5
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(SYNTHETIC)
    return p


def test_run_writes_results_and_tables(tmp_path, config, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config), "--output-dir", str(out)]) == 0
    rows = (out / "results.csv").read_text().splitlines()
    assert rows[0] == "dataset,family,strategy,h,mae,mse,train_seconds,manifest"
    assert len(rows) == 1 + 6
    assert (out / "table_mae.md").exists() and (out / "table_mse.md").exists()
    manifest = json.loads((out / "runs" / "synthetic_linreg_global_h24" / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert len(manifest["config_hash"]) == 64
    assert manifest["code_version"] and manifest["dataset_hash"]
    loss = (out / "runs" / "synthetic_mlp_global_h24" / "loss.jsonl").read_text().splitlines()
    assert json.loads(loss[0])["kind"] == "train"


def test_rerun_skips_and_is_identical(tmp_path, config, capsys):
    out = tmp_path / "out"
    main(["run", str(config), "--output-dir", str(out)])
    first = (out / "results.csv").read_bytes()
    capsys.readouterr()
    assert main(["run", str(config), "--output-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("skipped") == 6
    assert (out / "results.csv").read_bytes() == first


def test_two_fresh_runs_byte_identical(tmp_path, config):
    main(["run", str(config), "--output-dir", str(tmp_path / "a")])
    main(["run", str(config), "--output-dir", str(tmp_path / "b")])
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_unknown_family_names_field(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(SYNTHETIC.replace("persistence, linreg, mlp", "persistence, prophet"))
    assert main(["run", str(p)]) == 2
    err = capsys.readouterr().err
    assert "experiment.families" in err and "prophet" in err and "line 7" in err
    with pytest.raises(ConfigParse) as exc:
        parse_config(p.read_text())
    assert exc.value.field == "experiment.families" and exc.value.line == 7


def test_bad_train_value(tmp_path):
    with pytest.raises(ConfigParse) as exc:
        parse_config(SYNTHETIC.replace("max_epochs = 1", "max_epochs = many"))
    assert exc.value.field == "train.max_epochs"


def test_json_config(tmp_path):
    cfg = {"data": {"source": "synthetic", "n_clients": 2, "n_days": 30},
           "experiment": {"families": ["persistence"], "strategies": ["global"], "horizons": [24]}}
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(cfg))
    assert main(["run", str(p), "--output-dir", str(tmp_path / "o"), "--no-checkpoints"]) == 0
    assert len((tmp_path / "o" / "results.csv").read_text().splitlines()) == 2


def test_report(tmp_path, config, capsys):
    out = tmp_path / "out"
    main(["run", str(config), "--output-dir", str(out)])
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "MAE" in text and "MSE" in text and "PatchTST" in text


def test_report_no_results(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    assert "NoResults" in capsys.readouterr().err


def test_schedule_dump(tmp_path):
    out = tmp_path / "lr.csv"
    assert main(["schedule-dump", "--steps", "1300", "--steps-per-epoch", "100",
                 "--output", str(out)]) == 0
    frame = pd.read_csv(out)
    assert frame.loc[1000, "lr"] == pytest.approx(1e-4)
    assert frame.loc[1300, "lr"] == pytest.approx(5.12e-5)
    assert len(frame) == 1301


def test_schedule_dump_gamma_one(tmp_path):
    out = tmp_path / "lr.csv"
    main(["schedule-dump", "--steps", "500", "--steps-per-epoch", "100", "--warmup-steps", "0",
          "--decay-gamma", "1.0", "--output", str(out)])
    lr = pd.read_csv(out)["lr"].to_numpy()
    np.testing.assert_allclose(lr[::100], 1e-4)


def test_grad_check_command(capsys):
    assert main(["grad-check", "--seeds", "2", "--families", "mlp"]) == 0
    text = capsys.readouterr().out
    assert "op softmax" in text and "model mlp" in text


def test_convert_wide(tmp_path, capsys):
    idx = pd.date_range("2013-01-01", periods=48, freq="30min")
    frame = pd.DataFrame({"time": idx.strftime("%Y-%m-%d %H:%M"), "a": 1.0, "b": "2.0"})
    frame.loc[5, "b"] = ""
    src = tmp_path / "raw.csv"
    frame.to_csv(src, index=False)
    out = tmp_path / "canon.csv"
    assert main(["convert", "--input", str(src), "--format", "wide", "--output", str(out)]) == 0
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["clients"] == ["a"] and "b" in side["dropped"]
    assert side["n_hours"] == 24
    assert side["split"]["train"] == [0, 16]
    canon = pd.read_csv(out)
    assert (canon["a"] == 2.0).all()


def test_data_dir_env(tmp_path, monkeypatch):
    from gridcast.synthetic import make_synthetic_dataset
    make_synthetic_dataset(2, 30).to_csv(tmp_path / "loads.csv")
    cfg = tmp_path / "cfgdir"
    cfg.mkdir()
    (cfg / "exp.ini").write_text("[data]\npath = loads.csv\n[experiment]\nfamilies = persistence\n"
                                 "strategies = global\nhorizons = 24\n")
    monkeypatch.setenv("GRIDCAST_DATA_DIR", str(tmp_path))
    assert main(["run", str(cfg / "exp.ini"), "--output-dir", str(tmp_path / "o")]) == 0


def test_failed_run_exit_code(tmp_path, capsys):
    p = tmp_path / "x.ini"
    p.write_text(SYNTHETIC.replace("linreg = 48", "linreg = 400").replace(
        "families = persistence, linreg, mlp", "families = linreg"))
    assert main(["run", str(p), "--output-dir", str(tmp_path / "o")]) == 1
    assert "failed" in capsys.readouterr().out


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    text = capsys.readouterr().out
    for cmd in ("convert", "run", "report", "schedule-dump", "grad-check"):
        assert cmd in text
