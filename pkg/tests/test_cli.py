import csv
import io
import json
import subprocess
import sys

import pytest

from protoadapt.cli import main

from conftest import tiny_config


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_lists_commands():
    proc = subprocess.run([sys.executable, "-m", "protoadapt.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-data", "run", "eval", "metrics", "sweep", "gradcheck", "export-descriptors"):
        assert cmd in proc.stdout


def test_gen_data_smoke_and_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        code, out, _ = run_cli(capsys, "gen-data", "--spec", "indoor-like", "--out", str(tmp_path / name), "--n", "8")
        assert code == 0 and out.strip().endswith("manifest.json")
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["splits"]["train"] == 8
    for p in (tmp_path / "a").rglob("*.pdt"):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_gen_data_from_spec_file(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "custom", "seed": 3, "hue_shift": 40.0}))
    code, _, _ = run_cli(capsys, "gen-data", "--spec", str(spec), "--out", str(tmp_path / "d"), "--n", "2", "--n-eval", "1")
    assert code == 0
    assert json.loads((tmp_path / "d" / "manifest.json").read_text())["spec"]["hue_shift"] == 40.0


@pytest.mark.parametrize("n", ["0", "-3"])
def test_gen_data_rejects_non_positive_n(capsys, tmp_path, n):
    code, _, err = run_cli(capsys, "gen-data", "--spec", "indoor-like", "--out", str(tmp_path / "d"), "--n", n)
    assert code == 2 and "--n" in err
    assert not (tmp_path / "d").exists()


def test_bad_spec_and_config_exit_2(capsys, tmp_path, write_config):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"density": 0.5}))
    assert run_cli(capsys, "gen-data", "--spec", str(bad), "--out", str(tmp_path / "d"), "--n", "2")[0] == 2
    cfg = write_config({"datasets": ["x", "y"], "learning_rate": 1})
    code, _, err = run_cli(capsys, "run", "--config", str(cfg))
    assert code == 2 and "learning_rate" in err


def test_missing_inputs_exit_3(capsys, tmp_path, write_config):
    cfg = write_config({"datasets": [str(tmp_path / "nope1"), str(tmp_path / "nope2")], "output_dir": str(tmp_path / "out")})
    assert run_cli(capsys, "run", "--config", str(cfg))[0] == 3
    assert run_cli(capsys, "metrics", "--run", str(tmp_path / "nothing"))[0] == 3


def test_run_metrics_eval_export(capsys, tiny_root, tmp_path, write_config):
    cfg = write_config(tiny_config(tiny_root, adapt={"steps": 0}))
    out = tmp_path / "run"
    code, stdout, _ = run_cli(capsys, "run", "--config", str(cfg), "--out", str(out))
    assert code == 0 and "incremental" in stdout

    code, stdout, _ = run_cli(capsys, "metrics", "--run", str(out))
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(stdout)))
    assert len(rows) == 8
    # zero adaptation steps leave earlier datasets untouched in both modes
    assert all(float(r["average_forgetting_pct"]) == 0.0 for r in rows)

    code, stdout, _ = run_cli(capsys, "eval", "--run", str(out), "--mode", "agnostic")
    assert code == 0 and len(json.loads(stdout)) == 3

    code, stdout, _ = run_cli(capsys, "export-descriptors", "--run", str(out), "--out", str(tmp_path / "d.csv"))
    assert code == 0 and (tmp_path / "d.csv").exists()


def test_metrics_rejects_hash_mismatch(capsys, tiny_root, tmp_path, write_config):
    cfg = write_config(tiny_config(tiny_root, adapt={"steps": 0}))
    out = tmp_path / "run"
    assert run_cli(capsys, "run", "--config", str(cfg), "--out", str(out))[0] == 0
    report = out / "metrics_report.csv"
    text = report.read_text()
    chash = json.loads((out / "continual_log.json").read_text())["config_hash"]
    report.write_text(text.replace(chash, "0" * 16))
    code, _, err = run_cli(capsys, "metrics", "--run", str(out))
    assert code == 2 and "hash" in err


def test_sweep(capsys, tiny_root, tmp_path, write_config):
    cfg = write_config(tiny_config(tiny_root, adapt={"steps": 1}))
    code, stdout, _ = run_cli(capsys, "sweep", "--config", str(cfg), "--values", "1,1;2,1", "--out", str(tmp_path / "sw"))
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(stdout)))
    assert [(r["n_image"], r["n_depth"]) for r in rows] == [("1", "1"), ("2", "1")]
    assert (tmp_path / "sw" / "sweep.csv").exists() and (tmp_path / "sw" / "sizes_2_1" / "continual_log.json").exists()
    assert run_cli(capsys, "sweep", "--config", str(cfg), "--values", "1;x", "--out", str(tmp_path / "s2"))[0] == 2
    assert run_cli(capsys, "sweep", "--config", str(cfg), "--param", "lr", "--values", "1,1")[0] == 2


def test_gradcheck_command(capsys):
    code, stdout, _ = run_cli(capsys, "gradcheck")
    assert code == 0 and "FAIL" not in stdout and "local_bias_P" in stdout
    assert run_cli(capsys, "gradcheck", "--tol", "1e-12")[0] == 1
