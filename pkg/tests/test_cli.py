import csv
import json

import pytest

from dqml import cli


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(argv):
    return cli.main([str(a) for a in argv])


def test_chsh_small(tmp_path):
    out = tmp_path / "chsh"
    assert run(["chsh", "--out", out, "--iterations", 20, "--repeats", 2, "--depth", 2,
                "--bell", "0,1", "--loss", "product", "--embedding", "optimal"]) == 0
    r = rows(out / "chsh_runs.csv")
    assert len(r) == 4 and {x["bell"] for x in r} == {"0", "1"}
    for x in r:
        assert abs(float(x["P_win"]) - float(x["success"])) < 1e-12
    assert len(rows(out / "chsh_inputs.csv")) == 4 * 16
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["depth"] == 2 and man["config"]["iterations"] == 20
    assert "created" in man["run_info"]


def test_outputs_reproducible(tmp_path):
    args = ["chsh", "--iterations", 10, "--repeats", 1, "--depth", 1, "--bell", 1,
            "--loss", "mse", "--embedding", "alternative", "--seed", 9]
    run(args + ["--out", tmp_path / "a"])
    run(args + ["--out", tmp_path / "b"])
    for name in ("chsh_runs.csv", "chsh_inputs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config"] == mb["config"]


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"iterations": 5, "repeats": 1, "depth": 1, "bell": [0],
                               "loss": ["mse"], "embedding": ["optimal"]}))
    out = tmp_path / "o"
    assert run(["chsh", "--config", cfg, "--out", out, "--iterations", 7]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["iterations"] == 7 and man["config"]["depth"] == 1


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"iterations": 5, "colour": "blue"}))
    assert run(["chsh", "--config", cfg, "--out", tmp_path / "o"]) == 2
    assert "colour" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["chsh", "--bell", "3"], ["chsh", "--embedding", "sideways"], ["synth", "--bell", "7"],
    ["effdim", "--depth", "0"], ["dnn", "--repeats", "0"], ["synth", "--loss", "hinge"]])
def test_invalid_values_exit_2(tmp_path, argv):
    assert run(argv + ["--out", tmp_path / "o"]) == 2


def test_synth_and_resume(tmp_path):
    out = tmp_path / "s"
    args = ["synth", "--out", out, "--iterations", 4, "--repeats", 1, "--depth", 1,
            "--bell", "0,1", "--dataset-seed", 3]
    assert run(args) == 0
    first = rows(out / "synth_runs.csv")
    assert len(first) == 2 and {"val_acc", "train_acc"} <= set(first[0])
    assert (out / "bell1_d1_m0_r0.ckpt.json").exists()
    assert (out / "bell1_d1_m0_r0.log.csv").exists()
    summary = rows(out / "synth_summary.csv")
    assert {r["bell"] for r in summary} == {"0", "1"}
    # rerun picks up the finished checkpoints and reproduces the table
    assert run(args) == 0
    assert rows(out / "synth_runs.csv") == first


def test_synth_from_dataset_directory(tmp_path):
    from dqml import datasets
    datasets.save(datasets.gen_synthetic(2), tmp_path / "data")
    out = tmp_path / "s"
    assert run(["synth", "--out", out, "--iterations", 2, "--repeats", 1, "--depth", 1,
                "--bell", 0, "--dataset", tmp_path / "data"]) == 0
    assert run(["synth", "--out", out, "--iterations", 2, "--repeats", 1, "--depth", 1,
                "--bell", 0, "--dataset", tmp_path / "missing"]) == 2


def test_effdim_small(tmp_path, capsys):
    out = tmp_path / "e"
    assert run(["effdim", "--out", out, "--depth", 2, "--bell", "0,4", "--n-haar", 40,
                "--n-paramsets", 2]) == 0
    r = rows(out / "effdim.csv")
    assert [(x["n_bell"], x["depth"], x["ed"]) for x in r] == [
        ("0", "1", "32"), ("0", "2", "40"), ("4", "1", "32"), ("4", "2", "40")]
    assert "Bell-0: 32 40" in capsys.readouterr().out


def test_effdim_mixing_offsets_depth(tmp_path):
    out = tmp_path / "e"
    assert run(["effdim", "--out", out, "--depth", 4, "--bell", 1, "--mixing-depth", 3,
                "--n-haar", 12, "--n-paramsets", 1]) == 0
    assert [x["depth"] for x in rows(out / "effdim.csv")] == ["4"]


def test_dnn_small(tmp_path, capsys):
    out = tmp_path / "d"
    assert run(["dnn", "--out", out, "--iterations", 20, "--repeats", 2]) == 0
    r = rows(out / "dnn_runs.csv")
    assert len(r) == 2 and r[0]["param_count"] == "246"
    assert "parameters: 246" in capsys.readouterr().out


def test_report(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, seed in ((a, 1), (b, 2)):
        run(["chsh", "--out", out, "--iterations", 5, "--repeats", 1, "--depth", 1, "--bell", 1,
             "--loss", "product", "--embedding", "optimal", "--seed", seed])
    rep = tmp_path / "r"
    assert run(["report", a, b, "--out", rep]) == 0
    merged = rows(rep / "report.csv")
    assert len(merged) == 1 and merged[0]["n"] == "2"
    assert float(merged[0]["success_std"]) >= 0
    assert json.loads((rep / "report.json").read_text())["rows"][0]["n"] == 2


def test_report_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(["report", empty, "--out", tmp_path / "r"]) == 2
    assert run(["report", tmp_path / "nope", "--out", tmp_path / "r"]) == 2
    c, d = tmp_path / "c", tmp_path / "d"
    run(["chsh", "--out", c, "--iterations", 2, "--repeats", 1, "--depth", 1, "--bell", 1,
         "--loss", "mse", "--embedding", "optimal"])
    run(["dnn", "--out", d, "--iterations", 2, "--repeats", 1])
    assert run(["report", c, d, "--out", tmp_path / "r"]) == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    def boom(cell):
        raise cli.NumericalError("nan")
    monkeypatch.setattr(cli, "dnn_cell", boom)
    assert run(["dnn", "--out", tmp_path / "d", "--iterations", 2, "--repeats", 1]) == 3


def test_workers_env(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    args = cli.build_parser().parse_args(["dnn", "--out", str(tmp_path)])
    assert cli.resolve("dnn", args)["workers"] == 3


def test_parallel_matches_serial(tmp_path):
    base = ["chsh", "--iterations", 5, "--repeats", 2, "--depth", 1, "--bell", 1,
            "--loss", "mse", "--embedding", "optimal"]
    run(base + ["--out", tmp_path / "s", "--workers", 1])
    run(base + ["--out", tmp_path / "p", "--workers", 2])
    assert (tmp_path / "s" / "chsh_runs.csv").read_bytes() == (tmp_path / "p" / "chsh_runs.csv").read_bytes()


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "dqml", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "effdim" in res.stdout
