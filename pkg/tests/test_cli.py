import json
from pathlib import Path

import pytest

from ambientdiff.cli import main
from ambientdiff.files import load_checkpoint

SMALL = ["--set", "train.phase1_steps=20", "--set", "train.batch_size=32",
         "--set", "net.hidden_sizes=16,16", "--set", "mixture.preset=ring8"]


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert main(["train", "--bogus"]) == 1


def test_bad_config_key_is_usage_error(capsys):
    assert main(["config-echo", "--set", "nope=1"]) == 1
    assert "config error" in capsys.readouterr().err


def test_oracle_check_passes(capsys):
    assert main(["oracle-check"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_config_echo_is_canonical(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("ATW_SEED", raising=False)
    assert main(["config-echo", "--seed", "5"]) == 0
    text = capsys.readouterr().out
    assert "train.seed = 5" in text
    p = tmp_path / "echo.cfg"
    p.write_text(text)
    assert main(["config-echo", "--config", str(p)]) == 0
    assert capsys.readouterr().out == text


def test_seed_environment_variable(capsys, monkeypatch):
    monkeypatch.setenv("ATW_SEED", "23")
    assert main(["config-echo"]) == 0
    assert "data.seed = 23" in capsys.readouterr().out


def test_missing_file_is_runtime_error(tmp_path):
    assert main(["eval-denoiser", "--checkpoint", str(tmp_path / "none.bin")]) == 2


def test_end_to_end_flow(tmp_path, capsys):
    d, c, s = (str(tmp_path / n) for n in ("d.bin", "c.bin", "s.bin"))
    assert main(["make-dataset", "--out", d, "--n", "300", *SMALL]) == 0
    assert main(["train", "--data", d, "--out", c, "--metrics", str(tmp_path / "m.jsonl"),
                 *SMALL]) == 0
    capsys.readouterr()
    assert main(["eval-denoiser", "--checkpoint", c, "--set", "eval.n_points=50",
                 *SMALL]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("sigma_eval,") and len(lines) == 5
    assert main(["sample", "--checkpoint", c, "--out", s, "--n", "100", "--steps", "5",
                 "--sampler", "ddim", *SMALL]) == 0
    capsys.readouterr()
    assert main(["eval-dist", "--samples", s, "--n", "200", *SMALL]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_samples"] == 100 and out["sliced_w2"] > 0
    assert main(["attack", "--checkpoint", c, "--points", d, "--n-per-point", "2",
                 "--steps", "5", "--csv", str(tmp_path / "a.csv"), *SMALL]) == 0
    assert (tmp_path / "a.csv").read_text().startswith("bin_lo,bin_hi,count")
    assert len((tmp_path / "m.jsonl").read_text().splitlines()) == 20


def test_resume_via_cli_matches_single_run(tmp_path):
    d = str(tmp_path / "d.bin")
    main(["make-dataset", "--out", d, "--n", "200", *SMALL])
    full, part, res = (str(tmp_path / n) for n in ("full.bin", "part.bin", "res.bin"))
    assert main(["train", "--data", d, "--out", full, *SMALL]) == 0
    assert main(["train", "--data", d, "--out", part, *SMALL,
                 "--set", "train.phase1_steps=8"]) == 0
    assert main(["train", "--data", d, "--out", res, "--resume", part, *SMALL]) == 0
    a, b = load_checkpoint(full), load_checkpoint(res)
    assert (a.net.params == b.net.params).all() and a.history == b.history


# relative MSE rows of the runs/m2.cfg model (regression fixture)
M2_RUN_ROWS = {0.6: 0.014053396817038686, 1.0: 0.011037947987292039,
               2.0: 0.0028079029754494956, 3.0: 0.003944513467968241}


def test_m2_run_config_reproduces_fixture(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("ATW_SEED", raising=False)
    cfg = str(Path(__file__).resolve().parents[1] / "runs" / "m2.cfg")
    c = str(tmp_path / "c.bin")
    assert main(["train", "--config", cfg, "--out", c]) == 0
    capsys.readouterr()
    assert main(["eval-denoiser", "--config", cfg, "--checkpoint", c]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    got = {float(r.split(",")[0]): float(r.split(",")[1]) for r in rows}
    assert got.keys() == M2_RUN_ROWS.keys()
    for sigma, value in M2_RUN_ROWS.items():
        assert got[sigma] == pytest.approx(value, rel=1e-9)
        assert got[sigma] < 0.05
