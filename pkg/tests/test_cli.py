import json
import subprocess
import sys

import pytest

from frontier_grpo.cli import main
from frontier_grpo.metrics import read_metrics


def test_train_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--steps", "3", "--seed", "2", "--out-dir", str(out)]) == 0
    rows = read_metrics(out / "metrics.jsonl")
    assert [r["step"] for r in rows] == [0, 1, 2]
    for name in ("metrics.csv", "buffer.jsonl", "suite.jsonl", "config.ini"):
        assert (out / name).exists()
    assert "buffer=326" in capsys.readouterr().out


def test_train_mode_and_budget(tmp_path):
    out = tmp_path / "u"
    assert main(["train", "--steps", "50", "--mode", "no_buffer", "--budget-ticks", "900", "--out-dir", str(out)]) == 0
    rows = read_metrics(out / "metrics.jsonl")
    assert rows[-1]["ticks_total"] <= 900 + 16 and len(rows) < 50
    assert all(r["buffer_size"] == 134 for r in rows)


def test_env_overrides(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FRONTIER_GRPO_SEED", "4")
    monkeypatch.setenv("FRONTIER_GRPO_OUT_DIR", str(tmp_path / "env"))
    assert main(["train", "--steps", "1"]) == 0
    cfg = (tmp_path / "env" / "config.ini").read_text()
    assert "seed = 4" in cfg
    # flags beat the environment
    assert main(["train", "--steps", "1", "--seed", "6", "--out-dir", str(tmp_path / "flag")]) == 0
    assert "seed = 6" in (tmp_path / "flag" / "config.ini").read_text()


def test_config_file(tmp_path):
    cfgf = tmp_path / "c.ini"
    cfgf.write_text("[run]\nnum_tasks = 10\ntotal_steps = 2\n")
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfgf), "--out-dir", str(out)]) == 0
    assert len(read_metrics(out / "metrics.jsonl")) == 2


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["train", "--mode", "bogus", "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nnope = 1\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert main(["inspect-buffer", str(tmp_path / "missing.jsonl")]) == 1
    assert "missing.jsonl" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_ablate(tmp_path, capsys):
    cfgf = tmp_path / "c.ini"
    cfgf.write_text("[run]\nnum_tasks = 10\n")
    out = tmp_path / "ab"
    rc = main(["ablate", "--config", str(cfgf), "--num-seeds", "2", "--steps", "3", "--out-dir", str(out), "--keep-runs"])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["seeds"] == [0, 1] and len(rep["tests"]) == 2
    assert (out / "full" / "seed1" / "metrics.jsonl").exists()
    assert "full > uniform" in capsys.readouterr().out


def test_inspect_buffer(tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--steps", "2", "--out-dir", str(out)])
    capsys.readouterr()
    assert main(["inspect-buffer", str(out / "buffer.jsonl"), "--top", "3"]) == 0
    text = capsys.readouterr().out
    assert "states: 262" in text and "kinds: Draft=134" in text and "top 3 by potential" in text
    assert main(["inspect-buffer", str(out / "buffer.jsonl"), "--json", "--top", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["kind"] == "Draft"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "frontier_grpo", "train", "--steps", "1", "--out-dir", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
