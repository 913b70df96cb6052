import json
import subprocess
import sys

import pytest

from conftest import FIXTURES
from smartloop.cli import main

CFG = str(FIXTURES / "run.cfg")


def test_stagewise_pipeline(tmp_path, capsys):
    rec, pairs, ck = tmp_path / "r.jsonl", tmp_path / "p.jsonl", tmp_path / "ck.json"
    assert main(["generate", "--config", CFG, "--seed", "7", "--out", str(rec)]) == 0
    assert json.loads(capsys.readouterr().out.strip())["records"] == 10
    assert main(["filter", "--config", CFG, "--records", str(rec), "--out", str(pairs),
                 "--stats", str(tmp_path / "s.json")]) == 0
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["kept"] == len(pairs.read_text().splitlines())
    capsys.readouterr()
    assert main(["train", "--config", CFG, "--pairs", str(pairs), "--out", str(ck),
                 "--metrics", str(tmp_path / "m.jsonl")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["final_loss"] < summary["initial_loss"]
    assert main(["eval", "--config", CFG, "--checkpoint", str(ck), "--out", str(tmp_path / "e.jsonl")]) == 0
    assert "accuracy" in capsys.readouterr().out
    assert main(["eval", "--config", CFG]) == 0
    assert "0.6500 (13/20)" in capsys.readouterr().out
    for path in (rec, pairs, ck, FIXTURES / "manifest.jsonl"):
        assert main(["inspect", str(path)]) == 0
    assert "policy checkpoint" in capsys.readouterr().out


def test_iterate(tmp_path, capsys):
    assert main(["iterate", "--config", CFG, "--seed", "7", "--run-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "iteration 1:" in out and "iteration 2:" in out


def test_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert main(["generate", "--out", "x"]) == 1  # no manifest
    assert main(["inspect", str(tmp_path / "missing.jsonl")]) == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"a": 1}\n{oops\n')
    assert main(["inspect", str(bad)]) == 1
    assert ":2:" in capsys.readouterr().err
    remote = tmp_path / "remote.cfg"
    remote.write_text(f"data.manifest = {FIXTURES / 'manifest.jsonl'}\nbackend.kind = remote\n"
                      "backend.endpoint = http://127.0.0.1:9/v1\nbackend.max_attempts = 1\nbackend.timeout = 1\n"
                      "loop.M = 2\n")
    assert main(["generate", "--config", str(remote), "--out", str(tmp_path / "r.jsonl")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "smartloop", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "iterate" in out.stdout
