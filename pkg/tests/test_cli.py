"""Tests for the experiment runner."""

import json
import subprocess
import sys

import pytest

from qmlab.cli import _parse_range, child_seed, emit_report, main


def run_cli(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, out.read_text()


class TestParsing:
    def test_range_doubling(self):
        assert _parse_range("2..64") == [2, 4, 8, 16, 32, 64]

    def test_range_grid(self):
        grid = _parse_range("0:0.25:1")
        assert grid == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_comma_list(self):
        assert _parse_range("1,2,3") == [1, 2, 3]

    def test_seed_required(self, tmp_path):
        code, text = run_cli(["lemmas", "--trials", "5"], tmp_path)
        assert code == 2
        assert json.loads(text)["error"]["type"] == "ValueError"

    def test_unknown_protocol_exits_2(self, tmp_path):
        code, text = run_cli(
            ["attack", "--protocol", "nope", "--seed", "1"], tmp_path
        )
        assert code == 2
        doc = json.loads(text)
        assert doc["pass"] is False


class TestCommands:
    def test_lemmas_small_run(self, tmp_path):
        code, text = run_cli(["lemmas", "--trials", "10", "--seed", "7"], tmp_path)
        assert code == 0
        doc = json.loads(text)
        assert doc["command"] == "lemmas"
        assert len(doc["results"]) == 4
        assert all(b["pass"] for b in doc["bounds"])
        assert all("anchor" in b for b in doc["bounds"])

    def test_attack_toy_qpke(self, tmp_path):
        code, text = run_cli(
            [
                "attack", "--protocol", "toy-qpke", "--t", "4", "--reps", "6",
                "--eps", "0.05", "--runs", "30", "--seed", "1",
            ],
            tmp_path,
        )
        assert code == 0
        doc = json.loads(text)
        assert doc["results"]["attack_name"] == "classical_keygen"
        assert "key_match_prob" in doc["results"]

    def test_attack_repeat_recover(self, tmp_path):
        code, text = run_cli(
            ["attack", "--protocol", "toy-nika", "--t", "4", "--seed", "3"], tmp_path
        )
        assert code == 0
        doc = json.loads(text)
        assert doc["results"]["attack_name"] == "repeat_and_recover"
        assert doc["results"]["flags"]["bound_satisfied"] is True

    def test_walk_command(self, tmp_path):
        code, text = run_cli(
            ["walk", "--f-bound", "--t", "2..8", "--p-grid", "0:0.1:1", "--seed", "1"],
            tmp_path,
        )
        assert code == 0
        doc = json.loads(text)
        assert doc["results"]["max_ratio_small_p"] <= 1.0

    def test_walk_csv_rows(self, tmp_path):
        code, text = run_cli(
            [
                "walk", "--t", "2..4", "--p-grid", "0:0.5:1", "--seed", "1",
                "--format", "csv",
            ],
            tmp_path,
            name="out.csv",
        )
        assert code == 0
        lines = text.strip().splitlines()
        header = lines[0].split(",")
        assert header[:3] == ["t", "p", "value"]
        # 2 t-values x 3 p-values plus the large-p tail rows
        assert len(lines) > 6

    def test_sweep_csv(self, tmp_path):
        code, text = run_cli(
            [
                "sweep", "--protocol", "toy-nika", "--attack", "repeat-recover",
                "--param", "t", "--values", "1,2,3", "--seed", "5", "--format", "csv",
            ],
            tmp_path,
            name="sweep.csv",
        )
        assert code == 0
        lines = text.strip().splitlines()
        assert len(lines) == 4  # header + 3 cells


class TestDeterminism:
    def test_identical_reports(self, tmp_path):
        args = ["lemmas", "--trials", "15", "--seed", "99"]
        _, first = run_cli(args, tmp_path, "a.json")
        _, second = run_cli(args, tmp_path, "b.json")
        assert first == second

    def test_attack_identical(self, tmp_path):
        args = [
            "attack", "--protocol", "toy-qpke", "--t", "2", "--reps", "4",
            "--eps", "0.1", "--runs", "20", "--seed", "12",
        ]
        _, first = run_cli(args, tmp_path, "a.json")
        _, second = run_cli(args, tmp_path, "b.json")
        assert first == second

    def test_child_seeds_order_independent(self):
        seeds = [child_seed(42, i) for i in range(5)]
        assert seeds == [child_seed(42, i) for i in range(5)]
        assert len(set(seeds)) == 5

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"trials": 5, "seed": 3}))
        code, text = run_cli(["lemmas", "--config", str(cfg), "--trials", "8"], tmp_path)
        assert code == 0
        doc = json.loads(text)
        assert doc["config"]["trials"] == 8
        assert doc["config"]["seed"] == 3

    def test_float_formatting_stable(self, tmp_path):
        report = {"value": 0.1234567890123456789, "nested": [{"x": 2.0}]}
        text = emit_report(report, "json", str(tmp_path / "f.json"))
        assert "0.123456789012" in text


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "qmlab.cli", "lemmas", "--trials", "3", "--seed", "1"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["pass"] is True
