import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lqmfg.cli import EXIT_CONFIG, EXIT_ESCAPE, EXIT_MISMATCH, EXIT_OK, main, reproduce
from lqmfg.config import (ConfigError, EXAMPLES, dump_model, load_config, load_example,
                          normalize_example_id, parse_config)
from lqmfg.model import GameModel
from lqmfg.nare import solve_are

from conftest import random_model

BASE = {"model": {"A": 0.2, "B": 1, "Q": 1, "R": 1, "T": 1.0, "G": 1, "Gamma": 1.2}}


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def summary(out):
    with open(out / "summary.json") as fh:
        return json.load(fh)


class TestParsing:
    def test_minimal(self):
        cfg = parse_config(BASE)
        assert cfg.model.T == 1.0 and cfg.grid == "default" and cfg.task is None

    @pytest.mark.parametrize("doc", [
        {**BASE, "modle": {}},
        {"model": {**BASE["model"], "Gama": 1}},
        {**BASE, "simulation": {"N": 2, "paths": 1, "seed": 0, "sedd": 1}},
        {**BASE, "kappa": {"nodes": 11, "node": 3}},
        {**BASE, "nare": {"delta": 1}},
        {**BASE, "finite_n": {"N": [2, 3], "M": 1}},
    ])
    def test_unknown_keys_rejected(self, doc):
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_config(doc)

    @pytest.mark.parametrize("doc", [
        {},
        {**BASE, "task": "solve"},
        {**BASE, "grid": "ultra"},
        {**BASE, "x0": [1, 2]},
        {**BASE, "kappa": {"nodes": 10}},
        {**BASE, "simulation": {"N": 2, "paths": 1}},
        {**BASE, "simulation": {"N": 2, "paths": 1.5, "seed": 0}},
        {**BASE, "simulation": {"N": 2, "paths": 1, "seed": -3}},
        {**BASE, "simulation": {"N": [], "paths": 1, "seed": 0}},
        {**BASE, "simulation": {"N": 2, "paths": 1, "seed": 0, "profile": "greedy"}},
        {**BASE, "example": "ex9"},
        {"model": {**BASE["model"], "Qf": "riccati"}},
        {"model": {**BASE["model"], "A": [[1, 2]]}},
        {"model": {**BASE["model"], "T": True}},
    ])
    def test_malformed_rejected(self, doc):
        with pytest.raises(ConfigError):
            parse_config(doc)

    def test_qf_from_are(self):
        cfg = parse_config({"model": {**BASE["model"], "Qf": "are"}})
        assert cfg.qf_from_are
        assert np.array_equal(cfg.model.Qf, solve_are(cfg.model).lambda1_inf)

    def test_task_requirements(self):
        cfg = parse_config({**BASE, "task": "limit"})
        cfg.require("limit")
        with pytest.raises(ConfigError):
            cfg.require("check")
        with pytest.raises(ConfigError):
            parse_config(BASE).require("simulate")
        with pytest.raises(ConfigError):
            parse_config({**BASE, "finite_n": {"N": [5]}}).require("finite-n")

    def test_missing_and_invalid_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")
        p = tmp_path / "bad.json"
        p.write_text("{model: }")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(p)

    @pytest.mark.parametrize("name", ["ex5", "example-5", "example5", "EX5", "example_5"])
    def test_example_ids(self, name):
        assert normalize_example_id(name) == "ex5"

    @pytest.mark.parametrize("key", EXAMPLES)
    def test_shipped_examples_parse(self, key):
        assert load_example(key).model.n in (1, 2)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 2, 3]))
def test_model_round_trip(seed, n):
    m = random_model(np.random.default_rng(seed), n)
    back = parse_config({"model": json.loads(dump_model(m))}).model
    for name in ("A", "B", "Q", "R", "G", "D", "Gamma", "eta", "Qf", "Gammaf", "etaf"):
        assert np.array_equal(getattr(m, name), getattr(back, name)), name
    assert back.T == m.T


class TestRun:
    def test_check_example_three(self, tmp_path, capsys):
        cfg = write(tmp_path, load_example_doc("ex3"))
        out = tmp_path / "out"
        assert main(["check", "--config", cfg, "--out", str(out)]) == EXIT_OK
        s = summary(out)
        assert s["result"]["verdict"] == "not solvable"
        lo, hi = s["result"]["escape_bracket"]
        assert 1.0 < lo <= hi < 1.2
        assert (out / "lambda2.csv").exists()

    def test_limit_escape_exit_code(self, tmp_path):
        out = tmp_path / "out"
        assert main(["limit", "--config", write(tmp_path, load_example_doc("ex3")),
                     "--out", str(out)]) == EXIT_ESCAPE
        assert "error" in summary(out)

    def test_invalid_R(self, tmp_path, capsys):
        doc = {"model": {**BASE["model"], "R": -1}, "task": "limit"}
        out = tmp_path / "out"
        assert main(["limit", "--config", write(tmp_path, doc), "--out", str(out)]) == EXIT_CONFIG
        s = summary(out)
        assert s["exit_code"] == EXIT_CONFIG and any("R" in v for v in s["violations"])
        assert "admissibility" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [
        ["limit"],
        ["limit", "ex5", "--config", "x.json"],
        ["reproduce"],
        ["reproduce", "ex9"],
        ["limit", "--config", "does-not-exist.json"],
        ["simulate", "--config", "CFG", "--seed", "-1"],
    ])
    def test_bad_invocations(self, argv, tmp_path):
        argv = [write(tmp_path, BASE) if a == "CFG" else a for a in argv]
        assert main(argv + ["--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_limit_outputs(self, tmp_path):
        out = tmp_path / "out"
        doc = {**load_example_doc("ex2"), "task": "limit"}
        assert main(["limit", "--config", write(tmp_path, doc), "--out", str(out)]) == EXIT_OK
        s = summary(out)
        assert sorted(s["csv"]) == sorted(f"{k}.csv" for k in
                                          ("lambda1", "lambda2", "lambda3", "chi1", "chi2", "xbar"))
        assert s["result"]["lambda1_0"][0][0] == pytest.approx(0.2 + np.sqrt(1.04), abs=1e-9)

    def test_csv_floats_round_trip(self, tmp_path):
        out = tmp_path / "out"
        main(["kappa", "--config", write(tmp_path, {**BASE, "kappa": {"nodes": 21}}), "--out", str(out)])
        with open(out / "kappa_profile.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "kappa"]
        assert all(repr(float(v)) == v for r in rows[1:] for v in r)

    def test_simulate_is_byte_deterministic(self, tmp_path):
        doc = {**load_example_doc("ex2"), "task": "simulate",
               "simulation": {"N": [4, 8], "paths": 30, "seed": 11, "dt": 0.01, "initial_mean": [1.0]}}
        cfg = write(tmp_path, doc)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", cfg, "--out", str(a)]) == EXIT_OK
        assert main(["simulate", "--config", cfg, "--out", str(b)]) == EXIT_OK
        for name in ("simulate_N4.csv", "simulate_N8.csv", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        c = tmp_path / "c"
        main(["simulate", "--config", cfg, "--out", str(c), "--seed", "12"])
        assert (a / "simulate_N4.csv").read_bytes() != (c / "simulate_N4.csv").read_bytes()

    def test_nare_task(self, tmp_path):
        out = tmp_path / "out"
        assert main(["nare", "--config", write(tmp_path, load_example_doc("ex5")),
                     "--out", str(out)]) == EXIT_OK
        r = summary(out)["result"]
        assert r["verdict"] == "stabilizing_solution" and r["probe"]["decayed"]


def load_example_doc(key):
    from importlib import resources
    doc = json.loads(resources.files("lqmfg").joinpath("data", f"{key}.json").read_text())
    doc.pop("task", None)
    doc.pop("example", None)
    return doc


class TestReproduce:
    def test_example_five(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["reproduce", "example-5", "--out", str(out)]) == EXIT_OK
        rows = {r["quantity"]: r for r in summary(out)["rows"]}
        assert rows["lambda2_inf[0,0]"]["computed"] == pytest.approx(16.238985, abs=1e-4)
        assert rows["lambda2_inf[1,1]"]["computed"] == pytest.approx(1.570208, abs=1e-4)
        assert "PASS  lambda2_inf[0,1]" in capsys.readouterr().out
        assert (out / "ex5_comparison.csv").exists()

    def test_example_six(self, tmp_path):
        assert reproduce("ex6", str(tmp_path)) == EXIT_OK
        assert summary(tmp_path)["passed"]

    def test_mismatch_exit_code(self, tmp_path):
        # Example 2 with an escaping horizon reports a failed row
        cfg = load_example("ex2")
        from dataclasses import replace
        bad = replace(cfg, model=cfg.model.replace(Qf=np.zeros((1, 1)), G=np.array([[3.0]]),
                                                   Gamma=np.array([[3.0]])))
        assert reproduce("ex2", str(tmp_path), bad) == EXIT_MISMATCH

    def test_console_entry_point(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "lqmfg.cli", "reproduce", "ex6", "--out", str(tmp_path)],
                             capture_output=True, text=True)
        assert out.returncode == 0 and out.stdout.startswith("PASS")
