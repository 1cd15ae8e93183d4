import json
from pathlib import Path

import numpy as np
import pytest

from mspde import csvio
from mspde.cli import main
from mspde.config import build_config, from_canonical, load_config, parse_text
from mspde.errors import ConfigError

FAST = """
# quick solve
experiment.name = solve
time.N_t = 64
mc.seed = 5
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_and_canonical_round_trip():
    vals = parse_text("time.T = 0.25  # comment\ndrift.lambdas = 0.1, 0.05\n\n")
    assert vals == {"time.T": 0.25, "drift.lambdas": (0.1, 0.05)}
    cfg = build_config(vals, "cauchy")
    again = from_canonical(cfg.canonical_text())
    assert again == cfg and again.hash() == cfg.hash()


@pytest.mark.parametrize("text", ["nonsense", "foo.bar = 1", "domain.K = 1.5", "time.T = abc"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_text(text)


@pytest.mark.parametrize("vals", [
    {"domain.K": 200},  # N_x < 2K
    {"covariance.M": 100},  # M > K, diagonal
    {"exponents.q": 2.0},  # gate
    {"time.N_t": 100},
    {"covariance.variant": "spiky"},
    {"drift.name": "quartic"},
])
def test_invariants_rejected(vals):
    with pytest.raises(ConfigError):
        build_config(vals)


def test_recipe_layering(tmp_path):
    cfg = load_config(write(tmp_path, "experiment.name = isometry\nmc.N_paths = 50\n"))
    assert cfg["drift.name"] == "zero" and cfg["time.N_t"] == 2048 and cfg["mc.N_paths"] == 50
    cfg = load_config(write(tmp_path, "mc.N_paths = 7\n"), experiment="comparison", out="elsewhere")
    assert cfg["covariance.variant"] == "kernel" and cfg["mc.N_paths"] == 7
    assert cfg["output.dir"] == "elsewhere"


def test_exit_codes(tmp_path, capsys):
    assert main(["run", str(write(tmp_path, "exponents.q = 2\nexponents.p = 4\n"))]) == 2
    assert "d/(2q) < 1/2 - 1/p" in capsys.readouterr().err
    assert main(["run", str(write(tmp_path, "experiment.name = nope\n"))]) == 2
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    assert main(["bogus"]) == 2


def test_assertion_failure_exit_one(tmp_path):
    # a finite-difference step far outside the linear regime makes the oracle check fail
    text = "experiment.name = tangent-oracle\ntime.N_t = 64\nexperiment.directions = 2\nexperiment.fd_eps = 200\n"
    assert main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 1
    assert json.loads((tmp_path / "o" / "meta.json").read_text())["exit_code"] == 1


def test_run_and_replay(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", str(write(tmp_path, FAST)), "--out", str(out)]) == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["seed"] == 5 and meta["trajectory"] == "trajectory.csv"
    assert set(meta["outputs"]) == {"trajectory.csv", "solution.csv", "stopping.csv"}
    header, rows = csvio.read_csv(out / "trajectory.csv")
    assert len(header) == 2 + 64 + 16 and len(rows) == 65
    printed = capsys.readouterr().out
    assert "20" not in printed.split("wrote")[0].replace("PASS", "")  # no timestamps on stdout
    assert main(["replay", str(out / "meta.json")]) == 0
    for name in meta["outputs"]:
        assert (out / name).read_bytes() == (out / "replay" / name).read_bytes()


def test_replay_detects_edited_increment(tmp_path):
    out = tmp_path / "o"
    main(["run", str(write(tmp_path, FAST)), "--out", str(out)])
    p = out / "trajectory.csv"
    lines = p.read_text().splitlines()
    cells = lines[3].split(",")
    cells[-1] = repr(float(cells[-1]) + 1e-3)
    lines[3] = ",".join(cells)
    p.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(out / "meta.json")]) == 2


def test_replay_detects_edited_config(tmp_path):
    out = tmp_path / "o"
    main(["run", str(write(tmp_path, FAST)), "--out", str(out)])
    meta = json.loads((out / "meta.json").read_text())
    meta["config"] = meta["config"].replace("mc.seed = 5", "mc.seed = 6")
    (out / "meta.json").write_text(json.dumps(meta))
    assert main(["replay", str(out / "meta.json")]) == 2


def test_tangent_oracle_replay(tmp_path):
    text = "experiment.name = tangent-oracle\ntime.N_t = 64\nexperiment.directions = 3\n"
    out = tmp_path / "o"
    assert main(["run", str(write(tmp_path, text)), "--out", str(out)]) == 0
    assert main(["replay", str(out / "meta.json")]) == 0


@pytest.mark.parametrize("experiment,extra", [
    ("comparison", "experiment.resolutions = 64, 128\nmc.N_paths = 30\n"),
    ("cauchy", "mc.N_paths = 5\n"),
    ("moments", "mc.N_paths = 30\n"),
    ("isometry", "time.N_t = 64\nmc.N_paths = 300\n"),
])
def test_outputs_identical_across_thread_counts(tmp_path, monkeypatch, experiment, extra):
    cfg = write(tmp_path, f"experiment.name = {experiment}\ntime.N_t = 64\n{extra}")
    hashes = []
    for threads in ("1", "3"):
        monkeypatch.setenv("MSPDE_THREADS", threads)
        out = tmp_path / f"t{threads}"
        code = main(["run", str(cfg), "--out", str(out)])
        assert code in (0, 1)
        meta = json.loads((out / "meta.json").read_text())
        hashes.append(meta["outputs"])
    assert hashes[0] == hashes[1]


def test_csv_float_format(tmp_path):
    p = csvio.write_csv(tmp_path / "x.csv", ("a", "b", "c"), [(0.1, None, np.float64(1 / 3)), {"a": 2, "c": True}])
    assert p.read_text() == "a,b,c\n0.1,,0.3333333333333333\n2,,1\n"
    _, rows = csvio.read_csv(p)
    assert float(rows[0][2]) == 1 / 3
