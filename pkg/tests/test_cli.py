import json
import subprocess
import sys

import pytest

from cavprobe.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    (d / "w.json").write_text(json.dumps({
        "dimension": 16,
        "genres": [["hiphop", 60], ["rock", 60], ["jazz", 60]],
        "concepts": [{"attribute": "gender", "positive_value": "female", "direction_seed": 3}],
        "plant": [{"genre": "hiphop", "concept": "gender=female", "strength": -8}],
    }))
    assert run("synth", "--config", d / "w.json", "--out-emb", d / "d.cave",
               "--out-meta", d / "m.csv", "--out-truth", d / "t.json") == 0
    return d


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "selftest" in capsys.readouterr().out


def test_missing_dataset_is_usage_error(capsys):
    assert run("score", "--meta", "m.csv", "--concept", "gender=female", "--out", "r.json") == 1
    assert "--dataset" in capsys.readouterr().err


def test_bad_concept_syntax_is_usage_error():
    assert run("split", "--dataset", "d", "--meta", "m", "--concept", "gender",
               "--split-out", "s.json") == 1


def test_data_error_exit_two(world, capsys):
    code = run("score", "--dataset", world / "d.cave", "--meta", world / "m.csv",
               "--concept", "gender=purple", "--out", world / "x.json")
    assert code == 2
    assert "UnknownPositiveValue" in capsys.readouterr().err


def test_missing_file_exit_two(tmp_path):
    assert run("split", "--dataset", tmp_path / "nope.cave", "--meta", tmp_path / "m.csv",
               "--concept", "gender=female", "--split-out", tmp_path / "s.json") == 2


def test_full_workflow(world, tmp_path):
    d = world
    assert run("split", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--concept", "gender=female", "--split-out", tmp_path / "f.json") == 0
    assert run("split", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--concept", "genre=hiphop", "--split-out", tmp_path / "h.json") == 0
    assert run("train", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--split", tmp_path / "f.json", "--out", tmp_path / "fc.json") == 0
    assert run("train", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--split", tmp_path / "h.json", "--out", tmp_path / "hc.json") == 0
    cav = json.loads((tmp_path / "fc.json").read_text())
    assert cav["dim"] == 16 and cav["concept"] == "gender=female"

    code = run("score", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--concept", "gender=female", "--replicates", 20, "--threads", 2,
               "--out", tmp_path / "r.json", "--csv-dir", tmp_path / "csv",
               "--scores-out", tmp_path / "s.csv", "--split-out", tmp_path / "sp.json",
               "--no-timestamp")
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["run_metadata"]["m"] == 3
    assert report["run_metadata"]["timestamp"] is None
    assert "threads" not in json.dumps(report["run_metadata"]["config"])
    hiphop = next(r for r in report["tcav"] if r["genre"] == "hiphop")
    assert hiphop["direction"] == "negative"
    assert (tmp_path / "s.csv").read_text().startswith("replicate,hiphop,jazz,rock\n")
    assert run("check", "--report", tmp_path / "r.json",
               "--csv", tmp_path / "csv" / "tcav_gender_female.csv") == 0

    code = run("debias", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--base", tmp_path / "hc.json", "--adjust", tmp_path / "fc.json",
               "--mode", "add", "--pool", "genre=hiphop", "--balance-by", "gender",
               "--track", "gender=male", "--out", tmp_path / "curve.csv")
    assert code == 0
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "lambda,ratio" and len(lines) == 22


def test_debias_pool_from_id_file(world, tmp_path):
    d = world
    run("split", "--dataset", d / "d.cave", "--meta", d / "m.csv",
        "--concept", "gender=female", "--split-out", tmp_path / "f.json")
    run("train", "--dataset", d / "d.cave", "--meta", d / "m.csv",
        "--split", tmp_path / "f.json", "--out", tmp_path / "fc.json")
    (tmp_path / "ids.txt").write_text("hiphop-00000\nhiphop-00100\nrock-00000\n")
    code = run("debias", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--base", tmp_path / "fc.json", "--adjust", tmp_path / "fc.json",
               "--mode", "subtract", "--pool", "@" + str(tmp_path / "ids.txt"),
               "--lambdas", "0,0.5", "--track", "gender=male", "--out", tmp_path / "c.csv")
    assert code == 0
    (tmp_path / "ids.txt").write_text("nope\n")
    code = run("debias", "--dataset", d / "d.cave", "--meta", d / "m.csv",
               "--base", tmp_path / "fc.json", "--adjust", tmp_path / "fc.json",
               "--mode", "add", "--pool", "@" + str(tmp_path / "ids.txt"),
               "--track", "gender=male", "--out", tmp_path / "c.csv")
    assert code == 2


def test_strict_escalates_degeneracy(world, tmp_path):
    # the planted hip-hop shift hurts CAV accuracy, so most of 5 replicates fail the gate
    d = world
    args = ["score", "--dataset", d / "d.cave", "--meta", d / "m.csv",
            "--concept", "gender=female", "--replicates", 5,
            "--out", tmp_path / "r.json", "--no-timestamp"]
    assert run(*args) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    flagged = any(r["p_raw"] is None or r["degenerate"] or r["ci_out_of_bounds"]
                  for r in report["tcav"])
    assert flagged
    assert run(*args, "--strict") == 3


def test_seed_env_fallback(world, tmp_path, monkeypatch):
    monkeypatch.setenv("CAVPROBE_SEED", "123")
    run("split", "--dataset", world / "d.cave", "--meta", world / "m.csv",
        "--concept", "gender=female", "--split-out", tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text())["concept"]["seed"] == 123


def test_check_detects_tampering(world, tmp_path):
    d = world
    run("score", "--dataset", d / "d.cave", "--meta", d / "m.csv", "--concept",
        "gender=female", "--replicates", 10, "--out", tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    doc["run_metadata"]["m"] = 99
    (tmp_path / "r.json").write_text(json.dumps(doc))
    assert run("check", "--report", tmp_path / "r.json") == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cavprobe", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("cavprobe ")
