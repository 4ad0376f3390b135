import csv
import json
import os

import pytest

from regionsim.cli import load_config, main, sub_seed

SMALL = """
[synth]
episodes = 30
robot_episodes = 20

[transition]
hidden = 8
max_epochs = 3

[train]
hidden = 8
warmup = 16
batch = 16
"""


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    if code:
        return code, json.loads(err)
    doc = json.loads(out)
    assert doc.pop("status") == "ok" and doc.pop("command") == argv[0]
    return code, doc


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.toml").write_text(SMALL)
    return d


def base(d, cmd):
    return [cmd, "--out", str(d / "out"), "--config", str(d / "cfg.toml")]


def test_synth_is_deterministic(workdir, capsys):
    a, b = workdir / "a", workdir / "b"
    for d in (a, b):
        code, res = run(capsys, "synth", "--out", str(d), "--config", str(workdir / "cfg.toml"),
                        "--seed", "7", "--robots")
        assert code == 0 and res["baseline_episodes"] == 30 and res["robot_episodes"] == 20
    for name in ("baseline.csv", "robot.csv", "layout.json", "planted.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    man = json.loads((a / "synth.manifest.json").read_text())
    assert man["seed"] == 7 and str(a / "baseline.csv") in man["outputs"]


def test_missing_artifact_names_producer(workdir, capsys):
    code, err = run(capsys, "fit-events", "--out", str(workdir / "empty"))
    assert code == 2 and err["error"] == "missing-artifact"
    assert "synth" in err["hint"]
    code, err = run(capsys, "synth", "--out", str(workdir / "empty"))
    assert code == 2 and err["error"] == "missing-seed"


def test_pipeline(workdir, capsys):
    d = workdir
    assert run(capsys, *base(d, "synth"), "--seed", "1", "--robots")[0] == 0
    code, res = run(capsys, *base(d, "fit-events"))
    assert code == 0 and res["variant"] == "region-sampling"
    code, res = run(capsys, *base(d, "fit-effects"), "--seed", "1")
    assert code == 0 and 0 < res["lambda"] <= 2.0

    code, res = run(capsys, *base(d, "train-transition"), "--seed", "1")
    assert code == 0 and set(res) == {"GNN", "RA", "CT", "CV", "CE", "FE", "LA"}

    os.environ["REGIONSIM_TRANSITION_MODEL"] = "planted"
    try:
        code, res = run(capsys, *base(d, "simulate"), "--seed", "1", "--policy", "pursue", "--multi-floor",
                        "--episodes", "20")
        assert code == 0 and res["policy"] == "pursue"
        rows = list(csv.DictReader((d / "out" / "policy_table.csv").read_text().splitlines()))
        assert [r["Robot Strategy"] for r in rows] == ["none", "pursue"]
        assert rows[1]["Mobility"] == "multi-floor" and "±" in rows[1]["Victims"]
        assert rows[1]["Delta"].endswith("%")
        first = (d / "out" / "rollouts.csv").read_bytes()
        run(capsys, *base(d, "simulate"), "--seed", "1", "--policy", "pursue", "--multi-floor",
            "--episodes", "20", "--workers", "2")
        assert (d / "out" / "rollouts.csv").read_bytes() == first

        code, res = run(capsys, *base(d, "evaluate"), "--seed", "1", "--variant", "region-sampling",
                        "--episodes", "50")
        assert code == 0 and set(res) == {"nodes", "time", "shots", "victims"}
        table = (d / "out" / "table_outcomes.csv").read_text().splitlines()
        assert len(table) == 3 and any(m in table[2] for m in ("✓", "✗"))

        code, res = run(capsys, *base(d, "train-policy"), "--seed", "1", "--episodes", "2")
        assert code == 0 and res["episodes"] == 2
        code, res = run(capsys, *base(d, "simulate"), "--seed", "1", "--policy", "ddqn", "--episodes", "3")
        assert code == 0
    finally:
        del os.environ["REGIONSIM_TRANSITION_MODEL"]

    code, res = run(capsys, *base(d, "report"))
    assert code == 0 and res["manifests"] >= 6


def test_ingest_round_trip(workdir, capsys):
    src = workdir / "a" / "baseline.csv"
    out = workdir / "ing"
    (out).mkdir()
    (out / "layout.json").write_bytes((workdir / "a" / "layout.json").read_bytes())
    code, res = run(capsys, "ingest", "--out", str(out), "--input", str(src))
    assert code == 0 and res["episodes"] == 30
    assert (out / "baseline.csv").read_text() == src.read_text()


def test_config_precedence(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[sim]\nt_max = 120.0\nrobots = 3\n")
    cfg = load_config(str(p), env={"REGIONSIM_SIM_ROBOTS": "1", "OTHER": "x"})
    assert cfg["sim"]["t_max"] == 120.0 and cfg["sim"]["robots"] == 1
    assert load_config(None, env={})["sim"]["t_max"] == 300.0
    assert sub_seed(1, "a") == sub_seed(1, "a") != sub_seed(1, "b")
