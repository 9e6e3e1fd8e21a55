import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from fracweights.cli import CONFIG_SCHEMA, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CASE_THREE = {"dims": [1, 1], "alpha": ["3/5", "1/5"], "p": 2, "q": 2, "gamma": "3/10", "delta": "1/2"}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def report(out):
    return json.loads((Path(out) / "report.json").read_text())


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_verdict_report(tmp_path):
    out = tmp_path / "out"
    assert run(["verdict", "--config", str(CONFIGS / "case_three_bounded.json"), "--out", str(out)]) == 0
    rep = report(out)
    assert rep["result"]["verdict"]["status"] == "Bounded"
    assert set(rep["provenance"]) == {"tool", "version", "seed", "timestamp"}
    names = [r["name"] for r in rows(out / "constraints.csv")]
    assert "case_three_u" in names and "formula" in names


def test_report_is_reproducible(tmp_path):
    blobs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        run(["verdict", "--config", str(CONFIGS / "endpoint.json"), "--out", str(out)])
        rep = report(out)
        del rep["provenance"]["timestamp"]
        blobs.append(json.dumps(rep, sort_keys=True))
    assert blobs[0] == blobs[1]


def test_endpoint_carries_perturbation(tmp_path):
    out = tmp_path / "out"
    assert run(["verdict", "--config", str(CONFIGS / "endpoint.json"), "--out", str(out)]) == 0
    res = report(out)["result"]
    assert res["verdict"]["status"] == "Endpoint" and "perturbation" in res


@pytest.mark.parametrize("cfg", [
    {"instance": {**CASE_THREE, "alpha": ["3/2", "1/5"]}},  # alpha_i >= N_i
    {"instance": CASE_THREE, "colour": "blue"},  # unknown key
    {"instance": {**CASE_THREE, "p": "abc"}},
    {},  # no instance
])
def test_bad_config_exits_2(tmp_path, cfg, capsys):
    assert run(["verdict", "--config", write(tmp_path, cfg)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path):
    assert run(["verdict", "--config", str(tmp_path / "absent.json")]) == 2


def test_schema_closed():
    assert CONFIG_SCHEMA["additionalProperties"] is False


@pytest.mark.parametrize("name, status", [
    ("case_three_bounded.json", "Bounded"), ("balanced.json", "Bounded"),
    ("case_one_unbounded.json", "Unbounded"), ("endpoint.json", "Endpoint")])
def test_verify_agrees(tmp_path, name, status):
    out = tmp_path / "out"
    assert run(["verify", "--config", str(CONFIGS / name), "--out", str(out)]) == 0
    res = report(out)["result"]
    assert res["verdict"]["status"] == status
    assert res["consistency"]["agree"]
    if status == "Endpoint":
        assert res["consistency"]["flags"] == {}


def test_verify_detects_corruption(tmp_path):
    cfg = json.loads((CONFIGS / "case_three_bounded.json").read_text())
    cfg["debug_corrupt_characteristic"] = True
    out = tmp_path / "out"
    assert run(["verify", "--config", write(tmp_path, cfg), "--out", str(out)]) == 3
    assert not report(out)["result"]["consistency"]["flags"]["sup_trace_bounded"]


def test_verify_size_limit(tmp_path):
    cfg = {"instance": CASE_THREE, "grid": {"points": 513}}
    assert run(["verify", "--config", write(tmp_path, cfg)]) == 2


def test_sweep_table(tmp_path):
    out = tmp_path / "out"
    assert run(["sweep", "--config", str(CONFIGS / "sweep.json"), "--out", str(out)]) == 0
    table = rows(out / "sweep.csv")
    assert len(table) == 81
    assert all(r["status"] == r["dual_status"] for r in table)
    res = report(out)["result"]
    assert res["duality_mismatches"] == 0
    assert sum(res["counts"].values()) == 81 and res["counts"]["Bounded"] > 0


def test_empty_sweep_exits_2(tmp_path):
    cfg = json.loads((CONFIGS / "sweep.json").read_text())
    cfg["sweep"]["gamma"] = {"start": 1, "stop": 0, "step": "1/8"}
    assert run(["sweep", "--config", write(tmp_path, cfg)]) == 2


def test_witness_command(tmp_path):
    out = tmp_path / "out"
    assert run(["witness", "--config", str(CONFIGS / "witness_case_two.json"), "--out", str(out)]) == 0
    wit = report(out)["result"]
    table = rows(out / "witness.csv")
    assert table and {"family", "k"} <= set(table[0])
    assert "BlowUp" in json.dumps(wit)


def test_characteristic_and_operator_commands(tmp_path):
    cfg = {"instance": CASE_THREE, "rectangles": [{"sides": [1.0, 0.5]}],
           "grid": {"points": 65, "extent": 4.0}, "bump_scales": [-1, 0, 1]}
    path = write(tmp_path, cfg)
    assert run(["characteristic", "--config", path, "--out", str(tmp_path / "c")]) == 0
    assert run(["operator", "--config", path, "--out", str(tmp_path / "o")]) == 0
    assert report(tmp_path / "o")["result"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fracweights", "verdict", "--config",
                           str(CONFIGS / "case_one_unbounded.json")], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("status: Unbounded")
