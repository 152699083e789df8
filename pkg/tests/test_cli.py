import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from raxcode.cli import BOUND_COLUMNS, main

DATA = Path(__file__).parent / "data"


def run(tmp_path, command, config, *extra, fmt="csv"):
    out = tmp_path / f"{command}-{config}-{len(list(tmp_path.iterdir()))}.{fmt}"
    code = main([command, "--config", str(DATA / config), "--out", str(out), "--format", fmt, *extra])
    return code, (out.read_bytes() if out.exists() else b"")


def rows(blob: bytes) -> list[dict]:
    return list(csv.DictReader(io.StringIO(blob.decode("utf-8"))))


def _same(a: str, b: str) -> bool:
    try:
        x, y = float(a), float(b)
    except ValueError:
        return a == b
    if math.isinf(x) or math.isinf(y):
        return x == y
    return abs(x - y) <= 1e-12 * max(1.0, abs(y))


@pytest.mark.parametrize("command, config, golden", [
    ("region", "identity.json", "golden_identity_region.csv"),
    ("bound", "identity.json", "golden_identity_bound.csv"),
    ("exponent", "identity.json", "golden_identity_exponent.csv"),
    ("region", "xor.json", "golden_xor_region.csv"),
])
def test_golden(tmp_path, command, config, golden):
    code, blob = run(tmp_path, command, config)
    assert code == 0
    want = (DATA / golden).read_text(encoding="utf-8")
    got_lines, want_lines = blob.decode().split("\n"), want.split("\n")
    assert got_lines[0] == want_lines[0]
    got, exp = rows(blob), rows(want.encode())
    assert len(got) == len(exp)
    for g, e in zip(got, exp):
        assert g.keys() == e.keys()
        assert all(_same(g[k], e[k]) for k in g), (g, e)


def test_region_identity(tmp_path):
    code, blob = run(tmp_path, "region", "identity.json")
    r = rows(blob)
    assert [(x["rates"], x["achievable"], x["violated_subsets"]) for x in r] == [
        ("(0.2)", "true", ""), ("(0.9)", "false", "{}")]


def test_region_xor(tmp_path):
    _, blob = run(tmp_path, "region", "xor.json")
    r = {x["vector"]: x for x in rows(blob)}
    assert r["(0,0)"]["achievable"] == "true"
    assert r["(1,1)"]["achievable"] == "false" and r["(1,1)"]["violated_subsets"] == "{}"


def test_bound_identity(tmp_path):
    _, blob = run(tmp_path, "bound", "identity.json")
    r = rows(blob)
    assert list(r[0].keys()) == BOUND_COLUMNS
    by_n = {int(x["n"]): x for x in r}
    assert float(by_n[10]["p_es_upper"]) == pytest.approx(2 * math.exp(-10 * (math.log(2) - 0.2)), rel=1e-8)
    assert by_n[1]["trivial"] == "true" and by_n[10]["trivial"] == "false"
    assert by_n[10]["collision_vacuous"] == "false"


def test_bound_no_out_vectors(tmp_path):
    _, blob = run(tmp_path, "bound", "noout.json")
    for x in rows(blob):
        assert x["collision_vacuous"] == "true" and x["log_collision_branch"] == "-inf"


def test_bound_grid(tmp_path):
    _, blob = run(tmp_path, "bound", "grid.json")
    (x,) = rows(blob)
    assert x["bound"] == "standard"
    assert float(x["log_p_es_upper"]) == pytest.approx(math.log(2) - 10 * (math.log(2) - 0.2), abs=1e-8)


def test_exponent_rows(tmp_path):
    _, blob = run(tmp_path, "exponent", "xor.json")
    r = rows(blob)
    assert r[-1]["kind"] == "Es_lower"
    kinds = [x["kind"] for x in r[:-1]]
    assert kinds == sorted(kinds, key=lambda k: k != "Em")
    assert float(r[-1]["value"]) == min(float(x["value"]) for x in r[:-1])


def test_simulate_columns_and_bound(tmp_path):
    code, blob = run(tmp_path, "simulate", "identity.json")
    assert code == 0
    r = rows(blob)
    assert len(r) == 2 * 2
    for x in r:
        assert int(x["errors"]) <= int(x["trials"]) == 300
        assert x["within_bound"] == "true"


def test_simulate_noiseless_in_region_zero_errors(tmp_path):
    cfg = {
        "channel": str(DATA / "identity.dmc"),
        "users": [[{"rate": 0.0, "dist": [0.5, 0.5]}]],
        "region": [[0]],
        "simulation": {"n": [3], "trials": 50},
    }
    p = tmp_path / "zero.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "o.csv"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == 0
    (x,) = rows(out.read_bytes())
    assert x["errors"] == "0" and x["decode_error_freq"] == "0"


def test_sweep_cardinality_and_consistency(tmp_path):
    _, blob = run(tmp_path, "sweep", "identity.json")
    r = rows(blob)
    assert len(r) == 3 * 2
    _, bound_blob = run(tmp_path, "bound", "identity.json")
    at_02 = {x["n"]: x["log_p_es_upper"] for x in r if float(x["rate"]) == 0.2}
    for x in rows(bound_blob):
        assert _same(at_02[x["n"]], x["log_p_es_upper"])
    for rate in (0.1, 0.2):
        logs = [float(x["log_p_es_upper"]) for x in r if float(x["rate"]) == rate]
        assert logs == sorted(logs, reverse=True)


@pytest.mark.parametrize("command", ["region", "bound", "exponent"])
def test_json_matches_csv(tmp_path, command):
    _, c = run(tmp_path, command, "identity.json")
    _, j = run(tmp_path, command, "identity.json", fmt="json")
    payload = json.loads(j)
    crow = rows(c)
    assert payload["columns"] == list(crow[0].keys())
    for jr, cr in zip(payload["rows"], crow):
        for k in payload["columns"]:
            v = jr[k]
            if isinstance(v, bool):
                assert cr[k] == ("true" if v else "false")
            elif isinstance(v, (int, float)):
                assert _same(cr[k], repr(float(v)))
            else:
                assert _same(cr[k], v)


def test_byte_identical_across_runs_and_threads(tmp_path):
    _, a = run(tmp_path, "simulate", "identity.json", "--threads", "1")
    _, b = run(tmp_path, "simulate", "identity.json", "--threads", "1")
    _, c = run(tmp_path, "simulate", "identity.json", "--threads", "4")
    assert a == b == c
    _, d = run(tmp_path, "simulate", "identity.json", "--seed", "8")
    assert d != a


def test_csv_format_details(tmp_path):
    _, blob = run(tmp_path, "bound", "identity.json")
    assert b"\r" not in blob and blob.endswith(b"\n")
    blob.decode("utf-8")


def test_malformed_channel_exit_2(tmp_path, capsys):
    code, blob = run(tmp_path, "region", "malformed.json")
    assert code == 2 and blob == b""
    assert "row 1" in capsys.readouterr().err


@pytest.mark.parametrize("mutate", [
    lambda c: c.pop("channel"),
    lambda c: c.update(channel="missing.dmc"),
    lambda c: c.update(region=[[5]]),
    lambda c: c.update(region=[]),
    lambda c: c.update(users=[[{"rate": 0.1}]]),
    lambda c: c.update(users="missing.json"),
    lambda c: c.update(optimizer={"grid_points_rho": 2}),
    lambda c: c.update(bound={"n": []}),
    lambda c: c.update(bound={"n": [0]}),
    lambda c: c.update(format="xml"),
])
def test_config_errors_exit_2(tmp_path, mutate):
    cfg = json.loads((DATA / "identity.json").read_text())
    cfg["channel"] = str(DATA / cfg["channel"])
    mutate(cfg)
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert main(["bound", "--config", str(p)]) == 2


def test_missing_config_and_threads(tmp_path):
    assert main(["region", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["region", "--config", str(DATA / "identity.json"), "--threads", "0"]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["region", "--config", str(tmp_path / "broken.json")]) == 2


def test_budget_exit_3(tmp_path):
    code, blob = run(tmp_path, "simulate", "budget.json")
    assert code == 3 and blob == b""


def test_stdout_and_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "raxcode.cli", "region", "--config", str(DATA / "identity.json")],
                          capture_output=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith(b"vector,rates,in_region")
    proc = subprocess.run([sys.executable, "-m", "raxcode.cli", "region", "--config", str(DATA / "malformed.json")],
                          capture_output=True, check=False)
    assert proc.returncode == 2
