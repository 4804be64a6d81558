import json
import math

import pytest

from blowup_lab import export
from blowup_lab.cli import build_parser, load_defaults, main, resolve_params


def run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main([*argv, "--out-dir", str(out)])
    return code, out


def test_defaults_are_versioned():
    d = load_defaults()
    assert d["version"] == 1
    assert set(d["scenarios"]) == {"example-a", "example-b", "example-c", "example-d", "example-e"}
    assert set(d["tools"]) == {"blowup-time", "classify", "growth-check", "rd-run"}


def test_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"r": 0.2, "t": [0.3]}))
    args = build_parser().parse_args(["example-c", "--config", str(cfg), "--r", "0.1"])
    P = resolve_params(args)
    assert P["r"] == 0.1 and P["t"] == [0.3] and P["p"] == [2]


def test_example_c_report(tmp_path):
    code, out = run(tmp_path, "example-c", "--r", "0.25", "--p", "2")
    assert code == 0
    rep = export.load_json(out / "example-c.json")
    assert math.isclose(rep["results"]["2.0"]["blowup_time"], math.log(2), rel_tol=1e-15)
    assert rep["ok"]


def test_example_e_minimal_p_and_dims(tmp_path):
    code, out = run(tmp_path, "example-e", "--levels", "4", "16", "--horizon", "0.05")
    assert code == 0
    res = export.load_json(out / "example-e.json")["results"]
    assert res["minimal_p"] == 3 and res["dims"] == [1, 2]
    assert (out / "example-e_level_4.csv").read_text().splitlines()[0] == "t,L2,sup"


def test_example_d_at_zero_is_convergent(tmp_path):
    code, out = run(tmp_path, "example-d", "--t", "0")
    assert code == 0
    cert = export.load_json(out / "example-d.json")["results"]["certificates"][0]
    assert cert["verdict"] == "convergent"


def test_manifest_lists_artifacts(tmp_path):
    code, out = run(tmp_path, "blowup-time", "--source", "s_squared", "--z0", "1", "--eps", "0.5")
    assert code == 0
    man = export.load_json(out / "manifest.json")
    assert man["params_sha256"] == export.params_hash(man["params"])
    for a in man["artifacts"]:
        assert export.sha256_file(out / a["path"]) == a["sha256"]
    rep = export.load_json(out / "blowup-time.json")
    assert abs(rep["results"]["blowup_time"]["T"] - 1) <= 1e-9
    assert abs(rep["results"]["invert"]["z"] - 2) <= 1e-9


def test_rerun_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["example-b", "--out-dir", str(a)]) == 0
    assert main(["example-b", "--out-dir", str(b)]) == 0
    for p in sorted(a.iterdir()):
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_seed_does_not_change_closed_forms(tmp_path):
    r1 = tmp_path / "s1"
    r2 = tmp_path / "s2"
    assert main(["example-c", "--seed", "1", "--out-dir", str(r1)]) == 0
    assert main(["example-c", "--seed", "7", "--out-dir", str(r2)]) == 0
    a, b = (export.load_json(d / "example-c.json")["results"] for d in (r1, r2))
    assert a["2.0"] == b["2.0"]
    assert (r1 / "example-c_norm_trace.csv").read_bytes() == (r2 / "example-c_norm_trace.csv").read_bytes()


def test_failed_check_exits_nonzero_with_failures(tmp_path):
    code, out = run(tmp_path, "classify", "--source", "s_squared")
    assert code == 0
    code, out = run(tmp_path, "example-e", "--p", "2", "2.5", "--levels", "4", "--horizon", "0.01")
    assert code == 1
    rep = export.load_json(out / "example-e.json")
    assert not rep["ok"] and "growth_exponent_found" in [f["name"] for f in rep["failures"]]


@pytest.mark.parametrize("argv", [["example-c", "--r", "0.5"], ["rd-run", "--truncation", "-1"], ["rd-run", "--data", "bogus"]])
def test_invalid_parameters_exit_2(tmp_path, argv, capsys):
    code, _ = run(tmp_path, *argv)
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_rd_run_tool(tmp_path):
    code, out = run(tmp_path, "rd-run", "--horizon", "0.02", "--format", "csv")
    assert code == 0
    assert (out / "rd-run_trace.csv").read_text().startswith("t,L2,sup\n")
    assert not (out / "rd-run.json").exists()


def test_pass_lines_printed(tmp_path, capsys):
    run(tmp_path, "growth-check", "--p", "3")
    run(tmp_path, "example-a", "--samples", "3")
    lines = capsys.readouterr().out.splitlines()
    assert any(l.startswith("[PASS] example-a: gronwall_bound") for l in lines)
