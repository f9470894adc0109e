import json

import pytest

from gelunet.cli import run


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_synth_verify_audit_square(work, capsys):
    assert run(["synth", "--target", "square", "--eps", "1e-3", "--order", "3", "--out", "sq.json"]) == 0
    doc = json.loads((work / "sq.json").read_text())
    assert doc["meta"]["target"] == "square" and doc["meta"]["order"] == 3
    cert = json.loads((work / "sq.cert.json").read_text())
    assert cert["verification"]["pass"] is True
    code = run(["verify", "--net", "sq.json", "--target", "square", "--domain", "-2:2",
                "--order", "3", "--grid", "2048", "--out", "rep.json"])
    assert code == 0
    rep = json.loads((work / "rep.json").read_text())
    assert rep["pass"] is True and rep["order"] == 3 and rep["seed"] == 0
    assert {"k", "max_err", "argmax"} <= set(rep["per_index"][0])
    capsys.readouterr()
    assert run(["audit", "--net", "sq.json", "--json"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["depth"] == 2 and cfg["nonzeros"] <= 6


@pytest.mark.parametrize(
    "argv",
    [
        ["synth", "--target", "clip", "--eps", "1e-3", "--order", "2", "--clip-A", "1", "--out", "n.json"],
        ["synth", "--target", "mul2", "--eps", "1e-3", "--order", "2", "--out", "n.json"],
        ["synth", "--target", "monomial", "--eps", "1e-2", "--order", "2", "--multi", "2,1", "--out", "n.json"],
        ["synth", "--target", "reciprocal_naive", "--eps", "1e-2", "--order", "3", "--a", "0.5", "--b", "1",
         "--out", "n.json"],
    ],
)
def test_round_trip_agrees_with_certificate(work, argv):
    code = run(argv)
    cert = json.loads((work / "n.cert.json").read_text())
    assert code == (0 if cert["verification"]["pass"] else 1)
    order = argv[argv.index("--order") + 1]
    verify_code = run(["verify", "--net", "n.json", "--order", order])
    assert (verify_code == 0) == cert["verification"]["pass"]


def test_polynomial_from_coefficient_file(work):
    (work / "c.json").write_text(json.dumps({"coeffs": {"2,0": 1.0, "1,1": 0.5}}))
    assert run(["synth", "--target", "polynomial", "--eps", "1e-2", "--order", "3", "--coeffs", "c.json",
                "--out", "p.json"]) == 0
    assert run(["verify", "--net", "p.json"]) == 0


def test_partition_writes_members(work):
    assert run(["synth", "--target", "partition_of_unity", "--eps", "1e-2", "--order", "1", "--N", "3",
                "--out", "p.json"]) == 0
    assert all((work / f"p_{i}.json").exists() for i in (1, 2, 3))


def test_compile_verb(work, capsys):
    code = run(["compile", "--expr", "x^2 + exp(-x)", "--var", "x=0:1", "--eps", "5e-2", "--order", "3",
                "--out", "c.json"])
    assert code == 0
    assert "pass=True" in capsys.readouterr().out
    assert run(["verify", "--net", "c.json", "--expr", "x^2 + exp(-x)", "--var", "x=0:1",
                "--order", "3", "--eps", "5e-2"]) == 0


def test_verify_with_probes_and_seed(work):
    run(["synth", "--target", "square", "--eps", "1e-3", "--order", "2", "--out", "sq.json"])
    assert run(["verify", "--net", "sq.json", "--probes", "0.3;0.9", "--random-probes", "4",
                "--seed", "7", "--out", "a.json"]) == 0
    run(["verify", "--net", "sq.json", "--probes", "0.3;0.9", "--random-probes", "4", "--seed", "7",
         "--out", "b.json"])
    a, b = (json.loads((work / f).read_text()) for f in ("a.json", "b.json"))
    assert a == b and a["seed"] == 7 and len(a["grid"]["probe_points"]) == 6


def test_measured_failure_exit_code(work):
    run(["synth", "--target", "square", "--eps", "1e-3", "--order", "2", "--out", "sq.json"])
    # a square network checked against the identity fails the measurement
    assert run(["verify", "--net", "sq.json", "--target", "identity", "--domain", "-1:1", "--order", "2",
                "--eps", "1e-3"]) == 1


@pytest.mark.parametrize(
    "argv, message",
    [
        (["compile", "--expr", "x^^2", "--var", "x=0:1", "--eps", "1e-2", "--order", "2"], "column 3"),
        (["compile", "--expr", "1/y", "--var", "y=-1:1", "--eps", "1e-2", "--order", "3"], "contains 0"),
        (["compile", "--expr", "x + z", "--var", "x=0:1", "--eps", "1e-2", "--order", "2"], "unknown identifier"),
        (["compile", "--expr", "x", "--var", "x=1:0", "--eps", "1e-2", "--order", "2"], "empty interval"),
        (["synth", "--target", "bogus", "--eps", "1e-2", "--order", "2", "--out", "x.json"], "invalid choice"),
        (["synth", "--target", "clip", "--eps", "1e-2", "--order", "2", "--out", "x.json"], "--clip-A"),
        (["synth", "--target", "square", "--eps", "2", "--order", "2", "--out", "x.json"], "eps"),
        (["verify", "--net", "missing.json", "--target", "square"], "cannot read"),
        (["audit"], "required"),
        ([], "required"),
    ],
)
def test_input_errors_exit_2(work, capsys, argv, message):
    assert run(argv) == 2
    assert message in capsys.readouterr().err


def test_malformed_network_file(work, capsys):
    (work / "bad.json").write_text('{"format_version": 1, "layers": [{"rows": 2}]}')
    assert run(["audit", "--net", "bad.json"]) == 2
    assert "malformed" in capsys.readouterr().err
