import json

import pytest

from ccnlab.cli import EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION, main


def test_run_writes_outputs_and_is_deterministic(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", "--out", str(tmp_path / "b")]) == EXIT_OK
    capsys.readouterr()
    a, b = tmp_path / "a", tmp_path / "b"
    assert {p.name for p in a.iterdir()} == {"trace.jsonl", "metrics.csv", "report.json"}
    assert (a / "trace.jsonl").read_bytes() == (b / "trace.jsonl").read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["net"]["carol"] == {"beta": 54} and report["net"]["bob"]["alpha"] == 27


def test_run_config_file_and_protocol_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"path": {"chains": ["x", "y"], "parties": ["p", "q", "r"], "amount": 10,
                                        "rates": [1], "drain_rates": [0, 0], "timelocks": [20, 10]}}))
    assert main(["run", "--config", str(cfg), "--protocol", "htlc", "--format", "csv"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("metric,scope,key,value")


def test_run_reports_violation_for_unsettled_honest_party(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "path": {"chains": ["alpha", "beta"], "parties": ["alice", "bob", "carol"], "amount": 30,
                 "rates": ["2"], "drain_rates": ["1", "2"], "timelocks": [40, 30]},
        "faults": [{"party": "bob", "trigger": "unlock", "kind": "passive"}],
        "strategies": {"alice": "refund2"}, "watchers_per_chain": 0,
    }))
    assert main(["run", "--config", str(cfg)]) == EXIT_VIOLATION
    assert json.loads(capsys.readouterr().out)["honest_losses"]


@pytest.mark.parametrize("argv", [
    ["run", "--config", "missing.json"],
    ["run", "--seed", "-1"],
    ["unlink", "--trials", "10"],
    ["unlink", "--trials", "100", "--corruption", "I,H1,H2,J"],
    ["bogus"],
])
def test_config_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        code = main(argv)
        raise SystemExit(code)
    assert exc.value.code == EXIT_CONFIG


def test_cost_command(capsys):
    assert main(["cost", "-N", "1", "5"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["ccn_constant"] and data["htlc_linear"]


def test_unlink_command_flags_linkage(tmp_path, capsys):
    assert main(["unlink", "--trials", "100", "--corruption", "I,H2"]) == EXIT_VIOLATION
    out = tmp_path / "u"
    argv = ["unlink", "--trials", "100", "--protocol", "htlc", "--adversary", "hashlock-matcher", "--out", str(out)]
    assert main(argv) == EXIT_OK
    assert json.loads((out / "report.json").read_text())["advantage"] == 0.5


def test_atomicity_command(tmp_path, capsys):
    assert main(["atomicity", "--max-hops", "1", "--workers", "1", "--out", str(tmp_path)]) == EXIT_OK
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["schedules"] == 405 and data["counterexamples"] == [] and data["complete"]
