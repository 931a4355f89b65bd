from __future__ import annotations

import json
import logging

import pytest

from twincert.cli import EXIT_FILE, EXIT_OK, EXIT_UNCERTIFIED, EXIT_USAGE, build_parser, configure_logging, main
from twincert.model import load_network


def _run(capsys, *argv) -> tuple[int, dict, str]:
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    report = json.loads(captured.out) if captured.out.startswith("{") else {}
    return code, report, captured.err


def test_make_toy_is_byte_stable(tmp_path, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["make-toy", "--out", str(first)]) == EXIT_OK
    assert main(["make-toy", "--out", str(second)]) == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 10
    for name in ("toy.json", "linear.json", "unit2.json", "scalar.json", "acc.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    toy = load_network(first / "toy.json")
    assert toy.name == "toy"
    assert toy.layers[0].weights.tolist() == [[1.0, 0.5], [-0.5, 1.0]]


def test_certify_all_refined(toy_files, capsys):
    code, report, err = _run(
        capsys, "certify", "--network", toy_files / "toy.json", "--domain", toy_files / "unit2.json",
        "--delta", "0.1", "--window", "2", "--refine", "all",
    )
    assert code == EXIT_OK
    assert report["epsilon_upper"] == pytest.approx(0.2, abs=1e-6)
    assert report["manifest"]["subcommand"] == "certify"
    assert "eps_upper[0]" in err


def test_certify_basic_scheme(toy_files, capsys):
    code, report, _ = _run(
        capsys, "certify", "--network", toy_files / "toy.json", "--delta", "0.1",
        "--window", "1", "--refine", "all", "--scheme", "btne",
    )
    assert code == EXIT_OK
    assert report["epsilon_upper"] == pytest.approx(1.5, abs=1e-6)


def test_certify_local_point_file(toy_files, capsys):
    point = toy_files / "x0.json"
    point.write_text('{"x0": [0.0, 0.0]}')
    code, report, _ = _run(
        capsys, "certify", "--network", toy_files / "toy.json", "--delta", "0.1",
        "--refine", "all", "--local", point,
    )
    assert code == EXIT_OK
    assert report["epsilon_upper"] == pytest.approx(0.125, abs=1e-6)
    assert report["config"]["mode"] == "local"


def test_report_written_to_file(toy_files, capsys):
    out = toy_files / "report.json"
    code = main(["certify", "--network", str(toy_files / "linear.json"), "--delta", "0.1", "--out", str(out)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "eps_upper[0]" in captured.out
    assert json.loads(out.read_text())["epsilon_upper"] == pytest.approx(0.3, abs=1e-9)


def test_missing_delta_is_a_usage_error(toy_files, capsys):
    assert main(["certify", "--network", str(toy_files / "toy.json")]) == EXIT_USAGE
    assert "--delta" in capsys.readouterr().err


def test_missing_network_is_a_file_error(tmp_path, capsys):
    code = main(["certify", "--network", str(tmp_path / "nope.json"), "--delta", "0.1"])
    assert code == EXIT_FILE
    assert "file error" in capsys.readouterr().err


def test_bad_values_are_usage_errors(toy_files, capsys):
    assert main(["certify", "--network", str(toy_files / "toy.json"), "--delta", "-1"]) == EXIT_USAGE
    assert main(["exact", "--network", str(toy_files / "toy.json"), "--delta", "0.1", "--outputs", "3"]) == EXIT_USAGE


def test_exact_and_oracle(toy_files, capsys):
    code, report, _ = _run(capsys, "exact", "--network", toy_files / "toy.json", "--delta", "0.1")
    assert code == EXIT_OK
    assert report["epsilon_exact"] == pytest.approx(0.2, abs=1e-6)
    code, report, _ = _run(
        capsys, "oracle", "--network", toy_files / "toy.json", "--delta", "0.1", "--grid-step", "0.005",
    )
    assert code == EXIT_OK
    assert 0.199 <= report["epsilon_grid"] <= 0.2 + 1e-9


def test_pgd_on_linear_network(toy_files, capsys):
    data = toy_files / "data.csv"
    data.write_text("0.0,0.0\n")
    code, report, _ = _run(
        capsys, "pgd", "--network", toy_files / "linear.json", "--delta", "0.1", "--dataset", data,
    )
    assert code == EXIT_OK
    assert report["epsilon_lower"] == pytest.approx(0.3)
    assert report["manifest"]["parameters"]["seed"] == 0


def test_acc_verdicts(tmp_path, capsys):
    main(["make-toy", "--out", str(tmp_path)])
    capsys.readouterr()
    code, report, err = _run(capsys, "acc", "--config", tmp_path / "scalar.json")
    assert code == EXIT_OK
    assert "invariant set: nonempty (2 halfspaces)" in err
    assert report["invariant"]["converged"] is True
    code, report, err = _run(capsys, "acc", "--config", tmp_path / "scalar.json", "--dd-bound", "1.0")
    assert code == EXIT_OK
    assert "invariant set: empty" in err


def test_acc_without_fixpoint_is_not_certified(tmp_path, capsys):
    main(["make-toy", "--out", str(tmp_path)])
    capsys.readouterr()
    code, report, err = _run(
        capsys, "acc", "--config", tmp_path / "scalar.json", "--dd-bound", "0.95", "--max-iters", "1",
        "--simulate", "5", "--trajectory", tmp_path / "traj.csv",
    )
    assert code == EXIT_UNCERTIFIED
    assert "invariant set: not certified (no fixpoint after 1 iterations)" in err
    assert report["invariant"]["verdict"] == "unknown"
    assert report["invariant"]["converged"] is False
    assert report["simulation"]["region"] == "safe"


def test_acc_with_certified_perception_error(toy_files, capsys):
    main(["make-toy", "--out", str(toy_files)])
    capsys.readouterr()
    cert = toy_files / "cert.json"
    assert main([
        "certify", "--network", str(toy_files / "toy.json"), "--delta", "0.1", "--refine", "all", "--out", str(cert),
    ]) == EXIT_OK
    traj = toy_files / "traj.csv"
    code, report, err = _run(
        capsys, "acc", "--config", toy_files / "scalar.json", "--cert-report", cert, "--model-error", "0.1",
        "--simulate", "50", "--trajectory", traj, "--max-error",
    )
    assert code == EXIT_OK
    assert report["perception"]["dd_bound"] == pytest.approx(0.3, abs=1e-6)
    assert report["simulation"]["safe"] is True
    assert report["max_tolerable_error"] == pytest.approx(0.8, abs=1e-3)
    assert traj.exists()
    assert "simulation (50 steps, extreme): safe" in err


def test_stable_reports_ignore_jobs(toy_files, capsys):
    outputs = []
    for jobs in ("1", "4"):
        code = main([
            "certify", "--network", str(toy_files / "toy.json"), "--delta", "0.1",
            "--refine", "1", "--jobs", jobs, "--stable",
        ])
        assert code == EXIT_OK
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    manifest = json.loads(outputs[0])["manifest"]
    assert "timestamp" not in manifest
    assert "jobs" not in manifest["parameters"]


def test_history_lists_recorded_runs(toy_files, capsys):
    db = toy_files / "runs.db"
    for _ in range(2):
        assert main([
            "exact", "--network", str(toy_files / "linear.json"), "--delta", "0.1", "--history", str(db),
        ]) == EXIT_OK
    capsys.readouterr()
    assert main(["history", "--db", str(db)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert all("exact" in line and "result=0.3" in line for line in lines)


def test_empty_history(tmp_path, capsys):
    assert main(["history", "--db", str(tmp_path / "empty.db")]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "no runs recorded"


def test_log_level_from_environment(monkeypatch):
    monkeypatch.setenv("TWINCERT_LOG", "debug")
    configure_logging()
    assert logging.getLogger().level == logging.DEBUG
    monkeypatch.setenv("TWINCERT_LOG", "info")
    configure_logging()
    assert logging.getLogger().level == logging.INFO
    monkeypatch.delenv("TWINCERT_LOG")
    configure_logging()
    assert logging.getLogger().level == logging.ERROR
    configure_logging(verbose=True)
    assert logging.getLogger().level == logging.INFO


def test_unknown_log_level_falls_back(monkeypatch, capsys):
    monkeypatch.setenv("TWINCERT_LOG", "loud")
    configure_logging()
    assert logging.getLogger().level == logging.ERROR
    assert "Unknown TWINCERT_LOG value 'loud'" in capsys.readouterr().err


def test_parser_defaults():
    args = build_parser().parse_args(["certify", "--network", "n.json", "--delta", "0.1"])
    assert args.window == 2
    assert args.refine == 0
    assert args.scheme == "itne"
    assert args.prebounds == "lp"
    args = build_parser().parse_args(["certify", "--network", "n.json", "--delta", "0.1", "--refine", "all"])
    assert args.refine is None
