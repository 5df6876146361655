import csv
import json

import numpy as np
import pytest

from clf_cbf_dcp.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from clf_cbf_dcp.simulation import TrajectoryRecord


def _outcome(path):
    return json.loads(path.read_text())["outcome"]


def _summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_case1(tmp_path):
    code = main(["simulate", "--scenario", "case1", "--controllers", "cbf_qp,penalty_qp,dcp",
                 "--init", "0,7", "--output-dir", str(tmp_path), "--svg"])
    assert code == EXIT_OK
    assert sorted(p.name for p in tmp_path.glob("*.csv")) == [
        "case1_cbf_qp_0.csv", "case1_dcp_0.csv", "case1_penalty_qp_0.csv"]
    for name in ("cbf_qp", "penalty_qp"):
        o = _outcome(tmp_path / f"case1_{name}_0.json")
        assert o["kind"] == "UndesiredEquilibrium"
        assert np.linalg.norm(np.array(o["point"]) - [0.0, 6.0]) <= 5e-2
    assert _outcome(tmp_path / "case1_dcp_0.json")["kind"] == "ReachedOrigin"
    svg = (tmp_path / "case1_trajectories.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg and "equilibrium" in svg


def test_simulate_case2(tmp_path):
    code = main(["simulate", "--scenario", "case2", "--init", "0.5,4;-0.5,4;0,5.3",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    for i in range(3):
        for name in ("cbf_qp", "penalty_qp"):
            o = _outcome(tmp_path / f"case2_{name}_{i}.json")
            assert o["kind"] == "UndesiredEquilibrium"
            assert np.linalg.norm(np.array(o["point"]) - [0.0, 3.65]) <= 5e-2
        dcp = TrajectoryRecord.read(tmp_path / f"case2_dcp_{i}.csv", tmp_path / f"case2_dcp_{i}.json")
        assert dcp.outcome.kind.value == "ReachedOrigin"
        assert dcp.min_h >= -1e-6


def test_empty_controllers_is_a_config_error(tmp_path, capsys):
    code = main(["simulate", "--controllers", "", "--output-dir", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "controllers list is empty" in capsys.readouterr().err


def test_unsafe_init_is_a_config_error(tmp_path, capsys):
    code = main(["simulate", "--init", "0,4", "--output-dir", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "unsafe" in capsys.readouterr().err
    assert not list(tmp_path.glob("*.csv"))


def test_config_parse_failure_reports_line(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[run]\nscenario = case1\npenalty = -\n")
    code = main(["simulate", "--config", str(cfg), "--output-dir", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert f"{cfg}:3:" in capsys.readouterr().err


def test_ksweep_single_k_has_one_row(tmp_path):
    code = main(["ksweep", "--scenario", "case1", "--k-values", "15", "--x0=-5,4",
                 "--t-max", "2", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    rows = _summary(tmp_path / "case1_ksweep_summary.csv")
    assert len(rows) == 1
    assert list(rows[0]) == ["k", "outcome", "x1", "x2", "min_h"]
    assert rows[0]["outcome"] == "Timeout"


def test_ksweep_k_zero_is_bitwise_naive(tmp_path):
    sweep = tmp_path / "sweep"
    naive = tmp_path / "naive"
    assert main(["ksweep", "--k-values", "0", "--x0=-5,4", "--t-max", "3",
                 "--output-dir", str(sweep)]) == EXIT_OK
    assert main(["simulate", "--controllers", "dcp", "--wh-mode", "naive", "--init=-5,4",
                 "--t-max", "3", "--output-dir", str(naive)]) == EXIT_OK
    assert (sweep / "case1_ksweep_k0p0.csv").read_bytes() == (naive / "case1_dcp_0.csv").read_bytes()


def test_ksweep_rejects_bad_arguments(tmp_path):
    assert main(["ksweep", "--k-values", "", "--x0=-5,4", "--output-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["ksweep", "--k-values", "-1", "--x0=-5,4", "--output-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["ksweep", "--k-values", "1", "--x0=0,4", "--output-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["ksweep", "--k-values", "a", "--x0=-5,4", "--output-dir", str(tmp_path)]) == EXIT_CONFIG


def test_analyze_case1(tmp_path):
    assert main(["analyze", "--scenario", "case1", "--nu", "0.5", "--output-dir", str(tmp_path),
                 "--svg"]) == EXIT_OK
    res = json.loads((tmp_path / "case1_kbound.json").read_text())
    assert np.isfinite(res["k_lower_bound"]) and res["k_lower_bound"] > 0
    assert res["sample_count"] == 720
    assert res["q_count"] <= res["x_count"] <= res["omega_count"] <= res["sample_count"]
    with open(tmp_path / "case1_boundary.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 720
    assert (tmp_path / "case1_boundary.svg").read_text().startswith("<svg")


def test_analyze_nu_sweep_and_refinement(tmp_path):
    q_counts = []
    for nu in ("1", "0.5", "0.1"):
        out = tmp_path / nu
        assert main(["analyze", "--nu", nu, "--output-dir", str(out)]) == EXIT_OK
        q_counts.append(json.loads((out / "case1_kbound.json").read_text())["q_count"])
    assert q_counts == sorted(q_counts, reverse=True)
    fine = tmp_path / "fine"
    assert main(["analyze", "--nu", "0.5", "--n-samples", "1440", "--output-dir", str(fine)]) == EXIT_OK
    coarse_k = json.loads((tmp_path / "0.5" / "case1_kbound.json").read_text())["k_lower_bound"]
    fine_k = json.loads((fine / "case1_kbound.json").read_text())["k_lower_bound"]
    assert abs(fine_k - coarse_k) / fine_k < 0.01


def test_analyze_sampling_failure_exits_2(tmp_path, capsys):
    scen = tmp_path / "miss.cfg"
    # The seed (0, 0) lies in the safe set, so rays never enter the obstacle.
    scen.write_text("[scenario]\na = 1 0; 0 1\ng = 1 0; 0 1\np = 1 0; 0 1\n"
                    "h = 1: 2 0; 1: 0 2; -8: 0 1; 12: 0 0\nseeds = 0,0\ninits = 0,7\n")
    assert main(["analyze", "--scenario", str(scen), "--output-dir", str(tmp_path)]) == EXIT_RUNTIME
    assert "seed" in capsys.readouterr().err


def test_analyze_rejects_bad_nu(tmp_path):
    assert main(["analyze", "--nu", "0", "--output-dir", str(tmp_path)]) == EXIT_CONFIG


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DCP_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "--controllers", "cbf_qp", "--init", "0,-3"]) == EXIT_OK
    assert (tmp_path / "env" / "case1_cbf_qp_0.csv").exists()


def test_simulate_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--controllers", "dcp,penalty_qp", "--init", "1,7", "--t-max", "2",
                     "--output-dir", str(tmp_path / d)]) == EXIT_OK
    for name in ("case1_dcp_0.csv", "case1_penalty_qp_0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_run(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"[run]\nscenario = case1\ncontrollers = dcp\ninit = 0,-3\noutput_dir = {tmp_path / 'o'}\n"
                   "[dcp]\nk = 5\n[integrator]\ndt = 0.002\n")
    assert main(["simulate", "--config", str(cfg)]) == EXIT_OK
    rec = TrajectoryRecord.read(tmp_path / "o" / "case1_dcp_0.csv")
    assert rec.times[1] == pytest.approx(0.002)


def test_aborted_rollout_exits_2(tmp_path):
    # A scenario whose input matrix cannot produce a null-space direction for the DCP law.
    scen = tmp_path / "one_input.cfg"
    scen.write_text("[scenario]\na = 1 0; 0 1\ng = 1; 1\np = 1 0; 0 1\n"
                    "h = 1: 2 0; 1: 0 2; -8: 0 1; 12: 0 0\nseeds = 0,4\ninits = 0,7\n")
    assert main(["simulate", "--scenario", str(scen), "--controllers", "dcp",
                 "--output-dir", str(tmp_path)]) == EXIT_RUNTIME
    assert _outcome(tmp_path / "one_input_dcp_0.json")["kind"] == "Aborted"
