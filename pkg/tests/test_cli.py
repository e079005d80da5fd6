import json
import subprocess
import sys

import numpy as np
import pytest

from trajmark.cli import main
from trajmark.model import SIGMA_Z, GeneratorModel, RateSchedule, save_model
from trajmark.store import canonical_states, load_trajset, write_series


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_then_classify_file(tmp_path, capsys):
    path = tmp_path / "ex4.trajset"
    code, out, _ = run(capsys, "simulate", "--example", "ex4", "--samples", "4", "--out", str(path))
    assert code == 0 and "trajectories=" in out
    assert len(load_trajset(path)) == 4 + len(canonical_states(3))
    code, out, _ = run(capsys, "classify", "--input", str(path))
    # without a model the data-only rule cannot separate SM from IM
    assert code == 0 and out.startswith("VERDICT: SM")


def test_classify_example_writes_report(tmp_path, capsys):
    report = tmp_path / "r.json"
    code, out, _ = run(capsys, "classify", "--example", "ex2", "--samples", "2", "--out", str(report))
    assert code == 0 and "VERDICT: NM" in out
    data = json.loads(report.read_text())
    assert data["verdict"] == "NM" and data["params"]["eps_pos"] > 0


def test_classify_with_model_file(tmp_path, capsys):
    traj, model = tmp_path / "s.trajset", tmp_path / "m.json"
    assert main(["simulate", "--example", "ex4", "--samples", "3", "--out", str(traj)]) == 0
    from trajmark.catalog import export_model
    export_model("ex4", model)
    capsys.readouterr()
    code, out, _ = run(capsys, "classify", "--input", str(traj), "--model", str(model))
    assert code == 0 and "VERDICT: IM" in out


def test_compare_marks_unphysical(capsys):
    code, out, _ = run(capsys, "compare", "--example", "ex1")
    assert code == 0
    assert out.strip() == ("ex1: TraceDistance=NM* DecayRates=NM* CPDivisibility=NM* "
                           "BlochVolume=NM*")


def test_compare_subset_of_criteria(capsys):
    code, out, _ = run(capsys, "compare", "--example", "ex4", "--criteria", "rates,volume")
    assert code == 0 and out.strip() == "ex4: DecayRates=NM BlochVolume=M"


def test_usage_errors(capsys):
    code, _, err = run(capsys, "classify", "--example", "ex9")
    assert code == 2 and "valid ids" in err
    code, _, err = run(capsys, "compare", "--example", "ex4", "--criteria", "fidelity")
    assert code == 2 and "fidelity" in err
    code, _, err = run(capsys, "classify", "--input", "/nonexistent/file")
    assert code == 2
    code, _, err = run(capsys, "simulate", "--example", "ex4")
    assert code == 2 and "--out" in err
    code, _, err = run(capsys, "export-plot", "--example", "ex4", "--out", "x.csv")
    assert code == 2
    with pytest.raises(SystemExit):
        main(["classify", "--set", "nonsense"])


def test_numerical_failure_exit_code(tmp_path, capsys):
    model = GeneratorModel(2, (), ((SIGMA_Z, RateSchedule.constant(-1000.0)),), "blowup")
    save_model(model, tmp_path / "m.json")
    code, _, err = run(capsys, "simulate", "--model", str(tmp_path / "m.json"), "--t-max", "2",
                       "--samples", "1", "--out", str(tmp_path / "o.trajset"))
    assert code == 3 and "numerical failure" in err


def test_config_round_trip(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    assert main(["classify", "--example", "ex4", "--samples", "3", "--seed", "5",
                 "--set", "horizon=4", "--dump-config", str(cfg)]) == 0
    data = json.loads(cfg.read_text())
    assert data["samples"] == 3 and data["overrides"] == {"horizon": 4.0}
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["classify", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["classify", "--example", "ex4", "--samples", "3", "--seed", "5",
                 "--set", "horizon=4", "--out", str(b), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    # explicit flags win over the file
    assert main(["classify", "--config", str(cfg), "--example", "ex3", "--set", "horizon=30",
                 "--out", str(a)]) == 0
    assert json.loads(a.read_text())["verdict"] == "NM"


def test_export_plot_csv(tmp_path, capsys):
    out = tmp_path / "ex3.csv"
    assert main(["export-plot", "--example", "ex3", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "t,mean_excitation"
    t, n = np.array([[float(c) for c in r.split(",")] for r in rows[1:]]).T
    assert len(t) == 1201 and t[-1] == pytest.approx(60.0)
    assert n[0] == 1.0 and n[200] == pytest.approx(np.exp(-10), abs=1e-8)
    out = tmp_path / "ex5.csv"
    assert main(["export-plot", "--example", "ex5_ramp", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "traj,t,y,z"


def test_ingest_series(tmp_path, capsys):
    t = np.linspace(0, 2 * np.pi + 1, 800)
    x = np.stack([np.sin(t), np.sin(t) * np.cos(t)], 1)
    src, dst = tmp_path / "fig8.csv", tmp_path / "fig8.trajset"
    write_series(src, [(t, x)])
    code, out, _ = run(capsys, "ingest", "--input", str(src), "--out", str(dst))
    assert code == 0 and "VERDICT: NM" in out
    assert load_trajset(dst).dim == 2
    code, _, err = run(capsys, "ingest", "--input", str(src), "--policy", "provided")
    assert code == 2 and "velocity" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "trajmark", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "table1" in res.stdout


def test_simulate_counts_and_user_model(tmp_path, capsys):
    out = tmp_path / "ex4.trajset"
    assert main(["simulate", "--example", "ex4", "--samples", "50", "--t-max", "10", "--seed", "7",
                 "--out", str(out)]) == 0
    assert len(load_trajset(out)) == 50 + len(canonical_states(3))
    from trajmark.catalog import export_model
    export_model("ex5_const", tmp_path / "m.json")
    assert main(["simulate", "--model", str(tmp_path / "m.json"), "--t-max", "5", "--samples", "3",
                 "--no-canonical", "--out", str(out)]) == 0
    assert len(load_trajset(out)) == 3


def test_compare_ramp_two_criteria(capsys):
    code, out, _ = run(capsys, "compare", "--example", "ex5_ramp", "--criteria", "blp,volume")
    assert code == 0 and out.strip() == "ex5_ramp: TraceDistance=M BlochVolume=M"


def test_export_steady_states(tmp_path, capsys):
    for cid, want in (("ex5_ramp", (0.0133, -0.9999)), ("ex5_const", (4 / 9, -1 / 9))):
        out = tmp_path / f"{cid}.csv"
        assert main(["export-plot", "--example", cid, "--out", str(out)]) == 0
        last = [float(c) for c in out.read_text().splitlines()[-1].split(",")]
        assert abs(last[2] - want[0]) < 1e-3 and abs(last[3] - want[1]) < 1e-3
