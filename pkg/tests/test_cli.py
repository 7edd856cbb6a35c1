import csv
import json

import numpy as np
import pytest

from jmgst import cli, cscore
from jmgst.params import JointModelParams, RunConfig, TrialDesign
from jmgst.simulate import simulate_trial


def write_cfg(path, **kw):
    path.write_text(json.dumps(RunConfig(**kw).to_dict()))
    return str(path)


def data_rows(path):
    return [r for r in csv.DictReader(line for line in open(path) if not line.startswith("#"))]


def test_single_look_design_boundary(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", design=TrialDesign(analysis_times=(60.0,)))
    assert cli.main(["design", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = data_rows(tmp_path / "boundaries.csv")
    assert len(rows) == 1
    assert float(rows[0]["b_k"]) == pytest.approx(1.95996, abs=1e-5)
    man = json.loads((tmp_path / "design_manifest.json").read_text())
    assert man["seed"] == 1 and len(man["config_digest"]) == 16


def test_simulate_then_fit_matches_in_process(tmp_path):
    design = TrialDesign(n=300)
    params = JointModelParams(gamma=0.06, sigma_sq=1.0)
    cfg = write_cfg(tmp_path / "c.json", params=params, design=design, seed=17, analysis=3)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert cli.main(["fit", "--config", cfg, "--out", str(tmp_path), "--visits", str(tmp_path / "trial_visits.csv"),
                     "--patients", str(tmp_path / "trial_patients.csv")]) == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    fits, cov = cli.fit_trial(simulate_trial(params, design, 17), RunConfig(params=params, design=design, analysis=3))
    assert doc["fit"]["eta_hat"] == fits[-1].eta_hat
    assert doc["fit"]["gamma_hat"] == fits[-1].gamma_hat
    np.testing.assert_array_equal(doc["covariance"]["z"], cov.z_statistics)


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", design=TrialDesign(n=200), seed=3)
    outs = []
    for name, jobs in (("a", "1"), ("b", "2")):
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--jobs", jobs]) == 0
        outs.append(tmp_path / name)
    for f in ("trial_visits.csv", "trial_patients.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    m = [json.loads((o / "simulate_manifest.json").read_text()) for o in outs]
    for doc in m:
        doc.pop("wall_time_s")
        doc["config"].pop("out")
        doc["config"].pop("jobs")
    assert m[0] == m[1]


@pytest.mark.parametrize("argv", [
    ["design", "--seed", "x"],
    ["nonsense"],
    ["fit", "--visits", "nowhere.csv", "--patients", "nowhere.csv"],
])
def test_invalid_invocations_exit_one(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv[0] != "nonsense" else argv) == cli.EXIT_VALIDATION


def test_invalid_config_exits_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"design": {"n": 0}}))
    assert cli.main(["design", "--config", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text(json.dumps({"colour": "red"}))
    assert cli.main(["design", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_analysis_beyond_last_look_exits_one(tmp_path):
    assert cli.main(["simulate", "--out", str(tmp_path), "--seed", "2"]) == 0
    rc = cli.main(["fit", "--out", str(tmp_path), "--analysis", "6", "--visits", str(tmp_path / "trial_visits.csv"),
                   "--patients", str(tmp_path / "trial_patients.csv")])
    assert rc == 1


def test_malformed_trial_csv_exits_one(tmp_path):
    assert cli.main(["simulate", "--out", str(tmp_path), "--seed", "2"]) == 0
    v = tmp_path / "trial_visits.csv"
    lines = v.read_text().splitlines()
    lines[4] = "garbage,row"
    v.write_text("\n".join(lines) + "\n")
    rc = cli.main(["fit", "--out", str(tmp_path), "--visits", str(v), "--patients", str(tmp_path / "trial_patients.csv")])
    assert rc == 1


def test_oc_reports_failure_rate(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", params=JointModelParams(gamma=0.06, sigma_sq=100.0),
                    design=TrialDesign(n=150), method="cscore-m2", replicates=4, eta_true=0.0)
    assert cli.main(["oc", "--config", cfg, "--out", str(tmp_path)]) == 0
    row = data_rows(tmp_path / "oc.csv")[0]
    assert row["method"] == "cscore-m2" and 0.0 <= float(row["failure_rate"]) <= 1.0
    assert open(tmp_path / "oc.csv").readline().startswith("# jmgst oc config=")


def test_verify_quick_passes(tmp_path):
    assert cli.main(["verify", "--quick", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert all(c["passed"] for c in doc["checks"])
