from __future__ import annotations

import json
import shutil

import pytest

from siteshap.cli import main
from siteshap.report import read_csv

from conftest import FIXTURES


@pytest.fixture(scope="module")
def single(tmp_path_factory):
    out = tmp_path_factory.mktemp("single")
    assert main(["synth", "single-confounder", str(out)]) == 0
    return out


def run_json(capsys, argv):
    code = main(argv)
    return code, capsys.readouterr()


def test_synth_files(single):
    for name in ("reference.csv", "external.csv", "config.json", "scenario.json", "ground_truth.json"):
        assert (single / name).is_file()


def test_synth_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "correlated-pair", str(tmp_path / d), "--no-truth"]) == 0
    for name in ("reference.csv", "external.csv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["synth", "correlated-pair", str(tmp_path / "c"), "--no-truth", "--seed", "9"]) == 0
    assert (tmp_path / "c" / "reference.csv").read_bytes() != (tmp_path / "a" / "reference.csv").read_bytes()


def test_attribute_single_confounder(single, capsys):
    code, _ = run_json(capsys, ["attribute", str(single / "config.json"), "--format", "all"])
    assert code == 0
    out = single / "out"
    report = json.loads((out / "single-confounder.json").read_text())
    truth = json.loads((single / "ground_truth.json").read_text())
    view, sex = report["contributions"]["view"], report["contributions"]["sex"]
    assert view["phi"] > 10 * abs(sex["phi"])
    assert abs(view["phi"] - truth["phi"]["view"]) < max(0.005, 3 * view["se"]) + 0.01
    assert sex["phi"] - 2 * sex["se"] <= 0 <= sex["phi"] + 2 * sex["se"]
    # resolved config and seed travel with the report
    assert report["seed"] == 101
    assert report["config"]["seed"] == 101
    assert report["config"]["factors"][0]["name"] == "view"
    assert report["config"]["stopping"] == {"tolerance": 0.005, "max_iterations": 2000, "min_iterations": 30}
    assert (out / "single-confounder.svg").read_text().count("<svg") == 1
    (row,) = read_csv(out / "single-confounder.csv")
    assert abs(row["view"] + row["sex"] + row["Unexplained"] - row["Total"]) < 1e-6
    log = (out / "single-confounder.log").read_text()
    assert "skipped 0" in log


def test_flags_override_config(single, capsys, tmp_path):
    code, _ = run_json(capsys, ["attribute", str(single / "config.json"), "--seed", "5", "--tolerance", "0.01",
                                "--max-iters", "60", "--min-stratum", "3", "--format", "json",
                                "--out-dir", str(tmp_path), "--name", "x"])
    assert code == 0
    report = json.loads((tmp_path / "x.json").read_text())
    assert report["seed"] == 5
    assert report["config"]["stopping"]["tolerance"] == 0.01
    assert report["config"]["stopping"]["max_iterations"] == 60
    assert report["config"]["min_stratum"] == 3
    assert not (tmp_path / "x.csv").exists()


def test_missing_seed(single, tmp_path, capsys):
    cfg = json.loads((single / "config.json").read_text())
    del cfg["seed"]
    cfg["reference"]["path"] = str(single / "reference.csv")
    cfg["external"]["path"] = str(single / "external.csv")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code, captured = run_json(capsys, ["attribute", str(p)])
    assert code == 2
    assert "seed is required" in captured.err


def test_unknown_config_field(single, tmp_path, capsys):
    cfg = json.loads((single / "config.json").read_text())
    cfg["tolerence"] = 0.1
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code, captured = run_json(capsys, ["attribute", str(p)])
    assert code == 2 and "tolerence" in captured.err


def test_identical_files_zero_total(single, tmp_path, capsys):
    shutil.copy(single / "external.csv", tmp_path / "a.csv")
    shutil.copy(single / "external.csv", tmp_path / "b.csv")
    cfg = json.loads((single / "config.json").read_text())
    cfg["reference"] = {"path": "a.csv", "site": "A"}
    cfg["external"] = {"path": "b.csv", "site": "B"}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["attribute", str(p), "--format", "json"]) == 0
    report = json.loads((tmp_path / "out" / "single-confounder.json").read_text())
    assert abs(report["total_disparity"]) < 1e-12
    assert all(c["phi"] == 0 for c in report["contributions"].values())


def test_data_validation_exit(single, tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("score,label\n0.3,1\n0.4,1\n")
    cfg = json.loads((single / "config.json").read_text())
    cfg["factors"] = []
    cfg["factors"] = [{"name": "view"}]
    cfg["reference"] = {"path": "bad.csv"}
    cfg["external"] = {"path": str(single / "external.csv")}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code, captured = run_json(capsys, ["attribute", str(p)])
    assert code == 3
    assert "view" in captured.err


def test_infeasible_exit(tmp_path, capsys):
    ref = ["score,label,v"] + [f"{(i % 97) / 100},{i % 2},{'AP' if i < 100 else 'PA'}" for i in range(200)]
    ext = ["score,label,v"] + [f"{(i % 89) / 100},{i % 2},{'AP' if i < 198 else 'PA'}" for i in range(200)]
    (tmp_path / "r.csv").write_text("\n".join(ref) + "\n")
    (tmp_path / "e.csv").write_text("\n".join(ext) + "\n")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 1, "reference": "r.csv", "external": "e.csv", "factors": [{"name": "v"}]}))
    code, captured = run_json(capsys, ["attribute", str(p)])
    assert code == 4
    assert "v=PA" in captured.err or "lacked stratum support" in captured.err


def test_auc_four_rows(capsys):
    code, captured = run_json(capsys, ["auc", str(FIXTURES / "four_rows.csv"), "--replicates", "0"])
    assert code == 0
    assert json.loads(captured.out)["value"] == 1.0
    code, captured = run_json(capsys, ["auc", str(FIXTURES / "four_rows.csv"), "--seed", "3"])
    res = json.loads(captured.out)
    assert res["ci_low"] == res["value"] == res["ci_high"] == 1.0


def test_report_command(tmp_path, capsys):
    files = [str(p) for p in sorted((FIXTURES / "reports").glob("*.json"))]
    code, captured = run_json(capsys, ["report", *files, "--csv", str(tmp_path / "t.csv"),
                                       "--svg", str(tmp_path / "t.svg")])
    assert code == 0
    assert "mean explained fraction: 0.273" in captured.out
    assert "max explained fraction:  0.599" in captured.out
    assert (tmp_path / "t.svg").stat().st_size > 0
    assert len(read_csv(tmp_path / "t.csv")) == 6


def test_report_malformed(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, captured = run_json(capsys, ["report", str(bad)])
    assert code == 3 and "invalid JSON" in captured.err


def test_exact_versus_attribute(tmp_path, capsys):
    assert main(["synth", "correlated-pair", str(tmp_path), "--no-truth"]) == 0
    cfg = json.loads((tmp_path / "config.json").read_text())
    cfg["seeding"] = "prefix"
    cfg["bootstrap_replicates"] = 0
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    assert main(["exact", str(tmp_path / "config.json"), "--format", "json"]) == 0
    assert main(["attribute", str(tmp_path / "config.json"), "--format", "json",
                 "--tolerance", "1e-4", "--max-iters", "20000"]) == 0
    exact = json.loads((tmp_path / "out" / "correlated-pair.exact.json").read_text())
    mc = json.loads((tmp_path / "out" / "correlated-pair.json").read_text())
    assert exact["method"] == "exact" and exact["sampled_permutations"] == 6
    for name, c in mc["contributions"].items():
        assert abs(c["phi"] - exact["contributions"][name]["phi"]) <= 3 * c["se"] + 1e-12


def test_drill_down_via_config(tmp_path, capsys):
    assert main(["synth", "six-factor-clinical", str(tmp_path), "--no-truth", "--n", "4000"]) == 0
    cfg = json.loads((tmp_path / "config.json").read_text())
    cfg["drill_down"] = "comorbidities"
    cfg["bootstrap_replicates"] = 0
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    assert main(["attribute", str(tmp_path / "config.json")]) == 0
    out = tmp_path / "out"
    drill = json.loads((out / "six-factor-clinical.comorbidities.json").read_text())
    assert drill["method"] == "drill-down"
    assert set(drill["contributions"]) == {"atelectasis", "cardiomegaly", "effusion"}
    rows = read_csv(out / "six-factor-clinical.csv")
    assert len(rows) == 2
