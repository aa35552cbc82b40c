from __future__ import annotations

import json
import warnings
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import List

import numpy as np
import pytest

from src.errors import AnalysisWarning
from src.pipeline import run_cli
from src.services.accuracy import assess_accuracy
from src.services.agreement import assess_icc
from src.services.ingestion import parse_measurements_csv
from src.services.mixed_model import TERMS, ExperimentRow
from src.services.simulate import CrossoverSpec, gen_crossover, load_process_spec, monte_carlo
from tests.conftest import SPECS_DIR, grid_dataset, make_dataset, measurements_csv

ACCURACY_GRID = [(70.0, 40.0), (60.0, 55.0), (85.0, 50.0), (90.0, 70.0)]


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def _report(out: Path) -> dict:
    return json.loads((out / "report.json").read_text(encoding="utf-8"))


def _experiment_csv(rows: List[ExperimentRow]) -> str:
    lines = ["subject_id,group,treatment,task,variable,value"]
    lines += [f"{r.subject_id},{r.group},{r.treatment},{r.task},QLTY,{r.y!r}" for r in rows]
    return "\n".join(lines) + "\n"


@pytest.fixture
def accuracy_input(tmp_path) -> Path:
    return _write(tmp_path / "qlty.csv", measurements_csv(grid_dataset(ACCURACY_GRID)))


# region score
def test_score(tmp_path):
    outcomes = _write(
        tmp_path / "outcomes.csv",
        "object_id,suite_id,case_id,granularity,outcome\n"
        "P1,AH,t1,method,pass\nP1,AH,t2,method,fail\nP1,EP,t1,method,pass\nP1,EP,t2,method,pass\n",
    )
    out = tmp_path / "out"
    assert run_cli(["score", "--input", str(outcomes), "--variable", "QLTY", "--out", str(out), "--format", "csv"]) == 0

    report = _report(out)
    assert report["command"] == "score"
    assert report["scores"]["granularity"] == "method"
    ds = parse_measurements_csv((out / "measurements.csv").read_bytes())
    assert ds.cells("QLTY")[("P1", "AH")] == [50.0]
    assert (out / "scores.csv").read_text(encoding="utf-8").startswith("object_id,suite_id,score")


# region accuracy
def test_accuracy_report(tmp_path, accuracy_input):
    out = tmp_path / "out"
    code = run_cli(
        ["accuracy", "--input", str(accuracy_input), "--variable", "QLTY", "--out", str(out), "--reference", "60"]
    )
    assert code == 0

    accuracy = _report(out)["accuracy"]
    assert accuracy["coverage_mode"] == "fixed2"
    assert accuracy["expanded"] == pytest.approx(2.0 * accuracy["s_Rw"])
    assert accuracy["trueness_by_instrument"]["AH"] == pytest.approx(16.25)
    assert [row["term"] for row in accuracy["anova"]["rows"]] == ["Program", "Program:Instrument", "Residual"]
    assert _report(out)["input_digest"].startswith("sha256:")


def test_accuracy_is_byte_identical_across_runs(tmp_path, accuracy_input):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        argv = ["accuracy", "--input", str(accuracy_input), "--variable", "QLTY", "--out", str(out), "--format", "csv"]
        assert run_cli(argv) == 0
        outputs.append(out)
    for filename in ("report.json", "anova_nested.csv"):
        assert (outputs[0] / filename).read_bytes() == (outputs[1] / filename).read_bytes()


def test_accuracy_with_truth_writes_deviations(tmp_path, accuracy_input):
    truth = _write(
        tmp_path / "truth.csv",
        measurements_csv(make_dataset([("P1", "REF", 80.0), ("P2", "REF", 60.0), ("P3", "REF", 70.0), ("P4", "REF", 75.0)])),
    )
    out = tmp_path / "out"
    argv = [
        "accuracy", "--input", str(accuracy_input), "--truth", str(truth), "--variable", "QLTY",
        "--out", str(out), "--format", "csv", "--svg",
    ]
    assert run_cli(argv) == 0

    deviations = {d["instrument_id"]: d for d in _report(out)["deviations"]}
    assert deviations["EP"]["counts"] == {"above": 0, "below": 4, "on": 0}
    assert (out / "deviations_AH.csv").exists()
    root = ET.parse(out / "deviations_EP.svg").getroot()
    assert root.get("viewBox") == "0 0 640 480"


def test_accuracy_rejects_repeated_truth_rows(tmp_path, accuracy_input, capsys):
    truth = _write(
        tmp_path / "truth.csv",
        measurements_csv(
            make_dataset(
                [("P1", "REF", 80.0), ("P1", "REF2", 85.0), ("P2", "REF", 60.0), ("P3", "REF", 70.0), ("P4", "REF", 75.0)]
            )
        ),
    )
    argv = ["accuracy", "--input", str(accuracy_input), "--truth", str(truth), "--variable", "QLTY", "--out", str(tmp_path)]
    assert run_cli(argv) == 2
    assert capsys.readouterr().err.startswith("error: AmbiguousReplicates:")


def test_accuracy_coverage_t(tmp_path, accuracy_input):
    out = tmp_path / "out"
    argv = ["accuracy", "--input", str(accuracy_input), "--variable", "QLTY", "--out", str(out), "--coverage", "t"]
    assert run_cli(argv) == 0
    # t_{0.975, 2}
    assert _report(out)["accuracy"]["coverage_k"] == pytest.approx(4.302652729911275, rel=1e-8)


# region bland-altman
def test_bland_altman_svg(tmp_path):
    ds = grid_dataset([(80.0, 50.0), (60.0, 40.0), (70.0, 60.0)])
    source = _write(tmp_path / "qlty.csv", measurements_csv(ds))
    svgs = []
    for name in ("first", "second"):
        out = tmp_path / name
        argv = ["bland-altman", "--input", str(source), "--variable", "QLTY", "--out", str(out), "--svg", "--format", "csv"]
        assert run_cli(argv) == 0
        svgs.append((out / "bland_altman.svg").read_bytes())

    out = tmp_path / "first"
    section = _report(out)["bland_altman"]
    assert section["d_bar"] == pytest.approx(20.0)
    assert section["limits"] == {"lower": pytest.approx(0.0), "upper": pytest.approx(40.0)}

    root = ET.parse(out / "bland_altman.svg").getroot()
    assert root.get("viewBox") == "0 0 640 480"
    hlines = sorted(el.get("id") for el in root.iter() if (el.get("id") or "").startswith("hline-"))
    assert hlines == ["hline-lower", "hline-mean", "hline-upper"]
    assert svgs[0] == svgs[1]

    table = (out / "bland_altman.csv").read_text(encoding="utf-8").splitlines()
    assert table[0] == "pair_mean,difference,object_id"
    assert len(table) == 4


def test_bland_altman_with_one_pair_fails_cleanly(tmp_path, capsys):
    source = _write(tmp_path / "qlty.csv", measurements_csv(grid_dataset([(80.0, 50.0)])))
    out = tmp_path / "out"
    assert run_cli(["bland-altman", "--input", str(source), "--variable", "QLTY", "--out", str(out)]) == 2

    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("error: TooFewPairs")
    assert not (out / "report.json").exists()


def test_missing_variable_and_missing_file(tmp_path, capsys, accuracy_input):
    assert run_cli(["bland-altman", "--input", str(accuracy_input), "--out", str(tmp_path)]) == 2
    assert run_cli(["icc", "--input", str(tmp_path / "nope.csv"), "--variable", "QLTY", "--out", str(tmp_path)]) == 2
    lines = capsys.readouterr().err.strip().splitlines()
    assert lines[0].startswith("error: InputError")
    assert lines[1].startswith("error: IoFailure")


def test_argparse_errors_and_version(capsys):
    assert run_cli(["kappa"]) == 2
    assert run_cli(["--version"]) == 0


# region icc / correlate
def test_icc_constant_grid_is_a_numerical_failure(tmp_path, capsys):
    source = _write(tmp_path / "qlty.csv", measurements_csv(grid_dataset([(50.0, 50.0)] * 3)))
    assert run_cli(["icc", "--input", str(source), "--variable", "QLTY", "--out", str(tmp_path)]) == 3
    assert capsys.readouterr().err.startswith("error: DegenerateVariance")


def test_icc_warnings_end_up_in_the_report(tmp_path):
    source = _write(tmp_path / "qlty.csv", measurements_csv(grid_dataset([(10.0, 12.0), (12.0, 10.0)])))
    out = tmp_path / "out"
    assert run_cli(["icc", "--input", str(source), "--variable", "QLTY", "--out", str(out), "--format", "csv"]) == 0

    report = _report(out)
    assert report["icc"]["clamped"] is True
    assert report["icc"]["rho"] == 0.0
    assert len(report["warnings"]) == 1
    assert "icc3_1" in report["warnings"][0]
    assert (out / "anova_twoway.csv").read_text(encoding="utf-8").startswith("term,Df,Sum Sq")


def test_icc_without_warnings(tmp_path):
    source = _write(tmp_path / "qlty.csv", measurements_csv(grid_dataset([(10.0, 14.0), (20.0, 26.0)])))
    out = tmp_path / "out"
    assert run_cli(["icc", "--input", str(source), "--variable", "QLTY", "--out", str(out)]) == 0
    report = _report(out)
    assert report["warnings"] == []
    assert report["icc"]["rho"] == pytest.approx(12.0 / 13.0)


def test_correlate(tmp_path, accuracy_input):
    out = tmp_path / "out"
    assert run_cli(["correlate", "--input", str(accuracy_input), "--variable", "QLTY", "--out", str(out)]) == 0
    a, b = np.array(ACCURACY_GRID).T
    assert _report(out)["correlation"]["r"] == pytest.approx(float(np.corrcoef(a, b)[0, 1]), rel=1e-10)


# region mixed
def test_mixed_compares_two_instruments(tmp_path):
    beta = (60.0, -10.0, 5.0, 3.0)
    first = _write(
        tmp_path / "ah.csv",
        _experiment_csv(gen_crossover(CrossoverSpec(20, beta, 8.0, 3.0, seed=1))),
    )
    second = _write(
        tmp_path / "ep.csv",
        _experiment_csv(gen_crossover(CrossoverSpec(20, beta, 8.0, 3.0, seed=2))),
    )
    out = tmp_path / "out"
    argv = [
        "mixed", "--input", str(first), "--compare", str(second), "--labels", "AH,EP",
        "--variable", "QLTY", "--out", str(out), "--format", "csv",
    ]
    assert run_cli(argv) == 0

    report = _report(out)
    assert set(report["mixed"]) == {"AH", "EP"}
    assert [c["term"] for c in report["mixed"]["AH"]["coefficients"]] == list(TERMS)
    assert report["mixed"]["EP"]["n_subjects"] == 20
    assert [c["term"] for c in report["comparison"]] == list(TERMS)
    assert (out / "coefficients_AH.csv").exists()
    assert (out / "coefficients_EP.csv").exists()


def test_mixed_rejects_repeated_labels(tmp_path, capsys):
    source = _write(
        tmp_path / "ah.csv",
        _experiment_csv(gen_crossover(CrossoverSpec(10, (60.0, -10.0, 5.0, 3.0), 8.0, 3.0, seed=1))),
    )
    argv = ["mixed", "--input", str(source), "--compare", str(source), "--labels", "AH,AH", "--out", str(tmp_path)]
    assert run_cli(argv) == 2


# region simulate
def test_simulate_is_byte_identical_across_runs(tmp_path):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        argv = [
            "simulate", "--spec", str(SPECS_DIR / "poor_agreement.json"), "--reps", "20",
            "--estimator", "d_bar", "--estimator", "s_d", "--out", str(out), "--format", "csv",
        ]
        assert run_cli(argv) == 0
        outputs.append(out)
    for filename in ("report.json", "monte_carlo.csv"):
        assert (outputs[0] / filename).read_bytes() == (outputs[1] / filename).read_bytes()

    section = _report(outputs[0])["monte_carlo"]
    assert [row["estimator"] for row in section["estimators"]] == ["d_bar", "s_d"]
    assert section["oracles"]["d_bar"] == -35.0
    assert section["spec"]["seed"] == 20240517


def test_simulate_seed_override(tmp_path):
    out = tmp_path / "out"
    argv = [
        "simulate", "--spec", str(SPECS_DIR / "poor_agreement.json"), "--reps", "5",
        "--estimator", "d_bar", "--seed", "99", "--out", str(out),
    ]
    assert run_cli(argv) == 0
    report = _report(out)
    assert report["parameters"]["seed"] == 99
    assert report["monte_carlo"]["spec"]["seed"] == 99


def test_simulate_estimator_failure(tmp_path, capsys):
    argv = [
        "simulate", "--spec", str(SPECS_DIR / "poor_agreement.json"), "--reps", "5",
        "--estimator", "repeatability", "--out", str(tmp_path),
    ]
    assert run_cli(argv) == 2
    assert capsys.readouterr().err.startswith("error: EstimatorFailure")


# region advertencias
def _messages(run) -> List[str]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AnalysisWarning)
        run()
    return [str(w.message) for w in caught if issubclass(w.category, AnalysisWarning)]


def _replicated_grid():
    return make_dataset(
        (f"P{i + 1}", inst, value + 0.5 * rep, rep)
        for i, row in enumerate(ACCURACY_GRID)
        for inst, value in zip(("AH", "EP"), row)
        for rep in (0, 1)
    )


def _warning_cases(tmp_path: Path):
    replicated = _write(tmp_path / "replicated.csv", measurements_csv(_replicated_grid()))
    clamped_ds = grid_dataset([(10.0, 12.0), (12.0, 10.0), (30.0, 31.0)])
    clamped = _write(tmp_path / "clamped.csv", measurements_csv(clamped_ds))
    spec_path = SPECS_DIR / "table5_like.json"
    return {
        "accuracy": (
            ["accuracy", "--input", str(replicated), "--variable", "QLTY"],
            lambda: assess_accuracy(_replicated_grid(), "QLTY"),
        ),
        "icc": (
            ["icc", "--input", str(clamped), "--variable", "QLTY"],
            lambda: assess_icc(clamped_ds, "QLTY"),
        ),
        "simulate": (
            ["simulate", "--spec", str(spec_path), "--reps", "30", "--estimator", "rho"],
            lambda: monte_carlo(load_process_spec(spec_path), ["rho"], 30),
        ),
    }


@pytest.mark.parametrize("command", ["accuracy", "icc", "simulate"])
def test_estimator_warnings_are_copied_verbatim(tmp_path, command):
    argv, run = _warning_cases(tmp_path)[command]
    expected = _messages(run)
    assert expected

    out = tmp_path / "out"
    assert run_cli(argv + ["--out", str(out)]) == 0
    assert _report(out)["warnings"] == expected
