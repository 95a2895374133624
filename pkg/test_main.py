import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from complexity_analyzer import ComplexityAnalyzer
from fixtures import fixture_f1
from main import main
from specmatrix import MATRIX_CSV, MATRIX_JSON, PruneReport, SpecializationMatrix, write_matrix_artifacts

SYNTHETIC = Path(__file__).parent / "data" / "synthetic_trade.csv"


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    # keep ./config.json and ECOPLEX_THREADS out of the runs
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("ECOPLEX_THREADS", raising=False)


def artifacts(directory, M):
    write_matrix_artifacts(M, PruneReport("component"), directory)
    return str(directory)


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir()) if p.is_file()}


@pytest.fixture
def synthetic_2019(tmp_path):
    work = tmp_path / "work"
    assert main(["ingest", "--input", str(SYNTHETIC), "--year", "2019", "--out", str(work)]) == 0
    assert main(["scores", "--input", str(work), "--out", str(work)]) == 0
    return work


def test_ingest_all_years(tmp_path):
    out = tmp_path / "matrices"
    assert main(["ingest", "--input", str(SYNTHETIC), "--out", str(out)]) == 0
    for year in (2019, 2020):
        sidecar = json.loads((out / f"year={year}" / MATRIX_JSON).read_text())
        assert sidecar["year"] == year
        assert len(sidecar["countries"]) == 12 and len(sidecar["products"]) == 18
    assert (out / "effective_config.json").exists()


def test_ingest_single_year_writes_flat(tmp_path):
    out = tmp_path / "m"
    assert main(["ingest", "--input", str(SYNTHETIC), "--year", "2020", "--out", str(out)]) == 0
    assert (out / MATRIX_CSV).exists()
    assert json.loads((out / MATRIX_JSON).read_text())["year"] == 2020


def test_ingest_missing_file(tmp_path, capsys):
    missing = tmp_path / "absent.csv"
    assert main(["ingest", "--input", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert "absent.csv" in capsys.readouterr().err


def test_ingest_is_byte_deterministic(tmp_path):
    out = tmp_path / "m"
    args = ["ingest", "--input", str(SYNTHETIC), "--year", "2019", "--out", str(out)]
    assert main(args) == 0
    first = snapshot(out)
    assert main(args) == 0
    assert snapshot(out) == first


def test_scores_f1(tmp_path):
    work = artifacts(tmp_path / "f1", fixture_f1())
    assert main(["scores", "--input", work, "--out", work]) == 0
    payload = json.loads((Path(work) / "scores.json").read_text())
    assert abs(payload["sigma2"] - 0.707107) < 1e-6
    assert payload["cross_route"]["max_abs_eci_raw_diff"] < 1e-8
    eci = pd.read_csv(Path(work) / "eci.csv")
    np.testing.assert_allclose(eci["eci_std"], [1.0, -1.0], atol=1e-10)


def test_scores_routes_agree(synthetic_2019, tmp_path):
    eigen_out = tmp_path / "eigen"
    assert main(["scores", "--input", str(synthetic_2019), "--out", str(eigen_out), "--route", "eigen"]) == 0
    svd = pd.read_csv(synthetic_2019 / "eci.csv")
    eigen = pd.read_csv(eigen_out / "eci.csv")
    assert list(svd["code"]) == list(eigen["code"])
    np.testing.assert_allclose(svd["eci_raw"], eigen["eci_raw"], atol=1e-8)


def test_scores_reflections_trace(synthetic_2019, tmp_path):
    out = tmp_path / "mor"
    assert main(["scores", "--input", str(synthetic_2019), "--out", str(out), "--route", "mor", "--iters", "20"]) == 0
    trace = pd.read_csv(out / "reflections_countries.csv")
    assert list(trace.columns) == ["code"] + [f"k_{n}" for n in range(21)]
    reflections = json.loads((out / "scores.json").read_text())["reflections"]
    assert reflections["country_iteration"] == 20
    assert reflections["spearman_eci"] is not None


def test_scores_verify_and_verify_command(tmp_path):
    work = artifacts(tmp_path / "f1", fixture_f1())
    assert main(["scores", "--input", work, "--out", work, "--verify"]) == 0
    report = json.loads((Path(work) / "verification_report.json").read_text())
    assert report["all_passed"] is True
    assert main(["verify", "--input", work, "--out", str(tmp_path / "v")]) == 0


def test_disconnected_artifacts_exit_one(tmp_path, capsys):
    dense = np.zeros((4, 4))
    dense[:2, :2] = 1
    dense[2:, 2:] = 1
    work = artifacts(tmp_path / "split", SpecializationMatrix.from_dense(dense))
    assert main(["scores", "--input", work, "--out", work]) == 1
    assert "disconnected" in capsys.readouterr().err


def test_cocluster_outputs(synthetic_2019):
    work = str(synthetic_2019)
    assert main(["cocluster", "--input", work, "--out", work]) == 0
    assignment = pd.read_csv(synthetic_2019 / "assignment.csv")
    assert list(assignment.columns) == ["code", "kind", "prob_B", "label"]
    assert len(assignment) == 30
    assert set(assignment["label"]) <= {"A", "B"}
    assert ((assignment["prob_B"] > 0.5) == (assignment["label"] == "B")).all()

    profile = pd.read_csv(synthetic_2019 / "plot_country_profile.csv")
    np.testing.assert_allclose(profile["mean_pci"], profile["eci_raw"], atol=1e-10)
    edges = pd.read_csv(synthetic_2019 / "plot_edges.csv")
    assert "same_cluster" in edges.columns
    histogram = pd.read_csv(synthetic_2019 / "plot_histogram.csv")
    assert np.isclose(histogram["bin_left"], 0.5).any()
    for name in ("gmm.json", "composition.json", "joint_membership.csv", "same_cluster.csv"):
        assert (synthetic_2019 / name).exists()


def test_sweep_rejects_present_candidate(synthetic_2019, tmp_path, capsys):
    edges = pd.read_csv(synthetic_2019 / MATRIX_CSV, dtype=str)
    country, product = edges.iloc[0]["country"], edges.iloc[0]["product"]
    candidates = tmp_path / "candidates.csv"
    candidates.write_text(f"country,product\n{country},{product}\n")
    work = str(synthetic_2019)
    code = main(["simulate", "sweep", "--input", work, "--out", work, "--candidates", str(candidates)])
    assert code == 2
    assert f"({country}, {product})" in capsys.readouterr().err


def test_sweep_default_candidates(synthetic_2019):
    work = str(synthetic_2019)
    assert main(["simulate", "sweep", "--input", work, "--out", work]) == 0
    sweep = pd.read_csv(synthetic_2019 / "sweep.csv")
    summary = json.loads((synthetic_2019 / "sweep_summary.json").read_text())
    chosen = set().union(*summary["product_sets"].values())
    assert set(sweep["product"]) <= chosen


def test_greedy_saturated_target(tmp_path):
    M = SpecializationMatrix.from_dense([[1, 1, 1], [1, 1, 0], [0, 1, 1]])
    work = artifacts(tmp_path / "sat", M)
    assert main(["scores", "--input", work, "--out", work]) == 0
    assert main(["simulate", "greedy", "--input", work, "--out", work, "--target", "c1"]) == 0
    greedy = json.loads((Path(work) / "greedy.json").read_text())
    assert greedy["steps"] == []
    assert greedy["termination"] == "saturated"


def test_greedy_unknown_target(synthetic_2019, capsys):
    work = str(synthetic_2019)
    assert main(["simulate", "greedy", "--input", work, "--out", work, "--target", "ZZZ"]) == 2
    assert "ZZZ" in capsys.readouterr().err


def test_greedy_from_config_file(synthetic_2019, tmp_path):
    eci = pd.read_csv(synthetic_2019 / "eci.csv")
    target = eci.loc[eci["eci_raw"].idxmin(), "code"]
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "input": str(synthetic_2019),
        "out": str(synthetic_2019),
        "target": target,
        "greedy_max_iter": 2,
    }))
    assert main(["simulate", "greedy", "--config", str(config)]) == 0
    greedy = json.loads((synthetic_2019 / "greedy.json").read_text())
    assert greedy["target"] == target
    assert 1 <= len(greedy["steps"]) <= 2
    ranking = pd.read_csv(synthetic_2019 / "greedy_ranking.csv")
    assert set(ranking["iteration"]) == {s["iteration"] for s in greedy["steps"]}


def test_rerun_from_effective_config_is_identical(synthetic_2019):
    work = str(synthetic_2019)
    assert main(["cocluster", "--input", work, "--out", work, "--seed", "3"]) == 0
    first = snapshot(synthetic_2019)
    assert main(["cocluster", "--config", str(synthetic_2019 / "effective_config.json")]) == 0
    assert snapshot(synthetic_2019) == first


def test_bench_small_sizes(tmp_path):
    config = tmp_path / "bench.json"
    config.write_text(json.dumps({"bench_sizes": [[30, 45], [45, 60]], "bench_density": 0.3}))
    out = tmp_path / "bench"
    assert main(["bench", "--config", str(config), "--out", str(out)]) == 0
    frame = pd.read_csv(out / "bench.csv")
    assert len(frame) == 4
    assert set(frame["route"]) == {"svd", "eigen"}
    assert (frame["max_abs_eci_diff"] < 1e-8).all()


@pytest.mark.parametrize("flag, cap, expected", [("1", "3", 1), ("4", "2", 2)])
def test_threads_env_caps_config(tmp_path, monkeypatch, flag, cap, expected):
    monkeypatch.setenv("ECOPLEX_THREADS", cap)
    out = tmp_path / "m"
    assert main(["ingest", "--input", str(SYNTHETIC), "--year", "2019", "--out", str(out), "--threads", flag]) == 0
    assert json.loads((out / "effective_config.json").read_text())["threads"] == expected


def test_threads_env_must_be_positive(tmp_path, monkeypatch):
    monkeypatch.setenv("ECOPLEX_THREADS", "0")
    assert main(["ingest", "--input", str(SYNTHETIC), "--out", str(tmp_path / "m")]) == 2


def test_linear_algebra_failure_exits_one(tmp_path, monkeypatch, capsys):
    def fail(self):
        raise np.linalg.LinAlgError("Eigenvalues did not converge")

    monkeypatch.setattr(ComplexityAnalyzer, "scores", fail)
    work = artifacts(tmp_path / "f1", fixture_f1())
    assert main(["scores", "--input", work, "--out", work]) == 1
    assert "LinAlgError" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"no_such_key": 1}))
    assert main(["bench", "--config", str(config)]) == 2
