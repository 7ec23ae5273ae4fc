import json

import numpy as np
import pytest

from tylershrink.cli import entry, load_csv_samples, write_csv_rows
from tylershrink.errors import CsvFormatError
from tylershrink.scatter import normalize_samples
from tylershrink.synth import EllipticalSpec, RadialLaw, sample_elliptical, toeplitz_scatter


def test_csv_round_trip_is_bit_exact(tmp_path):
    out = tmp_path / "data.csv"
    rc = entry(["generate", "--p", "6", "--n", "20", "--gamma", "0.5",
                "--radial", "cauchy", "--seed", "11", "--out", str(out)])
    assert rc == 0
    spec = EllipticalSpec(p=6, n=20, scatter=toeplitz_scatter(6, 0.5),
                          radial=RadialLaw.parse("cauchy"), seed=11)
    expect = sample_elliptical(spec).rows
    got = load_csv_samples(out)
    assert got.shape == (20, 6)
    assert np.array_equal(got, expect)


def test_write_read_arbitrary_floats(tmp_path):
    rng = np.random.default_rng(3)
    arr = rng.standard_cauchy((15, 4)) * 10.0 ** rng.integers(-12, 12, (15, 4))
    path = tmp_path / "t.csv"
    write_csv_rows(path, arr)
    assert np.array_equal(load_csv_samples(path), arr)


def test_load_identity_rows(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,0\n0,1\n")
    got = load_csv_samples(path)
    assert np.array_equal(got, np.eye(2))


def test_load_with_centering(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,0\n0,1\n")
    got = load_csv_samples(path, center=True)
    assert np.array_equal(got, np.array([[0.5, -0.5], [-0.5, 0.5]]))


def test_load_non_numeric_names_position(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,a\n")
    with pytest.raises(CsvFormatError, match="row 1, column 2"):
        load_csv_samples(path)


def test_load_ragged_names_row(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,2,3\n4,5\n")
    with pytest.raises(CsvFormatError, match="row 2"):
        load_csv_samples(path)


def test_load_empty_file(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("")
    with pytest.raises(CsvFormatError, match="empty"):
        load_csv_samples(path)


def test_load_header_skip(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("x,y\n1,0\n0,1\n")
    got = load_csv_samples(path, skip_header=True)
    assert np.array_equal(got, np.eye(2))
    with pytest.raises(CsvFormatError, match="row 1"):
        load_csv_samples(path)


# ---------------------------------------------------------------------------
# Exit codes


def test_missing_input_file_is_io_error(tmp_path, capsys):
    rc = entry(["fit", "--in", str(tmp_path / "nope.csv"), "--alpha", "0.5"])
    assert rc == 4
    assert "error:" in capsys.readouterr().err


def test_malformed_csv_is_io_error(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("1,oops\n")
    rc = entry(["fit", "--in", str(path), "--alpha", "0.5"])
    assert rc == 4
    assert "row 1, column 2" in capsys.readouterr().err


def test_bad_alpha_is_usage_error(tmp_path, capsys):
    path = tmp_path / "a.csv"
    write_csv_rows(path, np.eye(3))
    assert entry(["fit", "--in", str(path), "--alpha", "wat"]) == 2
    assert entry(["fit", "--in", str(path), "--alpha", "1.5"]) == 2
    capsys.readouterr()


def test_bench_guard_is_usage_error(capsys):
    rc = entry(["bench", "--p", "4", "--n", "1200", "--grid", "4"])
    assert rc == 2
    assert "--force" in capsys.readouterr().err


def test_bisect_with_exact_method_is_usage_error(tmp_path, capsys):
    path = tmp_path / "a.csv"
    write_csv_rows(path, np.eye(4))
    rc = entry(["select-alpha", "--in", str(path), "--method", "exact",
                "--bisect", "0.01"])
    assert rc == 2
    capsys.readouterr()


def test_nonconvergence_is_numeric_error(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert entry(["generate", "--p", "5", "--n", "12", "--seed", "3",
                  "--out", str(data)]) == 0
    rc = entry(["fit", "--in", str(data), "--alpha", "0.05",
                "--max-iter", "3"])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# fit


@pytest.fixture()
def sample_csv(tmp_path):
    path = tmp_path / "data.csv"
    entry(["generate", "--p", "5", "--n", "30", "--gamma", "0.5",
           "--radial", "student:3", "--seed", "7", "--out", str(path)])
    return path


def test_fit_json_schema(sample_csv, tmp_path):
    out = tmp_path / "fit.json"
    rc = entry(["fit", "--in", str(sample_csv), "--alpha", "0.4", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    for key in ("manifest", "estimate", "iterations", "final_step",
                "fixed_point_residual", "wall_time_ns", "warnings"):
        assert key in doc
    est = np.array(doc["estimate"])
    assert est.shape == (5, 5)
    assert np.array_equal(est, est.T)
    mani = doc["manifest"]
    assert mani["command"] == "fit"
    assert mani["tool_version"]
    assert mani["params"]["alpha"] == 0.4
    assert str(sample_csv) in mani["input_digest"]
    assert len(mani["input_digest"][str(sample_csv)]) == 64


def test_fit_repeat_runs_identical(sample_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    entry(["fit", "--in", str(sample_csv), "--alpha", "0.3", "--out", str(a)])
    entry(["fit", "--in", str(sample_csv), "--alpha", "0.3", "--out", str(b)])
    da, db = json.loads(a.read_text()), json.loads(b.read_text())
    assert da["estimate"] == db["estimate"]
    assert da["iterations"] == db["iterations"]
    assert da["final_step"] == db["final_step"]
    assert da["manifest"]["input_digest"] == db["manifest"]["input_digest"]


def test_fit_auto_selects_and_records_alpha(sample_csv, tmp_path):
    out = tmp_path / "auto.json"
    rc = entry(["fit", "--in", str(sample_csv), "--out", str(out)])
    assert rc == 0
    mani = json.loads(out.read_text())["manifest"]
    assert mani["params"]["alpha_mode"] == "auto"
    assert 0.0 < mani["params"]["alpha"] < 1.0


def test_fit_explicit_identity_target_matches_default(sample_csv, tmp_path):
    tgt = tmp_path / "target.csv"
    write_csv_rows(tgt, np.eye(5))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    entry(["fit", "--in", str(sample_csv), "--alpha", "0.5", "--out", str(a)])
    entry(["fit", "--in", str(sample_csv), "--alpha", "0.5",
           "--target", str(tgt), "--out", str(b)])
    da, db = json.loads(a.read_text()), json.loads(b.read_text())
    assert da["estimate"] == db["estimate"]


def test_fit_alpha_zero_runs_plain_estimator(sample_csv, tmp_path):
    out = tmp_path / "plain.json"
    rc = entry(["fit", "--in", str(sample_csv), "--alpha", "0", "--out", str(out)])
    assert rc == 0
    est = np.array(json.loads(out.read_text())["estimate"])
    assert abs(np.trace(est) - 5.0) < 1e-9


def test_fit_stdout_when_no_out(sample_csv, capsys):
    rc = entry(["fit", "--in", str(sample_csv), "--alpha", "0.6"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["manifest"]["command"] == "fit"


# ---------------------------------------------------------------------------
# select-alpha


def test_select_alpha_grid_schema_and_counts(sample_csv, tmp_path):
    out = tmp_path / "sel.json"
    rc = entry(["select-alpha", "--in", str(sample_csv), "--method", "approx",
                "--grid", "6", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["method"] == "approximate"
    assert len(doc["points"]) == 6
    assert doc["total_rfpi_calls"] == 6
    losses = [pt["loss"] for pt in doc["points"]]
    assert doc["argmin_loss"] == min(losses)
    assert any(pt["alpha"] == doc["argmin_alpha"] for pt in doc["points"])


def test_select_alpha_exact_call_count(sample_csv, tmp_path):
    out = tmp_path / "sel.json"
    rc = entry(["select-alpha", "--in", str(sample_csv), "--method", "exact",
                "--grid", "4", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["total_rfpi_calls"] == 4 * 30


def test_select_alpha_endpoint_overrides(sample_csv, tmp_path):
    out = tmp_path / "sel.json"
    rc = entry(["select-alpha", "--in", str(sample_csv), "--grid", "5",
                "--alpha-min", "0.3", "--alpha-max", "0.7", "--out", str(out)])
    assert rc == 0
    alphas = [pt["alpha"] for pt in json.loads(out.read_text())["points"]]
    assert alphas[0] == 0.3
    assert alphas[-1] == 0.7


def test_select_alpha_bisect_schema(sample_csv, tmp_path):
    out = tmp_path / "bis.json"
    rc = entry(["select-alpha", "--in", str(sample_csv), "--bisect", "0.02",
                "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["method"] == "bisect"
    for key in ("alpha", "loss", "iterations", "evaluations", "fell_back"):
        assert key in doc
    assert 0.0 < doc["alpha"] < 1.0


# ---------------------------------------------------------------------------
# nmse-sweep and bench


def test_nmse_sweep_writes_csv_and_json(tmp_path):
    prefix = tmp_path / "sweep"
    rc = entry(["nmse-sweep", "--p", "8", "--n", "16", "--gamma", "0.5",
                "--seed", "2", "--grid", "6", "--out", str(prefix)])
    assert rc == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "alpha,nmse,acvl_selected"
    assert len(lines) == 7
    marks = [float(l.split(",")[2]) for l in lines[1:]]
    assert marks.count(1.0) == 1
    doc = json.loads((tmp_path / "sweep.json").read_text())
    assert len(doc["points"]) == 6
    assert doc["selected"][0]["label"] == "acvl"
    assert doc["oracle_nmse"] <= min(pt["nmse"] for pt in doc["points"]) + 1e-15


def test_bench_json_schema(tmp_path):
    out = tmp_path / "bench.json"
    rc = entry(["bench", "--p", "6", "--n", "14", "--gamma", "0.5",
                "--seed", "2", "--grid", "4", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["exact_calls"] == 4 * 14
    assert doc["approx_calls"] == 4
    assert doc["speedup"] > 0
    assert doc["setting"]["gamma"] == 0.5
    assert doc["setting"]["radial"] == "constant"


# ---------------------------------------------------------------------------
# reproduce


def test_reproduce_nmse_recipe(tmp_path):
    out = tmp_path / "rep"
    rc = entry(["reproduce", "nmse", str(out), "--p", "10", "--grid", "6",
                "--seed", "1"])
    assert rc == 0
    csvs = sorted(out.glob("nmse_gamma*.csv"))
    assert len(csvs) == 9
    assert csvs[0].read_text().splitlines()[0] == "alpha,nmse,acvl_selected"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["manifest"]["command"] == "reproduce"
    assert len(summary["settings"]) == 9
    checks = json.loads((out / "checks.json").read_text())
    assert set(checks["checks"]) == set(summary["settings"])
    assert isinstance(checks["all_pass"], bool)


def test_reproduce_curves_recipe(tmp_path):
    out = tmp_path / "rep"
    rc = entry(["reproduce", "curves", str(out), "--p", "12", "--grid", "6",
                "--seed", "0"])
    assert rc == 0
    csvs = sorted(out.glob("curves_gamma*.csv"))
    assert len(csvs) == 9
    header = csvs[0].read_text().splitlines()[0]
    assert header == "alpha,exact_loss,approx_loss"
    summary = json.loads((out / "summary.json").read_text())
    for entry_ in summary["settings"].values():
        assert entry_["exact_calls"] == entry_["approx_calls"] * int(
            entry_["exact_calls"] / entry_["approx_calls"]
        )


def test_reproduce_speedup_recipe(tmp_path):
    out = tmp_path / "rep"
    rc = entry(["reproduce", "speedup", str(out), "--p", "12", "--grid", "4",
                "--seed", "0"])
    assert rc == 0
    reports = sorted(out.glob("bench_gamma*.json"))
    assert len(reports) == 9
    doc = json.loads(reports[0].read_text())
    assert doc["manifest"]["command"] == "reproduce"
    assert doc["exact_calls"] == doc["approx_calls"] * doc["setting"]["n"]


def test_reproduce_keeps_partial_results_on_failure(tmp_path, capsys):
    out = tmp_path / "rep"
    rc = entry(["reproduce", "curves", str(out), "--p", "10", "--grid", "6",
                "--seed", "1"])
    assert rc == 3
    capsys.readouterr()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["failures"]
    done = [k for k, v in summary["settings"].items() if "error" not in v]
    assert done
    for tag in done:
        assert (out / f"curves_{tag}.csv").exists()
    checks = json.loads((out / "checks.json").read_text())
    assert checks["all_pass"] is False


def test_centered_fit_uses_centered_rows(tmp_path):
    path = tmp_path / "d.csv"
    rng = np.random.default_rng(5)
    arr = rng.standard_normal((40, 4)) + 7.0
    write_csv_rows(path, arr)
    out = tmp_path / "fit.json"
    rc = entry(["fit", "--in", str(path), "--alpha", "0.5", "--center",
                "--out", str(out)])
    assert rc == 0
    est = np.array(json.loads(out.read_text())["estimate"])
    X = normalize_samples(arr - arr.mean(axis=0))
    from tylershrink.scatter import FitConfig, rtme_fit
    ref = rtme_fit(X, FitConfig(alpha=0.5)).estimate.entries
    assert np.array_equal(est, ref)
