import json

import numpy as np
import pytest
from click.testing import CliRunner

from flowconn import settings
from flowconn.cli import THEOREM_COLUMNS, cli
from flowconn.geometry import Sphere


@pytest.fixture
def runner():
    return CliRunner()


def test_christoffel_on_sphere(runner):
    result = runner.invoke(cli, ["christoffel", "--manifold", "sphere:n=3", "--point", "1,0,0"])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert lines[0] == "i,j,k,value"
    assert "1,2,2,1.0" in lines
    assert "2,1,2,-1.0" in lines


def test_christoffel_on_plane_is_empty(runner):
    result = runner.invoke(cli, ["christoffel", "--manifold", "plane:n=3,k=2", "--point", "0,0,0"])
    assert result.exit_code == 0
    assert result.output.splitlines() == ["i,j,k,value"]


def test_christoffel_json(runner):
    result = runner.invoke(cli, ["christoffel", "--point", "0,0,1", "--format", "json"])
    report = json.loads(result.output)
    assert report["manifold"] == "sphere:n=3"
    assert report["config"]["point"] == "0,0,1"


@pytest.mark.parametrize("point", ["1,a,0", "1,0", "2,0,0"])
def test_christoffel_bad_point(runner, point):
    result = runner.invoke(cli, ["christoffel", "--manifold", "sphere:n=3", "--point", point])
    assert result.exit_code == 2
    assert "Error" in result.output


def test_missing_point(runner):
    result = runner.invoke(cli, ["christoffel"])
    assert result.exit_code == 2
    assert "point" in result.output


def test_unknown_manifold(runner):
    result = runner.invoke(cli, ["christoffel", "--manifold", "cube", "--point", "1,0,0"])
    assert result.exit_code == 2


def test_verify_identities_sphere(runner):
    result = runner.invoke(cli, ["verify-identities", "--manifold", "sphere:n=3"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert report["points"] == 1000
    assert all(check["pass"] for check in report["checks"])
    assert max(check["max_violation"] for check in report["checks"]) < 1e-10


def test_verify_identities_ellipsoid(runner):
    result = runner.invoke(
        cli, ["verify-identities", "--manifold", "ellipsoid:a=1,b=2,c=3", "--points", "200", "--format", "csv"]
    )
    assert result.exit_code == 0, result.output
    assert result.output.startswith("name,max_violation,worst_point,pass\n")


class SkewedSphere(Sphere):
    def canonical_projection(self, x):
        return 1.1 * super().canonical_projection(x)


def test_verify_identities_detects_corruption(runner, monkeypatch):
    monkeypatch.setattr("flowconn.cli.parse_manifold", lambda spec, **overrides: SkewedSphere(3, **overrides))
    result = runner.invoke(cli, ["verify-identities", "--points", "50"])
    assert result.exit_code == 1
    report = json.loads(result.output)
    failed = {check["name"] for check in report["checks"] if not check["pass"]}
    assert "idempotent" in failed


def test_theorem_oracle(runner):
    result = runner.invoke(cli, ["theorem", "--curve", "quarter-great-circle", "--nodes", "400"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    entry = next(e for e in report["entries"] if (e["i"], e["j"]) == (1, 2))
    assert entry["lhs"] == pytest.approx(np.pi / 2, abs=1e-4)
    assert abs(entry["residual"]) < 1e-10
    assert entry["pass"] is True
    assert report["config"]["nodes"] == 400
    assert report["config"]["h"] == pytest.approx(1e-4)
    assert "out" not in report["config"]


def test_theorem_csv(runner):
    result = runner.invoke(cli, ["theorem", "--nodes", "50", "--format", "csv"])
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0] == ",".join(THEOREM_COLUMNS)
    assert len(lines) == 10


def test_theorem_underpowered_run_is_well_formed(runner):
    result = runner.invoke(
        cli, ["theorem", "--mode", "monte-carlo", "--paths", "10", "--nodes", "20", "--dt", "1e-3", "--h", "1e-4"]
    )
    assert result.exit_code in (0, 1)
    report = json.loads(result.output)
    assert report["paths"] == 10
    assert all(entry["rhs_se"] >= 0 for entry in report["entries"])


def test_theorem_reports_are_reproducible(runner, tmp_path, monkeypatch):
    outputs = []
    for threads in (1, 8):
        monkeypatch.setattr(settings, "threads", threads)
        out = tmp_path / f"report-{threads}.json"
        args = ["theorem", "--mode", "monte-carlo", "--paths", "2048", "--nodes", "20", "--seed", "42", "--out", str(out)]
        result = runner.invoke(cli, args)
        assert result.exit_code in (0, 1), result.output
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_config_file_and_flag_precedence(runner, tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("manifold=sphere:n=3\nnodes=50\ncurve=great-circle\n", encoding="utf-8")
    result = runner.invoke(cli, ["theorem", "--config", str(path), "--nodes", "60"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert report["N"] == 60
    assert report["curve"] == "great-circle"


def test_config_file_rejects_unknown_keys(runner, tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("manifold=sphere:n=3\ncolour=blue\n", encoding="utf-8")
    result = runner.invoke(cli, ["theorem", "--config", str(path)])
    assert result.exit_code == 2


def test_invalid_numbers_are_usage_errors(runner):
    assert runner.invoke(cli, ["theorem", "--paths", "1"]).exit_code == 2
    assert runner.invoke(cli, ["theorem", "--nodes", "abc"]).exit_code == 2
    assert runner.invoke(cli, ["theorem", "--mode", "sideways"]).exit_code == 2


def test_recover_segment_ladder(runner):
    args = ["recover", "--point", "1,0,0", "--direction", "0,1,0", "--ladder", "0.04,0.02,0.01", "--format", "csv"]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    rows = [line.split(",") for line in result.output.splitlines()[1:]]
    column = [float(row[3]) for row in rows if row[1:3] == ["1", "2"]]
    assert len(column) == 3
    assert all(value == pytest.approx(1.0, rel=0.02) for value in column)
    references = {float(row[5]) for row in rows if row[1:3] == ["1", "2"]}
    assert references == {1.0}


def test_recover_on_plane(runner):
    result = runner.invoke(
        cli, ["recover", "--manifold", "plane:n=3,k=2", "--point", "0,0,0", "--direction", "1,0,0"]
    )
    assert result.exit_code == 0
    assert all(row["estimate"] == 0.0 for row in json.loads(result.output)["rows"])


def test_recover_loop(runner):
    result = runner.invoke(cli, ["recover", "--kind", "loop", "--point", "1,0,0", "--ladder", "0.1,0.05"])
    assert result.exit_code == 0, result.output
    rows = json.loads(result.output)["rows"]
    values = [row["estimate"] for row in rows if (row["i"], row["j"]) == (2, 3)]
    assert values == [pytest.approx(2.0, abs=1e-3)] * 2


def test_recover_rejects_normal_direction(runner):
    result = runner.invoke(cli, ["recover", "--point", "1,0,0", "--direction", "1,0,0"])
    assert result.exit_code == 2
    assert "tangent" in result.output


def test_contour_drift_specialization(runner):
    result = runner.invoke(cli, ["contour-drift", "--curve", "quarter-great-circle", "--i", "1", "--j", "2"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert report["value"] == pytest.approx(-np.pi / 4, abs=1e-4)
    assert report["difference"] < 1e-10


def test_contour_drift_trivial_cases(runner):
    constant = json.loads(runner.invoke(cli, ["contour-drift", "--case", "constant"]).output)
    assert constant["value"] == 0.0
    exact = json.loads(runner.invoke(cli, ["contour-drift", "--case", "exact", "--curve", "great-circle"]).output)
    assert abs(exact["value"]) < 1e-12


def test_contour_drift_index_range(runner):
    assert runner.invoke(cli, ["contour-drift", "--i", "4"]).exit_code == 2
