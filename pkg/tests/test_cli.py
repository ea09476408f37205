import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cycleflow import solve_full
from cycleflow.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main
from cycleflow.io import fixture_path, load_fixture, write_json


@pytest.fixture
def example_path():
    return str(fixture_path("paper_example"))


@pytest.fixture
def triangle_path(tmp_path):
    doc = {"format": 1, "kind": "graph", "nodes": 3,
           "arcs": [{"tail": 0, "head": 1}, {"tail": 1, "head": 2}, {"tail": 0, "head": 2}]}
    path = tmp_path / "triangle.json"
    path.write_text(json.dumps(doc))
    return str(path)


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestBasis:
    def test_triangle_to_stdout(self, capsys, triangle_path):
        code, out, _ = _run(capsys, "basis", triangle_path)
        doc = json.loads(out)
        assert code == EXIT_OK
        assert doc["format"] == 1 and doc["kind"] == "basis" and doc["mu"] == 1

    @pytest.mark.parametrize("method", ["tree", "horton"])
    def test_ieee30(self, capsys, tmp_path, method):
        out = tmp_path / "b.json"
        code, stdout, _ = _run(capsys, "basis", fixture_path("ieee30"), "--method", method, "--out", out)
        assert code == EXIT_OK and stdout == ""
        assert json.loads(out.read_text())["mu"] == 12


class TestValidate:
    def test_bad_file(self, capsys, tmp_path):
        doc = {"format": 1, "kind": "flow", "nodes": 2, "arcs": [{"tail": 0, "head": 1}], "injections": [1, 0]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        code, _, err = _run(capsys, "validate", path)
        assert code == EXIT_INVALID
        assert "injections" in err and "unbalanced" in err

    def test_unparsable(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[1,")
        code, _, err = _run(capsys, "validate", path)
        assert code == EXIT_INVALID and "ParseError" in err

    @pytest.mark.parametrize("name", ["ieee30", "paper_example", "opf_example", "paper_schedule"])
    def test_fixtures(self, capsys, name):
        code, out, _ = _run(capsys, "validate", fixture_path(name))
        assert code == EXIT_OK and out.startswith("ok:")

    def test_basis_file(self, capsys, tmp_path, example_path):
        bpath = tmp_path / "b.json"
        assert _run(capsys, "basis", example_path, "--out", bpath)[0] == EXIT_OK
        code, out, _ = _run(capsys, "validate", bpath, "--graph", example_path)
        assert code == EXIT_OK and "8 certified cycles" in out
        doc = json.loads(bpath.read_text())
        doc["matrix"][1] = doc["matrix"][0]
        doc.pop("cycles")
        bpath.write_text(json.dumps(doc))
        assert _run(capsys, "validate", bpath, "--graph", example_path)[0] == EXIT_INVALID


class TestSolve:
    def test_reduced_matches_full(self, capsys, tmp_path, example_path):
        bpath = tmp_path / "b.json"
        _run(capsys, "basis", example_path, "--out", bpath)
        code, out, _ = _run(capsys, "solve", example_path)
        full = json.loads(out)
        code_r, out_r, _ = _run(capsys, "solve", example_path, "--reduced", bpath, "--trace", tmp_path / "t.csv")
        red = json.loads(out_r)
        assert code == code_r == EXIT_OK
        assert abs(red["objective"] - full["objective"]) <= 1e-6 * max(1.0, abs(full["objective"]))
        assert len(red["z"]) == 8
        with open(tmp_path / "t.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "primal_res", "dual_res", "objective"]
        assert len(rows) == 1 + red["iterations"]

    def test_iteration_limit_exit_code(self, capsys, example_path):
        code, out, err = _run(capsys, "solve", example_path, "--max-iter", "2")
        assert code == EXIT_NOT_CONVERGED
        assert json.loads(out)["status"] == "max_iterations"

    def test_infeasible_bounds(self, capsys, tmp_path):
        doc = {"format": 1, "kind": "flow", "nodes": 2,
               "arcs": [{"tail": 0, "head": 1, "lower": -1, "upper": 1, "cost": {"quadratic": 1}}],
               "injections": [2, -2]}
        path = tmp_path / "p.json"
        path.write_text(json.dumps(doc))
        code, _, err = _run(capsys, "solve", path)
        assert code == EXIT_INVALID and "routed" in err


class TestReduce:
    def test_example(self, capsys, example_path):
        code, out, _ = _run(capsys, "reduce", example_path)
        doc = json.loads(out)
        assert code == EXIT_OK and doc["kind"] == "reduced" and doc["mu"] == 8
        P = np.array(doc["P"])
        assert P.shape == (8, 8) and np.allclose(P, P.T)
        assert len(doc["l"]) == 18


class TestMaxflow:
    def test_example_defaults(self, capsys, example_path):
        code, out, _ = _run(capsys, "maxflow", example_path)
        doc = json.loads(out)
        assert code == EXIT_OK
        assert doc["value"] == pytest.approx(82.0) and doc["certified"]
        assert doc["source_side"] == [0, 3] and doc["injections_feasible"]

    def test_ieee30_unit(self, capsys):
        code, out, _ = _run(capsys, "maxflow", fixture_path("ieee30"), "--sources", "1", "--sinks", "30", "--unit")
        assert code == EXIT_OK and json.loads(out)["value"] == 2.0

    def test_bad_node_label(self, capsys):
        code, _, err = _run(capsys, "maxflow", fixture_path("ieee30"), "--sources", "0", "--sinks", "30")
        assert code == EXIT_INVALID and "out of range" in err


class TestOpf:
    def test_reduced_and_full_agree(self, capsys):
        path = fixture_path("opf_example")
        _, out_r, _ = _run(capsys, "opf", path)
        _, out_f, _ = _run(capsys, "opf", path, "--full")
        red, full = json.loads(out_r), json.loads(out_f)
        assert red["objective"] == pytest.approx(full["objective"], rel=1e-6)
        assert max(red["residuals"].values()) <= 1e-6
        assert len(red["s"]) == 4

    def test_flow_file_rejected(self, capsys, example_path):
        assert _run(capsys, "opf", example_path)[0] == EXIT_INVALID


class TestSimulate:
    def test_schedule_run(self, capsys, tmp_path, example_path):
        trace = tmp_path / "trace.csv"
        code, out, _ = _run(capsys, "simulate", example_path, "--schedule", fixture_path("paper_schedule"),
                            "--trace", trace)
        summary = json.loads(out)
        assert code == EXIT_OK
        assert summary["agents"] == 8 and summary["converged"][1] is not None
        assert summary["max_error"] <= 1e-4
        lines = trace.read_text().splitlines()
        assert len(lines) == 1 + 8 * summary["rounds"]
        flags = [row.split(",")[3] for row in lines[1:]]
        assert flags.count("1") == 8

    def test_reference_document(self, capsys, tmp_path, example_path):
        ref = tmp_path / "ref.json"
        write_json({"format": 1, "kind": "solution", "x": [float(v) for v in solve_full(load_fixture("paper_example")).x]}, ref)
        code, out, _ = _run(capsys, "simulate", example_path, "--reference", ref, "--max-rounds", "5")
        assert code == EXIT_NOT_CONVERGED
        assert json.loads(out)["rounds"] == 5

    def test_wrong_reference_count(self, capsys, tmp_path, example_path):
        ref = tmp_path / "ref.json"
        write_json({"format": 1, "kind": "reference", "flows": []}, ref)
        assert _run(capsys, "simulate", example_path, "--reference", ref)[0] == EXIT_INVALID


class TestEntryPoints:
    def test_help(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for cmd in ("basis", "reduce", "solve", "maxflow", "opf", "simulate", "validate"):
            assert cmd in out

    def test_module_invocation(self, triangle_path):
        proc = subprocess.run([sys.executable, "-m", "cycleflow", "basis", triangle_path],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["mu"] == 1
