"""Command-line interface: subcommands, outputs, and exit codes."""

import json

import numpy as np
import pytest

from deeplq.cli import main
from deeplq.modelio import write_model

from conftest import scalar_model


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "model.json"
    write_model(path, scalar_model(n=3, c=0.5, risk_factor=0.2, horizon=0.5))
    return path


def run(*argv) -> int:
    return main([str(a) for a in argv])


class TestValidate:
    def test_ok_model_exits_zero(self, model_file, tmp_path, capsys):
        code = run("validate", "--model", model_file, "--out", tmp_path)
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["ok"] is True
        assert (tmp_path / "validate_model.json").exists()

    def test_invalid_model_exits_one(self, tmp_path, capsys):
        path = tmp_path / "bad_model.json"
        write_model(path, scalar_model(q=-2.0))
        code = run("validate", "--model", path, "--out", tmp_path)
        assert code == 1
        assert json.loads(capsys.readouterr().out)["ok"] is False

    def test_scenario_source(self, tmp_path):
        assert run("validate", "--scenario", "three-agent", "--out", tmp_path) == 0

    def test_malformed_json_exits_two(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text('{"horizon": 1.0,,}')
        code = run("validate", "--model", path, "--out", tmp_path)
        assert code == 2
        err = capsys.readouterr().err
        assert "line" in err and "column" in err

    def test_missing_file_exits_two(self, tmp_path):
        assert run("validate", "--model", tmp_path / "nope.json", "--out", tmp_path) == 2

    def test_unknown_scenario_exits_two(self, tmp_path):
        assert run("validate", "--scenario", "nope", "--out", tmp_path) == 2


class TestSolve:
    def test_writes_gains_figure_and_value(self, model_file, tmp_path):
        out = tmp_path / "out"
        code = run("solve", "--model", model_file, "--out", out, "--dt", "0.01")
        assert code == 0
        files = {p.name for p in out.iterdir()}
        assert "solve_model_gains.csv" in files
        assert "solve_model_gains.png" in files
        assert "solve_model_value.json" in files
        value = json.loads((out / "solve_model_value.json").read_text())
        assert "optimal_value" in value

    def test_lambda_override_changes_gains(self, model_file, tmp_path):
        outs = []
        for i, lam in enumerate(["0.0", "0.4"]):
            out = tmp_path / f"o{i}"
            assert run("solve", "--model", model_file, "--out", out, "--lambda", lam, "--dt", "0.01") == 0
            outs.append((out / "solve_model_gains.csv").read_text())
        assert outs[0] != outs[1]


class TestSimulate:
    def test_csv_png_json_written_deterministically(self, model_file, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            code = run(
                "simulate", "--model", model_file, "--out", out,
                "--dt", "0.01", "--seed", "7",
            )
            assert code == 0
        stem = "simulate_model_dss_seed7"
        csv1 = (out1 / f"{stem}.csv").read_bytes()
        csv2 = (out2 / f"{stem}.csv").read_bytes()
        assert csv1 == csv2
        assert (out1 / f"{stem}.png").read_bytes() == (out2 / f"{stem}.png").read_bytes()
        meta = json.loads((out1 / f"{stem}.json").read_text())
        assert meta["strategy"] == "DSS"
        assert meta["seed"] == 7

    @pytest.mark.parametrize("strategy", ["zero", "pdss-finite", "pdss-infinite", "oracle"])
    def test_alternative_strategies_run(self, model_file, tmp_path, strategy):
        code = run(
            "simulate", "--model", model_file, "--out", tmp_path,
            "--dt", "0.01", "--strategy", strategy,
        )
        assert code == 0

    def test_bad_dt_exits_two(self, model_file, tmp_path):
        assert run("simulate", "--model", model_file, "--out", tmp_path, "--dt", "-1") == 2


class TestExperiments:
    def test_por_requires_sweep(self, tmp_path):
        assert run("por", "--scenario", "supplier-only", "--out", tmp_path) == 2

    def test_por_writes_rows(self, tmp_path):
        code = run(
            "por", "--scenario", "supplier-only", "--out", tmp_path,
            "--sweep", "2,8", "--replicates", "300", "--dt", "0.01", "--seed", "3",
        )
        assert code == 0
        csv = (tmp_path / "por_supplier-only_seed3.csv").read_text()
        assert csv.count("\n") == 3  # header + two sweep rows
        assert (tmp_path / "por_supplier-only_seed3.png").exists()

    def test_poi_runs_both_filters(self, tmp_path):
        from deeplq import InitSpec, TeamModel, constant
        from conftest import scalar_subpop

        sp1 = scalar_subpop(n=2, c=0.5, Qbar=constant([[0.3, 0.1], [0.1, 0.3]]), mu=0.5)
        sp2 = scalar_subpop(
            n=3,
            c=0.9,
            a=-0.1,
            Qbar=None,
            mu=0.5,
            init=InitSpec("gaussian", np.full((3, 1), 0.4), 0.2 * np.eye(1)),
        )
        model = TeamModel((sp1, sp2), horizon=0.5, risk_factor=0.0, shared_set=frozenset({1}))
        path = tmp_path / "pair.json"
        write_model(path, model)
        code = run(
            "poi", "--model", path, "--out", tmp_path,
            "--sweep", "2,4", "--replicates", "200", "--dt", "0.01",
            "--observed", "1",
        )
        assert code == 0
        rows = json.loads((tmp_path / "poi_pair_seed0.json").read_text())["rows"]
        kinds = {r["filter"] for r in rows}
        assert kinds == {"finite", "infinite"}
        assert {r["n_star"] for r in rows} == {2, 4}


class TestOracleAndExport:
    def test_oracle_reports_tiny_residual(self, tmp_path, capsys):
        code = run(
            "oracle", "--scenario", "three-agent", "--out", tmp_path, "--dt", "0.01"
        )
        assert code == 0
        payload = json.loads((tmp_path / "oracle_three-agent.json").read_text())
        assert payload["max_relative_gain_residual"] < 1e-8

    def test_export_nn_layer_count(self, model_file, tmp_path):
        code = run("export-nn", "--model", model_file, "--out", tmp_path, "--dt", "0.01")
        assert code == 0
        net = json.loads((tmp_path / "network_model.json").read_text())
        assert len(net["layers"]) == 50  # horizon 0.5 / dt 0.01


class TestEquivarianceCommand:
    def test_pass_and_fail_exit_codes(self, tmp_path):
        sys_path = tmp_path / "sys.json"
        tr_path = tmp_path / "tr.json"
        sys_path.write_text(
            json.dumps({"A": [[1.0, 0.5], [0.5, 1.0]], "B": [[1.0, 0.0], [0.0, 1.0]],
                        "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0, 0.0], [0.0, 1.0]]})
        )
        tr_path.write_text(json.dumps({"F": [[0.0, 1.0], [1.0, 0.0]], "d_x": 1, "d_u": 1}))
        code = run(
            "equivariance", "check", "--system", sys_path, "--transform", tr_path,
            "--out", tmp_path,
        )
        assert code == 0
        sys_path.write_text(
            json.dumps({"A": [[1.0, 0.5], [0.0, 1.0]], "B": [[1.0, 0.0], [0.0, 1.0]],
                        "Q": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0, 0.0], [0.0, 1.0]]})
        )
        code = run(
            "equivariance", "check", "--system", sys_path, "--transform", tr_path,
            "--out", tmp_path,
        )
        assert code == 1
