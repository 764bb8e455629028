import json
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest
from typer.testing import CliRunner

from rome.cli import app

runner = CliRunner()

SIM_ARGS = ["--sim.n", "300", "--em.max_iter", "20", "--dro.c_grid", "1.0,0.5,0.1"]
DATA_ARGS = [
    "--data.a_names", ",".join(f"A{k}" for k in range(1, 16)),
    "--data.s_names", "S1,S2,S3,S4,S5",
    "--data.group_column", "group",
]
MOE_ARGS = ["--moe.epochs", "2", "--moe.batch", "64", "--moe.hidden_expert", "8", "--moe.hidden_gate", "8", "--moe.g", "2"]


def _invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def test_help_runs():
    """CLI --help should exit 0."""
    result = subprocess.run(
        [sys.executable, "-m", "rome.cli", "--help"],
        cwd=Path(__file__).parents[1],
        capture_output=True,
    )
    assert result.returncode == 0


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A simulated dataset with ROME-EM and MoE checkpoints for seeds 0 and 1."""
    out = tmp_path_factory.mktemp("run")
    common = ["--run.seeds", "0,1", "--run.out", out]
    result = _invoke("generate", *SIM_ARGS, *common)
    assert result.exit_code == 0, result.output
    data = out / "sim_data.csv"
    fitting = [*common, "--data.path", data, *DATA_ARGS, *SIM_ARGS]
    result = _invoke("fit-em", *fitting)
    assert result.exit_code == 0, result.output
    result = _invoke("fit-moe", *fitting, *MOE_ARGS)
    assert result.exit_code == 0, result.output
    return out, fitting


def test_generate_writes_dataset_and_config_echo(workspace):
    out, _ = workspace
    frame = pd.read_csv(out / "sim_data.csv")
    assert len(frame) == 300
    assert list(frame.columns[-2:]) == ["y", "group"]
    assert "n = 300" in (out / "run_config.ini").read_text()


def test_fit_commands_write_checkpoints_and_traces(workspace):
    out, _ = workspace
    models = out / "models"
    assert (models / "rome_em_seed0.json").exists() and (models / "rome_em_seed1.json").exists()
    assert (models / "rome_moe_s_seed1.json").exists() and (models / "baseline_mlp_fair_seed0.json").exists()
    trace = pd.read_csv(out / "moe_trace.csv")
    assert list(trace.columns) == ["seed", "role", "epoch", "l_total", "l_avg", "l_worst"]
    assert len(trace) == 2 * 5 * 2
    em_trace = pd.read_csv(out / "em_trace.csv")
    assert set(em_trace.seed) == {0, 1}


def test_evaluate_writes_tables(workspace):
    out, fitting = workspace
    result = _invoke("evaluate", *fitting, "--eval.min_n", "5")
    assert result.exit_code == 0, result.output
    mse = pd.read_csv(out / "results_mse.csv")
    assert {"ROME-EM", "Pooled regression", "ROME-MoE-AS"} <= set(mse.model)
    assert set(mse.scheme) == {"S1:quartile", "S2:quartile", "S3:quartile", "S4:quartile", "S5:quartile", "group:latent"}
    assert not mse.loc[mse.model == "ROME-EM", "fair"].any()
    reports = json.loads((out / "metric_reports.json").read_text())
    assert {r["seed"] for r in reports} == {0, 1}
    assert (out / "results.md").read_text().startswith("# Evaluation results")


def test_alpha_ablation(workspace):
    out, fitting = workspace
    result = _invoke("ablate-alpha", *fitting, *MOE_ARGS, "--ablation.alphas", "0,0.5", "--eval.min_n", "5")
    assert result.exit_code == 0, result.output
    table = pd.read_csv(out / "alpha_ablation.csv")
    assert len(table) == 2 * 2 * 2
    assert (out / "alpha_ablation_worst_mse.svg").exists()


def test_tune_reports_best_row_per_role(workspace):
    out, fitting = workspace
    result = _invoke(
        "tune", *fitting, *MOE_ARGS,
        "--tune.roles", "Baseline MLP - Fair,ROME-MoE-S",
        "--tune.lrs", "1e-2", "--tune.hidden", "4,8", "--tune.gate_hidden", "4",
    )
    assert result.exit_code == 0, result.output
    table = pd.read_csv(out / "tune_results.csv")
    assert len(table) == 4


def test_simulation_outputs_are_reproducible(tmp_path):
    runs = []
    for name, workers in (("a", "1"), ("b", "4")):
        out = tmp_path / name
        result = _invoke("simulate", *SIM_ARGS, "--run.seeds", "0,1,2", "--run.workers", workers, "--run.out", out)
        assert result.exit_code == 0, result.output
        runs.append(out)
    for file in ("sim_results.csv", "param_recovery.csv", "sim_summary.json", "worst_group_mse.svg"):
        assert (runs[0] / file).read_bytes() == (runs[1] / file).read_bytes()
    results = pd.read_csv(runs[0] / "sim_results.csv")
    assert list(results.columns[:6]) == ["seed", "method", "c", "overall_mse", "worst_mse", "worst_group"]
    assert len(results) == 3 * (1 + 3)


def test_unknown_setting_exits_with_config_code(tmp_path):
    result = _invoke("simulate", "--sim.size", "10", "--run.out", tmp_path)
    assert result.exit_code == 2


def test_missing_column_exits_with_data_code(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("A1,S1,y\n1,2,3\n")
    result = _invoke("fit-em", "--data.path", path, "--data.a_names", "A1,A2", "--data.s_names", "S1", "--run.out", tmp_path)
    assert result.exit_code == 3


def test_missing_checkpoint_is_a_config_error(tmp_path, workspace):
    out, _ = workspace
    args = ["--run.out", tmp_path / "empty", "--data.path", out / "sim_data.csv", *DATA_ARGS, "--moe.roles", "ROME-MoE-S"]
    result = _invoke("evaluate", *args)
    assert result.exit_code == 2
