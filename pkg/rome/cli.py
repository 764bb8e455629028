import logging
from pathlib import Path
from typing import Callable

import typer
from rich import print
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .config import Settings, parse_overrides
from .errors import RomeError
from .orchestrator import (
    run_alpha_ablation,
    run_evaluation,
    run_fit_em,
    run_fit_moe,
    run_generate,
    run_simulation,
    run_tune,
)

app = typer.Typer(help="Robust mixture models for fair regression: EM + DRO and robust mixture-of-experts.")
OVERRIDES = {"allow_extra_args": True, "ignore_unknown_options": True}
console = Console()


def _settings(ctx: typer.Context) -> Settings:
    return Settings.load(parse_overrides(ctx.args), ctx.obj.get("config") if ctx.obj else None)


def _run(ctx: typer.Context, action: Callable[[Settings], object]) -> object:
    """Resolve settings and run ``action``; library errors become exit codes."""
    try:
        return action(_settings(ctx))
    except RomeError as exc:
        print(f"[red]Error: {exc}[/]")
        raise typer.Exit(code=exc.exit_code)


@app.command(context_settings=OVERRIDES)
def generate(ctx: typer.Context):
    """Write one simulated dataset (A1..A15, S1..S5, y, group) to <run.out>/sim_data.csv."""
    path = _run(ctx, run_generate)
    print(f"[green]✔ Simulated dataset saved to {path}[/]")


@app.command(context_settings=OVERRIDES)
def simulate(ctx: typer.Context):
    """Run the simulation replications: pooled regression vs ROME-EM over the c sweep."""
    result = _run(ctx, run_simulation)
    summary = result["summary"]
    table = Table(title="Worst-group test MSE")
    table.add_column("replications")
    table.add_column("pooled")
    table.add_column("ROME-EM")
    table.add_column("best c")
    table.add_column("reduction")
    table.add_column("one-sided p")
    table.add_row(
        str(summary["replications"]),
        f"{summary['pooled_worst_mse']:.4f}",
        f"{summary['rome_em_worst_mse']:.4f}",
        f"{summary['best_c']:g}",
        f"{100 * summary['relative_reduction']:.2f}%",
        f"{summary['p_one_sided']:.3g}",
    )
    console.print(table)
    print(f"[green]✔ Simulation completed. Results saved to {result['dir']}[/]")


@app.command("fit-em", context_settings=OVERRIDES)
def fit_em(ctx: typer.Context):
    """Fit ROME-EM per seed and store the constraint sweep with each checkpoint."""
    models = _run(ctx, run_fit_em)
    print(f"[green]✔ ROME-EM checkpoints saved to {models}[/]")


@app.command("fit-moe", context_settings=OVERRIDES)
def fit_moe(ctx: typer.Context):
    """Train the configured model roles (moe.roles) per seed."""
    models = _run(ctx, run_fit_moe)
    print(f"[green]✔ Model checkpoints saved to {models}[/]")


@app.command(context_settings=OVERRIDES)
def evaluate(ctx: typer.Context):
    """Score saved checkpoints on the test split over every subgroup scheme."""
    tables = _run(ctx, run_evaluation)
    mse = tables["mse"]
    table = Table(title="MSE (mean ± se)")
    for column in ("scheme", "model", "overall", "worst-group"):
        table.add_column(column)
    for _, row in mse.iterrows():
        table.add_row(
            row["scheme"],
            row["model"],
            f"{row['overall_mean']:.4f} ± {row['overall_se']:.4f} {row['overall_sig']}",
            f"{row['worst_mean']:.4f} ± {row['worst_se']:.4f} {row['worst_sig']}",
        )
    console.print(table)
    print("[green]✔ Evaluation completed.[/]")


@app.command("ablate-alpha", context_settings=OVERRIDES)
def ablate_alpha(ctx: typer.Context):
    """Train ROME-MoE-S and -AS across the alpha grid and plot the MSE curves."""
    table = _run(ctx, run_alpha_ablation)
    means = table.groupby(["variant", "alpha"], sort=False)[["overall_mse", "worst_mse"]].mean().reset_index()
    out = Table(title="Mean test MSE by alpha")
    for column in ("variant", "alpha", "overall", "worst-group"):
        out.add_column(column)
    for _, row in means.iterrows():
        out.add_row(row["variant"], f"{row['alpha']:g}", f"{row['overall_mse']:.4f}", f"{row['worst_mse']:.4f}")
    console.print(out)


@app.command(context_settings=OVERRIDES)
def tune(ctx: typer.Context):
    """Grid-search learning rate and hidden sizes on the validation split."""
    best = _run(ctx, run_tune)
    out = Table(title="Best settings by validation MSE")
    for column in ("role", "lr", "hidden", "gate hidden", "val MSE"):
        out.add_column(column)
    for _, row in best.iterrows():
        out.add_row(row["role"], f"{row['lr']:g}", str(row["hidden_expert"]), str(row["hidden_gate"]), f"{row['val_mse']:.4f}")
    console.print(out)


@app.callback()
def main(
    ctx: typer.Context,
    config: Path = typer.Option(None, "--config", help="INI file with [section] key = value settings."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log per-iteration progress."),
):
    """Any setting can be overridden after the subcommand, e.g. `rome simulate --sim.n 500 --run.seeds 1`."""
    logging.basicConfig(level=logging.WARNING, format="%(message)s", handlers=[RichHandler(show_path=False)], force=True)
    logging.getLogger("rome").setLevel(logging.DEBUG if verbose else logging.INFO)
    ctx.obj = {"config": config}


if __name__ == "__main__":
    app()
