"""
Subcommand drivers.

Each driver fans independent (seed, config) cells out to a thread pool, puts
the results back in cell order and only then writes files, so outputs do not
depend on scheduling.
"""
from __future__ import annotations

import concurrent.futures as _fut
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence

import numpy as np
import pandas as pd

from . import simgen
from .analysis.metrics import MetricReport, aggregate_seeds, metrics
from .analysis.stats import paired_ttest, significance_code
from .analysis.subgroups import partition
from .config import Settings
from .data import Splits, ingest_csv, make_splits
from .errors import ConfigError, DegenerateTestError, RomeError, with_context
from .models import dro, em, moe
from .models.core import Dataset, FeatureSpec, MixtureParams, RobustWeights, ensemble_predictions, pooled_ols
from .reporters import checkpoint, plots
from .reporters.csv_writer import write_csv
from .reporters.json_writer import write_json
from .reporters.markdown_writer import write_markdown
from .roles.base import BaseRole, resolve

log = logging.getLogger(__name__)

ROME_EM = "ROME-EM"
POOLED = "Pooled regression"

SIM_RESULT_COLUMNS = ["seed", "method", "c", "overall_mse", "worst_mse", "worst_group"]
EM_TRACE_COLUMNS = ["seed", "iteration", "loglik", "alpha"]
MOE_TRACE_COLUMNS = ["seed", "role", "epoch", "l_total", "l_avg", "l_worst"]
REPORT_COLUMNS = ["scheme", "model", "seed", "subgroup", "n", "mse", "r2"]
RESULT_COLUMNS = ["scheme", "model", "fair", "overall_mean", "overall_se", "overall_sig", "worst_mean", "worst_se", "worst_sig"]
ABLATION_COLUMNS = ["variant", "alpha", "seed", "overall_mse", "worst_mse"]
TUNE_COLUMNS = ["role", "lr", "hidden_expert", "hidden_gate", "val_mse"]
SELECTION_COLUMNS = ["seed", "g", "loglik", "aic", "bic", "converged"]


# --------------------------------------------------------------------------- #
# plumbing
# --------------------------------------------------------------------------- #
def _fan_out(settings: Settings, cells: Sequence[tuple[str, Callable[[], Any]]]) -> List[Any]:
    """Run every cell on the pool; results come back in cell order."""
    max_workers = settings.workers or min(32, (os.cpu_count() or 1) * 5)
    results: Dict[int, Any] = {}
    with _fut.ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(fn): (k, label) for k, (label, fn) in enumerate(cells)}
        for f in _fut.as_completed(futures):
            k, label = futures[f]
            try:
                results[k] = f.result()
            except RomeError as exc:
                for other in futures:
                    other.cancel()
                raise with_context(exc, label) from exc
    return [results[k] for k in range(len(cells))]


def _protocol(settings: Settings) -> dict:
    return {
        "data": Path(settings.get("data.path")).name,
        "fractions": list(settings.fractions),
        "standardize": settings.get_bool("data.standardize"),
    }


def _load(settings: Settings) -> Dataset:
    spec = settings.feature_spec()
    return ingest_csv(settings.data_path(), spec, settings.get("data.group_column") or None)


def _splits(settings: Settings, data: Dataset, seed: int) -> Splits:
    return make_splits(data, settings.fractions, seed, settings.get_bool("data.standardize"))


def _models_dir(settings: Settings) -> Path:
    return settings.out / "models"


def _em_path(settings: Settings, seed: int) -> Path:
    return _models_dir(settings) / f"rome_em_seed{seed}.json"


def _moe_path(settings: Settings, role: BaseRole, seed: int) -> Path:
    return _models_dir(settings) / f"{role.slug}_seed{seed}.json"


# --------------------------------------------------------------------------- #
# generate / simulate
# --------------------------------------------------------------------------- #
def run_generate(settings: Settings) -> Path:
    """Write one simulated dataset (true labels in a ``group`` column)."""
    spec = replace(settings.sim_spec(), seed=settings.seeds[0])
    data, _ = simgen.generate(spec)
    settings.write_echo(settings.out)
    path = simgen.write_dataset_csv(data, settings.out / "sim_data.csv")
    log.info("wrote %d simulated rows to %s", data.n, path)
    return path


def run_simulation(settings: Settings) -> Dict[str, Any]:
    spec = settings.sim_spec()
    em_cfg = settings.em_config()
    grid = settings.c_grid()
    n_test = settings.sim_n_test()
    cells = [
        (f"replication {k} (seed {seed})", lambda seed=seed: simgen.replicate(spec, em_cfg, grid, seed, n_test))
        for k, seed in enumerate(settings.seeds)
    ]
    outcomes = _fan_out(settings, cells)
    for out in outcomes:
        if not out.em_converged:
            log.warning("EM did not converge for seed %d within %d iterations", out.seed, out.em_iterations)
    results, recovery = simgen.results_frames(outcomes, spec.g)
    summary = simgen.summarize(results)

    out_dir = settings.out
    settings.write_echo(out_dir)
    columns = [*SIM_RESULT_COLUMNS, *(f"mse_g{j}" for j in range(spec.g))]
    write_csv(results, out_dir / "sim_results.csv", columns)
    write_csv(recovery, out_dir / "param_recovery.csv")
    write_json(summary, out_dir / "sim_summary.json")

    best = results[(results.method == "rome_em") & (results.c == summary["best_c"])]
    pooled = results[results.method == "pooled"]
    plots.boxplot(
        {"Pooled regression": pooled.worst_mse.tolist(), f"ROME-EM (c={summary['best_c']:g})": best.worst_mse.tolist()},
        out_dir / "worst_group_mse.svg",
        title="Worst-group test MSE across replications",
        ylabel="MSE",
    )
    rome_rec = recovery[recovery.method == "rome_em"]
    errors = {
        name: (part.estimate - part.truth).tolist()
        for name, part in rome_rec.groupby("param", sort=False)
    }
    plots.boxplot(errors, out_dir / "param_recovery.svg", title="ROME-EM coefficient error (estimate - truth)", ylabel="error")
    return {"summary": summary, "dir": out_dir}


# --------------------------------------------------------------------------- #
# fitting
# --------------------------------------------------------------------------- #
def _fit_em_cell(settings: Settings, data: Dataset, seed: int) -> dict:
    splits = _splits(settings, data, seed)
    cfg = settings.em_config(seed)
    fitted = em.fit(splits.train, cfg)
    if not fitted.converged:
        log.warning("EM did not converge for seed %d within %d iterations", seed, cfg.max_iter)
    gram_rows = splits.train if settings.get("dro.gram_rows") == "train" else splits.test
    solver = settings.dro_solver()
    v0 = solver.pop("v0")
    sweep = dro.constraint_sweep(dro.estimate_gram(fitted.params, gram_rows), v0, settings.c_grid(), **solver)
    aic, bic = em.information_criteria(fitted, splits.train)
    model = {
        "params": fitted.params.to_dict(),
        "sweep": [w.to_dict() for w in sweep],
        "pooled": pooled_ols(splits.train).tolist(),
        "loglik": fitted.loglik,
        "aic": aic,
        "bic": bic,
        "iterations": fitted.iterations,
        "converged": fitted.converged,
    }
    checkpoint.save_checkpoint(
        _em_path(settings, seed), "rome_em", model, spec=data.spec, seed=seed, protocol=_protocol(settings)
    )
    trace = [
        {"seed": seed, "iteration": it, "loglik": ll, "alpha": fitted.alphas[it - 1] if it > 0 else None}
        for it, ll in enumerate(fitted.trace)
    ]
    selection = []
    if g_grid := settings.get_ints("em.g_grid"):
        selection = [{"seed": seed, **row} for row in em.select_groups(splits.train, cfg, g_grid)]
    return {"trace": trace, "selection": selection}


def run_fit_em(settings: Settings) -> Path:
    data = _load(settings)
    cells = [(f"seed {seed}", lambda seed=seed: _fit_em_cell(settings, data, seed)) for seed in settings.seeds]
    outcomes = _fan_out(settings, cells)
    settings.write_echo(settings.out)
    write_csv([row for out in outcomes for row in out["trace"]], settings.out / "em_trace.csv", EM_TRACE_COLUMNS)
    if any(out["selection"] for out in outcomes):
        write_csv([row for out in outcomes for row in out["selection"]], settings.out / "group_selection.csv", SELECTION_COLUMNS)
    return _models_dir(settings)


def _fit_moe_cell(settings: Settings, data: Dataset, role: BaseRole, seed: int) -> list[dict]:
    splits = _splits(settings, data, seed)
    result = role.train(splits.train, settings.moe_config(seed))
    model = {"role": role.name, "fair": role.fair, **result.model.to_dict()}
    checkpoint.save_checkpoint(
        _moe_path(settings, role, seed), "moe", model, spec=data.spec, seed=seed, protocol=_protocol(settings)
    )
    return [{"seed": seed, "role": role.name, **row} for row in result.trace]


def run_fit_moe(settings: Settings) -> Path:
    data = _load(settings)
    roles = resolve(settings.get_list("moe.roles"))
    cells = [
        (f"{role.name}, seed {seed}", lambda role=role, seed=seed: _fit_moe_cell(settings, data, role, seed))
        for seed in settings.seeds
        for role in roles
    ]
    traces = _fan_out(settings, cells)
    settings.write_echo(settings.out)
    write_csv([row for trace in traces for row in trace], settings.out / "moe_trace.csv", MOE_TRACE_COLUMNS)
    return _models_dir(settings)


# --------------------------------------------------------------------------- #
# evaluation
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, slots=True)
class ModelEntry:
    name: str
    fair: bool
    kind: str  # "moe" | "rome_em" | "pooled"
    role: BaseRole | None = None


def _entries(settings: Settings, spec: FeatureSpec) -> List[ModelEntry]:
    names = settings.get_list("eval.models")
    if not names:
        names = settings.get_list("moe.roles")
        if _em_path(settings, settings.seeds[0]).exists():
            names = [*names, ROME_EM, POOLED]
    em_fair = len(spec.out_indices) == 0
    entries = []
    for name in names:
        if name == ROME_EM:
            entries.append(ModelEntry(name, em_fair, "rome_em"))
        elif name == POOLED:
            entries.append(ModelEntry(name, em_fair, "pooled"))
        else:
            role = resolve([name])[0]
            entries.append(ModelEntry(name, role.fair, "moe", role))
    return entries


def _checkpoint(settings: Settings, path: Path, kind: str, spec: FeatureSpec, seed: int) -> dict:
    if not path.exists():
        raise ConfigError(f"missing checkpoint {path}; run the matching fit command first")
    payload = checkpoint.load_checkpoint(path, kind)
    checkpoint.check_compatible(payload, spec=spec, seed=seed, protocol=_protocol(settings), path=path)
    return payload["model"]


def _pick_weights(sweep: List[RobustWeights], params: MixtureParams, val: Dataset, ids: np.ndarray, min_n: int) -> RobustWeights:
    """The c with the lowest validation worst-group MSE (overall MSE when no subgroup qualifies)."""
    design = val.design()

    def score(w: RobustWeights) -> tuple[float, float]:
        yhat = ensemble_predictions(params, w, design)
        report = metrics(val.y, yhat, ids, min_n)
        worst = report.worst_mse if not math.isnan(report.worst_mse) else math.inf
        return worst, report.overall_mse

    return min(sweep, key=score)


def _evaluate_seed(settings: Settings, data: Dataset, entries: List[ModelEntry], seed: int) -> list[tuple[str, str, MetricReport]]:
    splits = _splits(settings, data, seed)
    spec = data.spec
    min_n = settings.get_int("eval.min_n")
    center = settings.get("eval.r2_center")
    schemes = settings.schemes(splits.train)
    val_ids = partition(splits.val, schemes[0])

    predictions: Dict[str, np.ndarray] = {}
    em_model = None
    for entry in entries:
        if entry.kind == "moe":
            raw = _checkpoint(settings, _moe_path(settings, entry.role, seed), "moe", spec, seed)
            predictions[entry.name] = moe.predict(moe.MoeModel.from_dict(raw), splits.test)
            continue
        if em_model is None:
            em_model = _checkpoint(settings, _em_path(settings, seed), "rome_em", spec, seed)
        if entry.kind == "pooled":
            predictions[entry.name] = splits.test.design() @ np.asarray(em_model["pooled"])
        else:
            params = MixtureParams.from_dict(em_model["params"])
            sweep = [RobustWeights.from_dict(w) for w in em_model["sweep"]]
            chosen = _pick_weights(sweep, params, splits.val, val_ids, min_n)
            log.info("seed %d: ROME-EM uses c=%g", seed, chosen.c)
            predictions[entry.name] = ensemble_predictions(params, chosen, splits.test.design())

    out = []
    for scheme in schemes:
        ids = partition(splits.test, scheme)
        for entry in entries:
            out.append((scheme.name, entry.name, metrics(splits.test.y, predictions[entry.name], ids, min_n, center)))
    return out


def _significance(values: np.ndarray, baseline: np.ndarray | None) -> str:
    if baseline is None or np.isnan(values).any() or np.isnan(baseline).any() or len(values) < 2:
        return ""
    try:
        return significance_code(paired_ttest(values, baseline).p)
    except DegenerateTestError:
        return "identical"


def _result_tables(
    reports: Dict[tuple[str, str], List[MetricReport]], entries: List[ModelEntry], schemes: List[str], baseline: str
) -> Dict[str, pd.DataFrame]:
    tables: Dict[str, list] = {"mse": [], "r2": []}
    for scheme in schemes:
        base = reports.get((scheme, baseline))
        for entry in entries:
            group = reports[(scheme, entry.name)]
            agg = aggregate_seeds(group)
            for metric in ("mse", "r2"):
                row = {"scheme": scheme, "model": entry.name, "fair": entry.fair}
                for level in ("overall", "worst"):
                    key = f"{level}_{metric}"
                    mean, se = agg[key]
                    values = np.array([getattr(r, key) for r in group])
                    ref = None
                    if base is not None and entry.name != baseline:
                        ref = np.array([getattr(r, key) for r in base])
                    row.update({f"{level}_mean": mean, f"{level}_se": se, f"{level}_sig": _significance(values, ref)})
                tables[metric].append(row)
    return {metric: pd.DataFrame(rows, columns=RESULT_COLUMNS) for metric, rows in tables.items()}


def run_evaluation(settings: Settings) -> Dict[str, pd.DataFrame]:
    data = _load(settings)
    entries = _entries(settings, data.spec)
    baseline = settings.get("eval.baseline")
    if baseline not in {e.name for e in entries}:
        log.warning("baseline %r is not among the evaluated models; significance columns stay empty", baseline)
    cells = [
        (f"seed {seed}", lambda seed=seed: _evaluate_seed(settings, data, entries, seed)) for seed in settings.seeds
    ]
    per_seed = _fan_out(settings, cells)

    reports: Dict[tuple[str, str], List[MetricReport]] = {}
    report_rows, report_json = [], []
    for seed, rows in zip(settings.seeds, per_seed):
        for scheme, model, report in rows:
            reports.setdefault((scheme, model), []).append(report)
            report_rows.extend({"scheme": scheme, "model": model, "seed": seed, **r} for r in report.rows())
            report_json.append({"scheme": scheme, "model": model, "seed": seed, "report": report.to_dict()})
    schemes = list(dict.fromkeys(scheme for scheme, _ in reports))
    tables = _result_tables(reports, entries, schemes, baseline)

    out_dir = settings.out
    settings.write_echo(out_dir)
    write_csv(report_rows, out_dir / "metric_reports.csv", REPORT_COLUMNS)
    write_json(report_json, out_dir / "metric_reports.json")
    write_csv(tables["mse"], out_dir / "results_mse.csv", RESULT_COLUMNS)
    write_csv(tables["r2"], out_dir / "results_r2.csv", RESULT_COLUMNS)
    write_markdown(
        tables,
        out_dir / "results.md",
        title="Evaluation results",
        notes=[f"Seeds: {', '.join(map(str, settings.seeds))}. Baseline for significance: {baseline}."],
    )
    return tables


# --------------------------------------------------------------------------- #
# sweeps
# --------------------------------------------------------------------------- #
def _dedupe(values: List[float], key: str) -> List[float]:
    unique = list(dict.fromkeys(values))
    if len(unique) < len(values):
        log.warning("%s contains duplicates; using %s", key, unique)
    return unique


def _ablation_cell(settings: Settings, data: Dataset, variant: str, alpha: float, seed: int) -> dict:
    splits = _splits(settings, data, seed)
    scheme = settings.schemes(splits.train)[0]
    cfg = replace(settings.moe_config(seed), variant=variant, alpha=alpha, expert_uses_s=False)
    model = moe.train(splits.train, cfg).model
    report = metrics(splits.test.y, moe.predict(model, splits.test), partition(splits.test, scheme), settings.get_int("eval.min_n"))
    return {"variant": variant, "alpha": alpha, "seed": seed, "overall_mse": report.overall_mse, "worst_mse": report.worst_mse}


def run_alpha_ablation(settings: Settings) -> pd.DataFrame:
    data = _load(settings)
    alphas = _dedupe(settings.get_floats("ablation.alphas"), "ablation.alphas")
    variants = _dedupe(settings.get_list("ablation.variants"), "ablation.variants")
    if bad := [v for v in variants if v not in moe.VARIANTS]:
        raise ConfigError(f"ablation.variants must be drawn from {moe.VARIANTS}, got {bad}")
    cells = [
        (
            f"variant {variant}, alpha {alpha:g}, seed {seed}",
            lambda variant=variant, alpha=alpha, seed=seed: _ablation_cell(settings, data, variant, alpha, seed),
        )
        for variant in variants
        for alpha in alphas
        for seed in settings.seeds
    ]
    table = pd.DataFrame(_fan_out(settings, cells), columns=ABLATION_COLUMNS)

    out_dir = settings.out
    settings.write_echo(out_dir)
    write_csv(table, out_dir / "alpha_ablation.csv", ABLATION_COLUMNS)
    means = table.groupby(["variant", "alpha"], sort=False)[["overall_mse", "worst_mse"]].mean()
    for metric, label in (("worst_mse", "Worst-group"), ("overall_mse", "Overall")):
        series = {f"ROME-MoE-{v.upper()}": [means.loc[(v, a), metric] for a in alphas] for v in variants}
        plots.lineplot(alphas, series, out_dir / f"alpha_ablation_{metric}.svg", f"{label} test MSE vs alpha", "alpha", "MSE")
    return table


def _tune_cell(settings: Settings, data: Dataset, role: BaseRole, lr: float, hidden: int, gate_hidden: int) -> dict:
    seed = settings.seeds[0]
    splits = _splits(settings, data, seed)
    base = replace(settings.moe_config(seed), lr=lr, hidden_expert=hidden, hidden_gate=gate_hidden)
    model = role.train(splits.train, base).model
    val_mse = float(np.mean((splits.val.y - moe.predict(model, splits.val)) ** 2))
    return {"role": role.name, "lr": lr, "hidden_expert": hidden, "hidden_gate": gate_hidden, "val_mse": val_mse}


def run_tune(settings: Settings) -> pd.DataFrame:
    """Grid search on the validation split of the first seed; returns the best row per role."""
    data = _load(settings)
    roles = resolve(settings.get_list("tune.roles"))
    base = settings.moe_config()
    cells = []
    for role in roles:
        # a single expert has no gate to size
        gate_grid = settings.get_ints("tune.gate_hidden") if role.configure(base).g > 1 else [base.hidden_gate]
        for lr in settings.get_floats("tune.lrs"):
            for hidden in settings.get_ints("tune.hidden"):
                for gate_hidden in gate_grid:
                    cells.append(
                        (
                            f"{role.name}, lr {lr:g}, hidden {hidden}/{gate_hidden}",
                            lambda role=role, lr=lr, hidden=hidden, gh=gate_hidden: _tune_cell(settings, data, role, lr, hidden, gh),
                        )
                    )
    table = pd.DataFrame(_fan_out(settings, cells), columns=TUNE_COLUMNS)
    settings.write_echo(settings.out)
    write_csv(table, settings.out / "tune_results.csv", TUNE_COLUMNS)
    best = table.loc[table.groupby("role", sort=False)["val_mse"].idxmin()]
    return best.reset_index(drop=True)
