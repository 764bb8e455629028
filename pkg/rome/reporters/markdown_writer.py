from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List

import pandas as pd


def _cell(mean: float, se: float, sig: str | float | None = None) -> str:
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "n/a"
    text = f"{mean:.4f} ± {se:.4f}"
    if isinstance(sig, str) and sig:
        text += f" {sig}"
    return text


def _best_fair(table: pd.DataFrame, higher_is_better: bool) -> str | None:
    fair = table[table["fair"].astype(bool)].dropna(subset=["worst_mean"])
    if fair.empty:
        return None
    pick = fair["worst_mean"].idxmax() if higher_is_better else fair["worst_mean"].idxmin()
    return fair.loc[pick, "model"]


def _format_metric(table: pd.DataFrame, label: str, higher_is_better: bool) -> List[str]:
    """One markdown table per scheme; the best fair model by worst-group value in bold."""
    lines = []
    for scheme, part in table.groupby("scheme", sort=False):
        best = _best_fair(part, higher_is_better)
        lines.append(f"### {label}: `{scheme}`")
        lines.append("")
        lines.append(f"| Model | Fair | Overall {label} | Worst-group {label} |")
        lines.append("|---|---|---|---|")
        for _, row in part.iterrows():
            name = f"**{row['model']}**" if row["model"] == best else row["model"]
            overall = _cell(row["overall_mean"], row["overall_se"], row.get("overall_sig"))
            worst = _cell(row["worst_mean"], row["worst_se"], row.get("worst_sig"))
            if row["model"] == best:
                worst = f"**{worst}**"
            lines.append(f"| {name} | {'yes' if row['fair'] else 'no'} | {overall} | {worst} |")
        lines.append("")
    return lines


def write_markdown(tables: Dict[str, pd.DataFrame], path: Path, title: str, notes: List[str] | None = None) -> Path:
    """Write a markdown report from the aggregated metric tables.

    ``tables`` maps ``"mse"`` and/or ``"r2"`` to frames with the
    results_mse.csv / results_r2.csv columns.
    """
    lines = [f"# {title}", ""]
    if notes:
        lines.extend(notes)
        lines.append("")
    lines.append("Mean ± standard error over seeds. Significance against the baseline: *** p<0.001, ** p<0.01, * p<0.05, ns otherwise.")
    lines.append("Best fair model per scheme in bold.")
    lines.append("")
    if "mse" in tables:
        lines.append("## MSE")
        lines.extend(_format_metric(tables["mse"], "MSE", higher_is_better=False))
    if "r2" in tables:
        lines.append("## R²")
        lines.extend(_format_metric(tables["r2"], "R²", higher_is_better=True))

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines), encoding="utf-8")
    return path
