"""Overall and worst-subgroup regression metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from ..errors import ContractViolation
from .stats import mean_se

METRIC_NAMES = ("overall_mse", "overall_r2", "worst_mse", "worst_r2")
DEFAULT_MIN_N = 30


@dataclass(frozen=True, slots=True)
class SubgroupMetrics:
    n: int
    mse: float
    r2: float  # nan when the subgroup outcome has zero variance


@dataclass(frozen=True, slots=True)
class MetricReport:
    overall_mse: float
    overall_r2: float
    worst_mse: float
    worst_r2: float
    per_subgroup: dict[str, SubgroupMetrics] = field(default_factory=dict)
    worst_subgroup_id: str | None = None
    worst_r2_subgroup_id: str | None = None

    def to_dict(self) -> dict:
        def clean(x: float) -> float | None:
            return None if math.isnan(x) else x

        return {
            "overall_mse": self.overall_mse,
            "overall_r2": clean(self.overall_r2),
            "worst_mse": clean(self.worst_mse),
            "worst_r2": clean(self.worst_r2),
            "worst_subgroup_id": self.worst_subgroup_id,
            "worst_r2_subgroup_id": self.worst_r2_subgroup_id,
            "per_subgroup": {
                sid: {"n": m.n, "mse": m.mse, "r2": clean(m.r2)} for sid, m in sorted(self.per_subgroup.items())
            },
        }

    def rows(self) -> list[dict]:
        """One flat row per subgroup, sorted by id."""
        return [
            {"subgroup": sid, "n": m.n, "mse": m.mse, "r2": m.r2}
            for sid, m in sorted(self.per_subgroup.items())
        ]


def _r2(y: np.ndarray, yhat: np.ndarray, center: float) -> float:
    sst = float(((y - center) ** 2).sum())
    if sst == 0.0:
        return math.nan
    return 1.0 - float(((y - yhat) ** 2).sum()) / sst


def metrics(
    y: Sequence[float],
    yhat: Sequence[float],
    subgroups: Sequence[str],
    min_n: int = DEFAULT_MIN_N,
    r2_center: str = "local",
) -> MetricReport:
    """MSE and R^2 overall and per subgroup; extrema only over subgroups with n >= min_n.

    ``r2_center="local"`` centres each subgroup's SST on its own mean,
    ``"global"`` on the mean of the whole evaluated set.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    subgroups = np.asarray(subgroups, dtype=object)
    if not (y.shape == yhat.shape == subgroups.shape):
        raise ContractViolation("y, yhat and subgroup ids must have equal lengths")
    if min_n < 1:
        raise ContractViolation("min_n must be at least 1")
    if r2_center not in ("local", "global"):
        raise ContractViolation("r2_center must be 'local' or 'global'")

    overall_mean = float(y.mean())
    overall_mse = float(np.mean((y - yhat) ** 2))
    overall_r2 = _r2(y, yhat, overall_mean)

    frame = pd.DataFrame({"y": y, "yhat": yhat, "group": subgroups})
    per = {}
    for sid, part in frame.groupby("group", sort=True):
        gy, gyhat = part["y"].to_numpy(), part["yhat"].to_numpy()
        center = float(gy.mean()) if r2_center == "local" else overall_mean
        per[str(sid)] = SubgroupMetrics(len(part), float(np.mean((gy - gyhat) ** 2)), _r2(gy, gyhat, center))

    qualifying = {sid: m for sid, m in per.items() if m.n >= min_n}
    worst_id = max(qualifying, key=lambda sid: (qualifying[sid].mse, sid), default=None)
    with_r2 = {sid: m for sid, m in qualifying.items() if not math.isnan(m.r2)}
    worst_r2_id = min(with_r2, key=lambda sid: (with_r2[sid].r2, sid), default=None)
    return MetricReport(
        overall_mse=overall_mse,
        overall_r2=overall_r2,
        worst_mse=qualifying[worst_id].mse if worst_id is not None else math.nan,
        worst_r2=with_r2[worst_r2_id].r2 if worst_r2_id is not None else math.nan,
        per_subgroup=per,
        worst_subgroup_id=worst_id,
        worst_r2_subgroup_id=worst_r2_id,
    )


def aggregate_seeds(reports: Sequence[MetricReport]) -> dict[str, tuple[float, float]]:
    """(mean, standard error) per headline metric across seeds."""
    if not reports:
        raise ContractViolation("no reports to aggregate")
    return {name: mean_se([getattr(r, name) for r in reports]) for name in METRIC_NAMES}
