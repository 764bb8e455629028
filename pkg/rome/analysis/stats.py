"""Across-seed aggregation and paired significance tests."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc

from ..errors import ContractViolation, DegenerateTestError

ALTERNATIVES = ("two-sided", "less", "greater")
SIGNIFICANCE_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


@dataclass(frozen=True, slots=True)
class TTestResult:
    t: float
    p: float
    mean_diff: float
    df: int


def t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_ttest(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided") -> TTestResult:
    """Paired t-test of mean(a - b) = 0.

    ``alternative="greater"`` tests mean(a - b) > 0, ``"less"`` the reverse.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if diff.ndim != 1 or len(a) != len(b) or diff.size < 2:
        raise ContractViolation("paired t-test needs two equal-length samples of size >= 2")
    sd = float(np.std(diff, ddof=1))
    mean = float(diff.mean())
    if sd == 0.0:
        raise DegenerateTestError("paired differences have zero variance")
    df = diff.size - 1
    t = mean / (sd / math.sqrt(diff.size))
    two_sided = t_two_sided_p(t, df)
    if alternative == "two-sided":
        p = two_sided
    elif (alternative == "greater") == (t > 0):
        p = two_sided / 2.0
    else:
        p = 1.0 - two_sided / 2.0
    return TTestResult(t=t, p=p, mean_diff=mean, df=df)


def significance_code(p: float) -> str:
    for level, code in SIGNIFICANCE_LEVELS:
        if p < level:
            return code
    return "ns"


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and standard error s / sqrt(k); a single value has se 0."""
    values = [float(v) for v in values if not math.isnan(v)]
    if not values:
        return math.nan, math.nan
    mean = statistics.fmean(values)
    if len(values) < 2:
        return mean, 0.0
    return mean, statistics.stdev(values) / math.sqrt(len(values))
