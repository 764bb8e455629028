"""CSV ingestion, seeded train/validation/test splits and feature scaling."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, EmptyDatasetError, SchemaError
from .models.core import Dataset, FeatureSpec

log = logging.getLogger(__name__)


def ingest_csv(path: Path, spec: FeatureSpec, group_column: str | None = None) -> Dataset:
    """Read the columns named by ``spec`` (and optionally true group labels).

    Rows with a missing, non-numeric or non-finite entry in any selected column are dropped.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc

    wanted = [*spec.a_names, *spec.s_names, spec.y_name]
    if group_column:
        wanted.append(group_column)
    for name in wanted:
        if name not in frame.columns:
            raise SchemaError(f"{path} has no column {name!r}")

    numeric = frame[wanted].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    usable = numeric.where(np.isfinite(numeric)).dropna()
    dropped = len(numeric) - len(usable)
    if dropped:
        log.warning("dropped %d of %d rows of %s with missing, non-numeric or non-finite values", dropped, len(numeric), path.name)
    if usable.empty:
        raise EmptyDatasetError(f"{path} has no usable rows")

    labels = usable[group_column].to_numpy().astype(int) if group_column else None
    return Dataset(
        a=usable[list(spec.a_names)].to_numpy(dtype=float),
        s=usable[list(spec.s_names)].to_numpy(dtype=float),
        y=usable[spec.y_name].to_numpy(dtype=float),
        spec=spec,
        labels=labels,
    )


def split_indices(n: int, fractions: Sequence[float], seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded (train, validation, test) row indices; test takes the rounding remainder."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three positive numbers summing to 1, got {list(fractions)}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    if min(n_train, n_val, n - n_train - n_val) < 1:
        raise EmptyDatasetError(f"{n} rows cannot fill a {list(fractions)} split")
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


@dataclass(frozen=True, slots=True)
class Standardizer:
    """Column z-scores for A, S and Y, learned on the training split.

    Metrics computed downstream are therefore on the standardized outcome scale.
    """

    a_mean: np.ndarray
    a_sd: np.ndarray
    s_mean: np.ndarray
    s_sd: np.ndarray
    y_mean: float = 0.0
    y_sd: float = 1.0

    @classmethod
    def fit(cls, train: Dataset) -> "Standardizer":
        def sd(x: np.ndarray) -> np.ndarray:
            out = x.std(axis=0)
            return np.where(out > 0, out, 1.0)  # constant columns are only centred

        return cls(
            train.a.mean(axis=0),
            sd(train.a),
            train.s.mean(axis=0),
            sd(train.s),
            float(train.y.mean()),
            float(sd(train.y[:, None])[0]),
        )

    def apply(self, data: Dataset) -> Dataset:
        return Dataset(
            (data.a - self.a_mean) / self.a_sd,
            (data.s - self.s_mean) / self.s_sd,
            (data.y - self.y_mean) / self.y_sd,
            data.spec,
            data.labels,
        )


@dataclass(frozen=True, slots=True)
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    scaler: Standardizer


def make_splits(data: Dataset, fractions: Sequence[float], seed: int, standardize: bool = True) -> Splits:
    train_rows, val_rows, test_rows = split_indices(data.n, fractions, seed)
    train, val, test = data.subset(train_rows), data.subset(val_rows), data.subset(test_rows)
    scaler = Standardizer.fit(train)
    if standardize:
        train, val, test = scaler.apply(train), scaler.apply(val), scaler.apply(test)
    return Splits(train, val, test, scaler)
