from __future__ import annotations

from pathlib import Path
from typing import Sequence

import pandas as pd

FLOAT_FORMAT = "%.10g"


def write_csv(rows: pd.DataFrame | Sequence[dict], path: Path, columns: Sequence[str] | None = None) -> Path:
    """Write rows with a fixed column order and float format."""
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path
