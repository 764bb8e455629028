"""
Model checkpoints as JSON text.

Floats are written with Python's shortest round-trip repr, so a reloaded model
predicts bit-for-bit what the saved one did. Each file records the feature
roles and split protocol it was trained under; ``check_compatible`` refuses to
evaluate it under a different one.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .. import __version__
from ..errors import CompatibilityError, DataError
from ..models.core import FeatureSpec
from .json_writer import read_json

KINDS = ("rome_em", "moe")


def save_checkpoint(path: Path, kind: str, model: dict, *, spec: FeatureSpec, seed: int, protocol: dict) -> Path:
    if kind not in KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    payload = {
        "format": 1,
        "version": __version__,
        "kind": kind,
        "seed": seed,
        "feature_spec": spec.to_dict(),
        "protocol": protocol,
        "model": model,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: Path, kind: str | None = None) -> dict[str, Any]:
    try:
        payload = read_json(Path(path))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if kind is not None and payload.get("kind") != kind:
        raise CompatibilityError(f"{path} holds a {payload.get('kind')!r} model, expected {kind!r}")
    return payload


def check_compatible(payload: dict, *, spec: FeatureSpec, seed: int, protocol: dict, path: Path | str = "checkpoint") -> None:
    if FeatureSpec.from_dict(payload["feature_spec"]) != spec:
        raise CompatibilityError(f"{path} was trained with different feature roles")
    if payload["seed"] != seed:
        raise CompatibilityError(f"{path} was trained with seed {payload['seed']}, evaluating seed {seed}")
    if payload["protocol"] != protocol:
        raise CompatibilityError(f"{path} was trained under split protocol {payload['protocol']}, now {protocol}")
