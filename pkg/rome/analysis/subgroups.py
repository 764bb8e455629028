"""
Intersectional evaluation subgroups.

Each selected sensitive attribute is binned by one rule: ``categorical``
(its distinct values), ``median`` or ``quartile`` (cut points learned once on a
reference split), or ``latent`` (the dataset's true group labels, when known).
A row's subgroup id joins its per-attribute bins, e.g. ``S2=q3&S3=q1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..models.core import Dataset

RULES = ("categorical", "median", "quartile", "latent")
_QUANTILES = {"median": (0.5,), "quartile": (0.25, 0.5, 0.75)}


@dataclass(frozen=True, slots=True)
class SubgroupScheme:
    name: str
    rules: tuple[tuple[str, str], ...]  # (attribute, rule)
    cuts: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "SubgroupScheme":
        """``"S2:quartile,S3:quartile"`` -> scheme named after the text."""
        rules = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            attr, _, rule = part.partition(":")
            rule = (rule or "categorical").strip()
            if rule not in RULES:
                raise ConfigError(f"unknown subgroup rule {rule!r} for {attr!r}; expected one of {RULES}")
            rules.append((attr.strip(), rule))
        if not rules:
            raise ConfigError(f"empty subgroup scheme {text!r}")
        return cls(text.strip(), tuple(rules))

    @property
    def fitted(self) -> bool:
        return all(rule not in _QUANTILES or attr in self.cuts for attr, rule in self.rules)

    def fit(self, reference: Dataset) -> "SubgroupScheme":
        """Learn cut points on the reference split; they are reused unchanged afterwards."""
        cuts = {}
        for attr, rule in self.rules:
            if rule not in _QUANTILES:
                continue
            column = _column(reference, attr)
            points = np.quantile(column, _QUANTILES[rule])
            if np.any(np.diff(points) <= 0) or column.min() == column.max():
                raise ConfigError(f"attribute {attr!r} has degenerate {rule} cut points {points.tolist()}")
            cuts[attr] = tuple(float(p) for p in points)
        return SubgroupScheme(self.name, self.rules, cuts)

    def to_dict(self) -> dict:
        return {"name": self.name, "rules": [list(r) for r in self.rules], "cuts": {k: list(v) for k, v in self.cuts.items()}}


def _column(data: Dataset, attr: str) -> np.ndarray:
    if attr in data.spec.s_names:
        return data.s[:, data.spec.s_names.index(attr)]
    if attr in data.spec.a_names:
        return data.a[:, data.spec.a_names.index(attr)]
    raise ConfigError(f"subgroup attribute {attr!r} is not a feature column")


def _format_value(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def partition(data: Dataset, scheme: SubgroupScheme, reference: Dataset | None = None) -> np.ndarray:
    """Subgroup id per row. Cut points come from ``scheme.cuts`` or are learned on ``reference``."""
    if not scheme.fitted:
        if reference is None:
            raise ConfigError(f"scheme {scheme.name!r} needs a reference split to learn cut points")
        scheme = scheme.fit(reference)
    parts = []
    for attr, rule in scheme.rules:
        if rule == "latent":
            if data.labels is None:
                raise ConfigError("latent subgroups need a dataset with true group labels")
            parts.append(np.array([f"group={g}" for g in data.labels], dtype=object))
        elif rule == "categorical":
            parts.append(np.array([f"{attr}={_format_value(v)}" for v in _column(data, attr)], dtype=object))
        else:
            bins = np.searchsorted(np.asarray(scheme.cuts[attr]), _column(data, attr), side="right")
            parts.append(np.array([f"{attr}=q{b + 1}" for b in bins], dtype=object))
    ids = parts[0]
    for extra in parts[1:]:
        ids = ids + "&" + extra
    return ids
