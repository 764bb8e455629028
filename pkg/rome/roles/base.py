"""Model-role base class + simple registry."""
from __future__ import annotations

import abc
import importlib
import pkgutil
from dataclasses import replace
from typing import Dict, Type

from ..errors import ConfigError
from ..models import moe
from ..models.core import Dataset

_ROLES: Dict[str, Type["BaseRole"]] = {}


def register(cls: Type["BaseRole"]) -> Type["BaseRole"]:
    """Class decorator to auto-register role subclasses."""
    _ROLES[cls.name] = cls
    return cls


def _autoload_roles() -> None:
    from rome import roles as _pkg  # local import to avoid circulars

    for mod in pkgutil.walk_packages(_pkg.__path__, _pkg.__name__ + "."):
        importlib.import_module(mod.name)


def get_roles() -> Dict[str, Type["BaseRole"]]:
    """Return all registered role classes by display name."""
    if not _ROLES:
        _autoload_roles()
    return _ROLES


def resolve(names: list[str]) -> list["BaseRole"]:
    roles = get_roles()
    unknown = [n for n in names if n not in roles]
    if unknown:
        raise ConfigError(f"unknown model roles {unknown}; known: {sorted(roles)}")
    return [roles[n]() for n in names]


class BaseRole(abc.ABC):
    """One trainable model configuration of the comparison."""

    name: str = ""
    slug: str = ""
    fair: bool = True

    @abc.abstractmethod
    def configure(self, base: moe.MoeConfig) -> moe.MoeConfig:
        """Specialize the shared MoE settings to this role."""

    def train(self, data: Dataset, base: moe.MoeConfig) -> moe.TrainResult:
        return moe.train(data, self.configure(base))


class SingleNetworkRole(BaseRole):
    """One expert, no robust term: a plain MLP regression."""

    expert_uses_s = False

    def configure(self, base: moe.MoeConfig) -> moe.MoeConfig:
        return replace(base, g=1, alpha=0.0, expert_uses_s=self.expert_uses_s)
