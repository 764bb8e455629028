"""Single-network baselines, with and without the sensitive columns as inputs."""
from __future__ import annotations

from .base import SingleNetworkRole, register


@register
class BaselineMlp(SingleNetworkRole):
    name = "Baseline MLP"
    slug = "baseline_mlp"
    fair = False
    expert_uses_s = True


@register
class BaselineMlpFair(SingleNetworkRole):
    name = "Baseline MLP - Fair"
    slug = "baseline_mlp_fair"
    fair = True
