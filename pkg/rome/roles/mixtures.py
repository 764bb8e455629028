"""Mixture-of-experts roles."""
from __future__ import annotations

from dataclasses import replace

from ..models import moe
from .base import BaseRole, register


@register
class VanillaMoe(BaseRole):
    """Gate on [A; S], experts on [A; S], no robust term."""

    name = "Vanilla MoE"
    slug = "vanilla_moe"
    fair = False

    def configure(self, base: moe.MoeConfig) -> moe.MoeConfig:
        return replace(base, variant="as", alpha=0.0, expert_uses_s=True)


@register
class RomeMoeS(BaseRole):
    name = "ROME-MoE-S"
    slug = "rome_moe_s"
    variant = "s"

    def configure(self, base: moe.MoeConfig) -> moe.MoeConfig:
        return replace(base, variant=self.variant, expert_uses_s=False)


@register
class RomeMoeAs(RomeMoeS):
    name = "ROME-MoE-AS"
    slug = "rome_moe_as"
    variant = "as"
