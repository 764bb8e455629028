import pytest

from rome.config import ALL_ROLES
from rome.errors import ConfigError
from rome.models.moe import MoeConfig
from rome.roles.base import get_roles, resolve


def test_every_role_is_registered():
    assert set(get_roles()) == set(ALL_ROLES.split(","))


def test_resolve_keeps_order_and_rejects_unknown():
    roles = resolve(["ROME-MoE-AS", "Baseline MLP"])
    assert [r.slug for r in roles] == ["rome_moe_as", "baseline_mlp"]
    with pytest.raises(ConfigError):
        resolve(["Random Forest"])


@pytest.mark.parametrize(
    "name, g, alpha, variant, uses_s, fair",
    [
        ("Baseline MLP", 1, 0.0, "s", True, False),
        ("Baseline MLP - Fair", 1, 0.0, "s", False, True),
        ("Vanilla MoE", 3, 0.0, "as", True, False),
        ("ROME-MoE-S", 3, 0.2, "s", False, True),
        ("ROME-MoE-AS", 3, 0.2, "as", False, True),
    ],
)
def test_role_configurations(name, g, alpha, variant, uses_s, fair):
    role = resolve([name])[0]
    cfg = role.configure(MoeConfig(g=3, alpha=0.2, variant="s"))
    assert (cfg.g, cfg.alpha, cfg.variant, cfg.expert_uses_s) == (g, alpha, variant, uses_s)
    assert role.fair is fair


def test_train_passes_the_role_configuration(mocker):
    train = mocker.patch("rome.roles.base.moe.train", return_value="result")
    role = resolve(["Baseline MLP - Fair"])[0]
    assert role.train("data", MoeConfig(g=4, alpha=0.3)) == "result"
    (data, cfg), _ = train.call_args
    assert data == "data"
    assert (cfg.g, cfg.alpha, cfg.expert_uses_s) == (1, 0.0, False)
