import numpy as np
import pytest

from rome import orchestrator
from rome.config import Settings
from rome.errors import NumericalFailure


@pytest.fixture
def settings(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("HOME", str(tmp_path))
    return Settings.load({"run.workers": "4", "run.out": str(tmp_path)})


def test_fan_out_returns_results_in_cell_order(settings):
    cells = [(f"cell {k}", lambda k=k: k * k) for k in range(20)]
    assert orchestrator._fan_out(settings, cells) == [k * k for k in range(20)]


def test_fan_out_names_the_failing_cell(settings):
    def boom():
        raise NumericalFailure("loss exploded")

    with pytest.raises(NumericalFailure, match="replication 3: loss exploded"):
        orchestrator._fan_out(settings, [("replication 3", boom)])


def test_model_against_itself_is_identical():
    values = np.array([0.5, 0.7, 0.6])
    assert orchestrator._significance(values, values.copy()) == "identical"


def test_significance_codes_and_missing_values():
    rng = np.random.default_rng(0)
    base = rng.normal(size=10)
    assert orchestrator._significance(base + 5.0 + 0.01 * rng.normal(size=10), base) == "***"
    assert orchestrator._significance(base, None) == ""
    assert orchestrator._significance(np.array([np.nan, 1.0]), np.array([1.0, 2.0])) == ""


def test_dedupe_warns_and_keeps_order(caplog):
    assert orchestrator._dedupe([0.1, 0.0, 0.1], "ablation.alphas") == [0.1, 0.0]
    assert "duplicates" in caplog.text
