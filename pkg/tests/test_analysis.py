import math

import numpy as np
import pytest

from rome.analysis import metrics as m
from rome.analysis import stats
from rome.analysis.subgroups import SubgroupScheme, partition
from rome.errors import ConfigError, ContractViolation, DegenerateTestError
from rome.models.core import Dataset, FeatureSpec

SPEC = FeatureSpec(["a1"], ["s1", "s2"], "y", [0, 1], [0, 1])


def _data(s, labels=None):
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    return Dataset(np.zeros((n, 1)), s, np.zeros(n), SPEC, labels)


# --------------------------------------------------------------------------- #
# subgroups
# --------------------------------------------------------------------------- #
def test_parse_scheme_defaults_to_categorical():
    scheme = SubgroupScheme.parse("s1, s2:median")
    assert scheme.rules == (("s1", "categorical"), ("s2", "median"))
    with pytest.raises(ConfigError):
        SubgroupScheme.parse("s1:decile")
    with pytest.raises(ConfigError):
        SubgroupScheme.parse(" , ")


def test_binary_attribute_gives_two_subgroups():
    rng = np.random.default_rng(0)
    data = _data(np.column_stack([rng.integers(0, 2, 50), rng.normal(size=50)]))
    ids = partition(data, SubgroupScheme.parse("s1:categorical"))
    assert set(ids) == {"s1=0", "s1=1"}


def test_binary_and_quartile_give_at_most_eight_subgroups():
    rng = np.random.default_rng(1)
    data = _data(np.column_stack([rng.integers(0, 2, 200), rng.normal(size=200)]))
    ids = partition(data, SubgroupScheme.parse("s1,s2:quartile"), reference=data)
    assert 1 <= len(set(ids)) <= 8
    assert all(sid.startswith("s1=") and "&s2=q" in sid for sid in ids)


@pytest.mark.parametrize("n", [10, 11])
def test_median_bins_are_balanced(n):
    data = _data(np.column_stack([np.zeros(n), np.random.default_rng(n).normal(size=n)]))
    ids = partition(data, SubgroupScheme.parse("s2:median"), reference=data)
    counts = [int(np.sum(ids == f"s2=q{b}")) for b in (1, 2)]
    assert sum(counts) == n
    assert abs(counts[0] - counts[1]) <= 1


def test_degenerate_attribute_is_a_config_error():
    data = _data(np.column_stack([np.ones(20), np.arange(20.0)]))
    with pytest.raises(ConfigError):
        partition(data, SubgroupScheme.parse("s1:quartile"), reference=data)


def test_cut_points_come_from_the_reference_split():
    train = _data(np.column_stack([np.zeros(8), np.arange(8.0)]))
    test = _data(np.array([[0.0, -100.0], [0.0, 100.0], [0.0, 3.6]]))
    scheme = SubgroupScheme.parse("s2:quartile").fit(train)
    assert scheme.fitted
    ids = partition(test, scheme)
    assert list(ids) == ["s2=q1", "s2=q4", "s2=q3"]
    assert list(partition(test, SubgroupScheme.parse("s2:quartile"), reference=train)) == list(ids)


def test_unfitted_scheme_without_reference_is_rejected():
    with pytest.raises(ConfigError):
        partition(_data(np.zeros((3, 2))), SubgroupScheme.parse("s1:median"))


def test_latent_rule_uses_labels():
    data = _data(np.zeros((3, 2)), labels=np.array([0, 2, 0]))
    assert list(partition(data, SubgroupScheme.parse("group:latent"))) == ["group=0", "group=2", "group=0"]
    with pytest.raises(ConfigError):
        partition(_data(np.zeros((3, 2))), SubgroupScheme.parse("group:latent"))


def test_unknown_attribute_is_rejected():
    with pytest.raises(ConfigError):
        partition(_data(np.zeros((3, 2))), SubgroupScheme.parse("s9"))


# --------------------------------------------------------------------------- #
# metrics
# --------------------------------------------------------------------------- #
def test_perfect_predictions():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    report = m.metrics(y, y, ["a", "a", "b", "b"], min_n=1)
    assert report.overall_mse == 0.0
    assert report.overall_r2 == 1.0
    assert report.worst_mse == 0.0
    assert report.worst_r2 == 1.0


def test_constant_mean_prediction_has_zero_r2():
    y = np.array([1.0, 2.0, 3.0, 6.0])
    report = m.metrics(y, np.full(4, y.mean()), ["a"] * 4, min_n=1)
    assert report.overall_r2 == pytest.approx(0.0, abs=1e-12)


def test_two_row_hand_example():
    report = m.metrics([0.0, 2.0], [1.0, 1.0], ["x", "x"], min_n=1)
    assert report.overall_mse == 1.0
    assert report.overall_r2 == 0.0
    assert report.per_subgroup["x"].n == 2


def test_zero_variance_subgroup_has_undefined_r2():
    report = m.metrics([1.0, 1.0, 0.0, 2.0], [1.0, 1.5, 0.0, 2.0], ["c", "c", "v", "v"], min_n=1)
    assert math.isnan(report.per_subgroup["c"].r2)
    assert report.worst_r2_subgroup_id == "v"
    assert report.worst_subgroup_id == "c"
    assert report.to_dict()["per_subgroup"]["c"]["r2"] is None


def test_small_subgroups_are_excluded_from_extrema():
    y = np.zeros(40)
    yhat = np.zeros(40)
    yhat[0] = 10.0
    groups = ["tiny"] + ["big"] * 39
    report = m.metrics(y, yhat, groups, min_n=30)
    assert report.worst_subgroup_id == "big"
    assert report.worst_mse == 0.0
    assert report.per_subgroup["tiny"].mse == 100.0
    empty = m.metrics(y, yhat, groups, min_n=50)
    assert math.isnan(empty.worst_mse) and empty.worst_subgroup_id is None


@pytest.mark.parametrize("seed", range(5))
def test_worst_mse_bounds_overall(seed):
    rng = np.random.default_rng(seed)
    y, yhat = rng.normal(size=60), rng.normal(size=60)
    groups = rng.choice(["a", "b", "c"], size=60)
    report = m.metrics(y, yhat, groups, min_n=1)
    assert report.worst_mse >= report.overall_mse - 1e-12


def test_row_order_does_not_matter():
    rng = np.random.default_rng(3)
    y, yhat = rng.normal(size=50), rng.normal(size=50)
    groups = rng.choice(["a", "b"], size=50)
    order = rng.permutation(50)
    first = m.metrics(y, yhat, groups, min_n=1)
    second = m.metrics(y[order], yhat[order], groups[order], min_n=1)
    assert second.worst_mse == pytest.approx(first.worst_mse, rel=1e-12)
    assert second.overall_r2 == pytest.approx(first.overall_r2, rel=1e-12)
    assert second.worst_subgroup_id == first.worst_subgroup_id


def test_global_centring_changes_subgroup_r2():
    y = np.array([0.0, 1.0, 10.0, 11.0])
    yhat = np.array([0.5, 0.5, 10.5, 10.5])
    groups = ["lo", "lo", "hi", "hi"]
    local = m.metrics(y, yhat, groups, min_n=1)
    pooled = m.metrics(y, yhat, groups, min_n=1, r2_center="global")
    assert local.per_subgroup["lo"].r2 == pytest.approx(0.0)
    assert pooled.per_subgroup["lo"].r2 > 0.9


def test_metrics_rejects_mismatched_lengths():
    with pytest.raises(ContractViolation):
        m.metrics([1.0, 2.0], [1.0], ["a", "a"])


def test_aggregate_two_seeds():
    reports = [m.metrics([0.0, 2.0], [1.0, 1.0], ["x", "x"], min_n=1), m.metrics([0.0, 6.0], [3.0, 3.0], ["x", "x"], min_n=1)]
    summary = m.aggregate_seeds(reports)
    # overall_mse per seed: 1 and 9
    assert summary["overall_mse"] == pytest.approx((5.0, 4.0))
    single = m.aggregate_seeds(reports[:1])
    assert single["overall_mse"] == (1.0, 0.0)
    with pytest.raises(ContractViolation):
        m.aggregate_seeds([])


def test_mean_se_hand_example():
    assert stats.mean_se([1.0, 3.0]) == pytest.approx((2.0, 1.0))


# --------------------------------------------------------------------------- #
# paired t-test
# --------------------------------------------------------------------------- #
def test_paired_ttest_hand_example():
    result = stats.paired_ttest([1.0, 1.0, 1.0, 2.0], [0.0, 0.0, 0.0, 0.0])
    assert result.t == pytest.approx(5.0, abs=1e-10)
    assert result.df == 3
    assert result.mean_diff == 1.25


def test_paired_ttest_zero_variance_is_degenerate():
    with pytest.raises(DegenerateTestError):
        stats.paired_ttest([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])


def test_paired_ttest_rejects_unequal_lengths():
    with pytest.raises(ContractViolation):
        stats.paired_ttest([1.0, 2.0], [1.0])


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 2.5, 12.0])
def test_two_sided_p_closed_forms(t):
    assert stats.t_two_sided_p(t, 1) == pytest.approx(1.0 - 2.0 / math.pi * math.atan(abs(t)), abs=1e-12)
    assert stats.t_two_sided_p(t, 2) == pytest.approx(1.0 - abs(t) / math.sqrt(2.0 + t * t), abs=1e-12)
    x = abs(t) / math.sqrt(4.0 + t * t)
    assert stats.t_two_sided_p(t, 4) == pytest.approx(1.0 - x * (1.5 - 0.5 * x * x), abs=1e-12)


def test_one_sided_p_follows_direction():
    a, b = [3.0, 4.0, 5.0, 7.0], [1.0, 1.5, 2.0, 2.0]
    two = stats.paired_ttest(a, b).p
    assert stats.paired_ttest(a, b, "greater").p == pytest.approx(two / 2)
    assert stats.paired_ttest(a, b, "less").p == pytest.approx(1 - two / 2)


@pytest.mark.parametrize("p, code", [(0.0005, "***"), (0.005, "**"), (0.02, "*"), (0.05, "ns"), (0.4, "ns")])
def test_significance_codes(p, code):
    assert stats.significance_code(p) == code
