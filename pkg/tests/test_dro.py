import itertools

import numpy as np
import pytest

from rome.errors import ConfigError, ContractViolation
from rome.models import dro
from rome.models.core import Dataset, FeatureSpec, MixtureParams


def _objective(v, gram):
    return float(v @ gram @ v)


def test_constraint_grid_values():
    grid = dro.constraint_grid()
    assert len(grid) == 27
    assert grid[:4] == [1.0, 0.6, 0.5, 0.48]
    assert grid[-1] == pytest.approx(0.02)
    assert 0.49 not in grid and 0.03 not in grid


def test_estimate_gram_two_rows():
    spec = FeatureSpec(["a1"], ["s1"], "y", [0], [0])
    data = Dataset(np.array([[1.0], [2.0]]), np.zeros((2, 1)), np.zeros(2), spec)
    params = MixtureParams(np.zeros((2, 1)), np.array([[1.0, 1.0, 0.0], [0.0, 3.0, 0.0]]))
    gram = dro.estimate_gram(params, data).gamma_hat
    # rows f = (2, 3) and (3, 6): F'F / 2
    assert gram == pytest.approx(np.array([[6.5, 12.0], [12.0, 22.5]]))


def test_gram_matrix_rejects_asymmetric():
    with pytest.raises(ContractViolation):
        dro.GramMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ContractViolation):
        dro.GramMatrix(np.array([[1.0, 0.0], [0.0, -1.0]]))


@pytest.mark.parametrize(
    "u, expected",
    [
        ([0.5, 0.5], [0.5, 0.5]),
        ([2.0, 0.0], [1.0, 0.0]),
        ([1.0, 1.0, 1.0], [1 / 3, 1 / 3, 1 / 3]),
        ([0.4, 0.2, -1.0], [0.6, 0.4, 0.0]),
    ],
)
def test_project_simplex_examples(u, expected):
    assert dro.project_simplex(np.array(u)) == pytest.approx(expected, abs=1e-12)


def test_project_ball_scales_onto_sphere():
    v = dro.project_ball(np.array([3.0, 4.0]), np.zeros(2), 1.0)
    assert v == pytest.approx([0.6, 0.8])
    inside = np.array([0.1, 0.1])
    assert np.array_equal(dro.project_ball(inside, np.zeros(2), 1.0), inside)


def test_project_feasible_lands_in_intersection():
    rng = np.random.default_rng(0)
    v0 = np.full(4, 0.25)
    for _ in range(20):
        x = dro.project_feasible(rng.normal(size=4) * 3, v0, 0.3)
        assert x.min() >= -1e-8
        assert abs(x.sum() - 1.0) <= 1e-8
        assert np.linalg.norm(x - v0) <= 0.3 + 1e-8


def test_zero_radius_returns_baseline():
    gram = dro.GramMatrix(np.array([[2.0, 0.0], [0.0, 1.0]]))
    weights = dro.solve_v(gram, dro.DroConfig(c=0.0))
    assert np.array_equal(weights.v, [0.5, 0.5])


def test_identity_gram_keeps_uniform():
    weights = dro.solve_v(dro.GramMatrix(np.eye(3)), dro.DroConfig(c=1.0))
    assert weights.v == pytest.approx(np.full(3, 1 / 3), abs=1e-8)


def test_diagonal_gram_prefers_small_variance_group():
    weights = dro.solve_v(dro.GramMatrix(np.diag([4.0, 1.0])), dro.DroConfig(c=1.0))
    # min 4 v1^2 + v2^2 on the simplex: v = (0.2, 0.8)
    assert weights.v == pytest.approx([0.2, 0.8], abs=1e-4)
    assert weights.objective == pytest.approx(0.8, abs=1e-8)


def _grid_minimum(gram, v0, radius, step=1e-3):
    best = np.inf
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    for v1, v2 in itertools.product(ticks, ticks):
        if v1 + v2 > 1.0 + 1e-12:
            continue
        v = np.array([v1, v2, max(0.0, 1.0 - v1 - v2)])
        if np.linalg.norm(v - v0) <= radius:
            best = min(best, _objective(v, gram))
    return best


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("c", [0.1, 0.3, 0.6])
def test_solution_matches_grid_search(seed, c):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3))
    gram = a.T @ a + 0.1 * np.eye(3)
    v0 = np.full(3, 1 / 3)
    weights = dro.solve_v(dro.GramMatrix(gram), dro.DroConfig(c=c))
    radius = c * np.sqrt(3)
    assert weights.v.min() >= -1e-8
    assert abs(weights.v.sum() - 1.0) <= 1e-8
    assert np.linalg.norm(weights.v - v0) <= radius + 1e-8
    assert weights.objective <= _grid_minimum(gram, v0, radius, step=0.01) + 1e-5


def test_objective_scales_with_gram():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(4, 4))
    gram = a.T @ a
    base = dro.solve_v(dro.GramMatrix(gram), dro.DroConfig(c=0.4))
    scaled = dro.solve_v(dro.GramMatrix(25.0 * gram), dro.DroConfig(c=0.4))
    assert scaled.v == pytest.approx(base.v, abs=1e-4)
    assert scaled.objective == pytest.approx(25.0 * base.objective, rel=1e-6)


def test_sweep_objective_is_monotone_in_radius():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 4))
    gram = dro.GramMatrix(a.T @ a + 0.05 * np.eye(4))
    grid = [0.02, 0.1, 0.3, 0.6, 1.0]
    sweep = dro.constraint_sweep(gram, None, grid)
    objectives = [w.objective for w in sweep]
    assert all(later <= earlier + 1e-6 for earlier, later in zip(objectives, objectives[1:]))
    assert [w.c for w in sweep] == grid


def test_dro_config_validation():
    with pytest.raises(ConfigError):
        dro.DroConfig(c=1.5)
    with pytest.raises(ConfigError):
        dro.DroConfig(c=0.5, v0=(0.7, 0.7))
    with pytest.raises(ContractViolation):
        dro.DroConfig(c=0.5, v0=(0.5, 0.5)).baseline(3)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_solution_matches_fine_grid_search(seed):
    rng = np.random.default_rng(1000 + seed)
    a = rng.normal(size=(3, 3))
    gram = a.T @ a + 0.1 * np.eye(3)
    v0 = np.full(3, 1 / 3)
    for c in (0.1, 0.3, 0.6):
        weights = dro.solve_v(dro.GramMatrix(gram), dro.DroConfig(c=c))
        assert weights.objective <= _grid_minimum(gram, v0, c * np.sqrt(3)) + 1e-5
