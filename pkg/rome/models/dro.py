"""
Distributionally robust aggregation of the fitted group predictors.

The robust weights minimize v' G v over the simplex intersected with the
L2 ball ||v - v0|| <= c * sqrt(G), where G is the empirical second-moment
matrix of the group predictions. Solved by projected gradient descent; the
projection onto the intersection uses Dykstra's alternating projections.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractViolation, InfeasibleConstraintError
from .core import Dataset, MixtureParams, RobustWeights, group_predictions

log = logging.getLogger(__name__)

DYKSTRA_MAX_ITER = 200
DYKSTRA_TOL = 1e-10


@dataclass(frozen=True, slots=True)
class GramMatrix:
    gamma_hat: np.ndarray

    def __post_init__(self):
        gram = np.atleast_2d(np.asarray(self.gamma_hat, dtype=float))
        if gram.shape[0] != gram.shape[1]:
            raise ContractViolation(f"Gram matrix must be square, got {gram.shape}")
        if not np.allclose(gram, gram.T, rtol=0, atol=1e-10):
            raise ContractViolation("Gram matrix is not symmetric")
        scale = max(1.0, float(np.abs(gram).max()))
        if np.linalg.eigvalsh(gram)[0] < -1e-8 * scale:
            raise ContractViolation("Gram matrix is not positive semidefinite")
        object.__setattr__(self, "gamma_hat", gram)

    @property
    def g(self) -> int:
        return self.gamma_hat.shape[0]


@dataclass(frozen=True, slots=True)
class DroConfig:
    c: float
    v0: tuple[float, ...] | None = None  # None -> uniform
    max_iter: int = 5000
    step: float | None = None  # None -> 1 / lambda_max
    tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ConfigError(f"dro.c must lie in [0, 1], got {self.c}")
        if self.v0 is not None:
            v0 = np.asarray(self.v0, dtype=float)
            if (v0 < 0).any() or abs(v0.sum() - 1.0) > 1e-10:
                raise ConfigError("dro.v0 must lie on the simplex")
            object.__setattr__(self, "v0", tuple(float(x) for x in v0))

    def baseline(self, g: int) -> np.ndarray:
        if self.v0 is None:
            return np.full(g, 1.0 / g)
        if len(self.v0) != g:
            raise ContractViolation(f"dro.v0 has {len(self.v0)} entries, model has {g} groups")
        return np.array(self.v0)


def constraint_grid() -> list[float]:
    """Default 27-value sweep: 1.0, 0.6, then 0.50 down to 0.02 in steps of 0.02.

    Odd hundredths such as 0.49 or 0.03 are not on the grid; pass them through
    ``dro.c_grid`` when a finer sweep is wanted.
    """
    return [1.0, 0.6] + [round(0.5 - 0.02 * k, 2) for k in range(25)]


def estimate_gram(params: MixtureParams, data: Dataset) -> GramMatrix:
    preds = group_predictions(params.omega, data.design())
    gram = preds.T @ preds / data.n
    return GramMatrix(0.5 * (gram + gram.T))


def project_simplex(u: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {v >= 0, sum(v) = 1} by sort and threshold."""
    u = np.asarray(u, dtype=float).ravel()
    desc = np.sort(u)[::-1]
    cumulative = np.cumsum(desc) - 1.0
    ranks = np.arange(1, u.size + 1)
    k = ranks[desc - cumulative / ranks > 0][-1]
    v = np.maximum(u - cumulative[k - 1] / k, 0.0)
    return v / v.sum()


def project_ball(u: np.ndarray, v0: np.ndarray, r: float) -> np.ndarray:
    if r < 0:
        raise ContractViolation("ball radius must be non-negative")
    diff = np.asarray(u, dtype=float) - v0
    dist = np.linalg.norm(diff)
    if dist <= r:
        return np.asarray(u, dtype=float).copy()
    return v0 + r * diff / dist


def _feasible(v: np.ndarray, v0: np.ndarray, r: float, tol: float) -> bool:
    return v.min() >= -tol and abs(v.sum() - 1.0) <= tol and np.linalg.norm(v - v0) <= r + tol


def project_feasible(u: np.ndarray, v0: np.ndarray, r: float) -> np.ndarray:
    """Projection onto the simplex-ball intersection via Dykstra's alternating projections."""
    x = np.asarray(u, dtype=float).copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(DYKSTRA_MAX_ITER):
        y = project_simplex(x + p)
        p = x + p - y
        x_new = project_ball(y + q, v0, r)
        q = y + q - x_new
        done = np.abs(x_new - x).max() < DYKSTRA_TOL and _feasible(x_new, v0, r, DYKSTRA_TOL)
        x = x_new
        if done:
            return x
    # Ball step of a simplex point toward a simplex centre stays on the simplex.
    repaired = project_ball(project_simplex(x), v0, r)
    if not _feasible(repaired, v0, r, 1e-8):
        raise InfeasibleConstraintError("could not reach the simplex-ball intersection")
    log.debug("Dykstra stopped after %d sweeps; using repaired point", DYKSTRA_MAX_ITER)
    return repaired


def _finish(v: np.ndarray, v0: np.ndarray, c: float, gram: np.ndarray) -> RobustWeights:
    v = np.maximum(v, 0.0)
    v = v / v.sum()
    return RobustWeights(v, v0, c, float(v @ gram @ v))


def solve_v(gram: GramMatrix, cfg: DroConfig) -> RobustWeights:
    mat = gram.gamma_hat
    v0 = cfg.baseline(gram.g)
    if abs(v0.sum() - 1.0) > 1e-10 or (v0 < 0).any():
        raise InfeasibleConstraintError("baseline weights are not on the simplex")
    radius = cfg.c * np.sqrt(gram.g)
    lam_max = float(np.linalg.eigvalsh(mat)[-1])
    if radius == 0.0 or lam_max <= 0.0:
        return RobustWeights(v0.copy(), v0, cfg.c, float(v0 @ mat @ v0))

    step = cfg.step if cfg.step is not None else 1.0 / lam_max
    v = v0.copy()
    objective = float(v @ mat @ v)
    for _ in range(cfg.max_iter):
        candidate = project_feasible(v - step * (mat @ v), v0, radius)
        value = float(candidate @ mat @ candidate)
        if value >= objective:
            break
        decrease = objective - value
        v, objective = candidate, value
        if decrease < cfg.tol * lam_max:
            break
    return _finish(v, v0, cfg.c, mat)


def constraint_sweep(gram: GramMatrix, v0: np.ndarray | None, c_grid: list[float], **solver) -> list[RobustWeights]:
    baseline = None if v0 is None else tuple(np.asarray(v0, dtype=float))
    return [solve_v(gram, DroConfig(c=float(c), v0=baseline, **solver)) for c in c_grid]
