"""
EM estimation of the covariate-dependent mixture of linear regressions.

Membership:  p_ij = softmax_j(gamma_j . S_i,mem)
Outcome:     Y_i | z_i = j  ~  N(omega_j . X_i, sigma2)

Each iteration runs the E-step, a per-group quasi-binomial IRLS update for
gamma, a weighted least-squares update for omega, and a backtracking line
search on the observed-data log-likelihood between the old parameters and
the candidate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit, log_softmax, logsumexp

from ..errors import ConfigError, NumericalFailure, check_shape
from .core import Dataset, MixtureParams, Responsibilities

log = logging.getLogger(__name__)

IRLS_MAX_ITER = 50
IRLS_TOL = 1e-8
EMPTY_GROUP_MASS = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, slots=True)
class EmConfig:
    g: int
    max_iter: int = 100
    tau1: float = 1e-3
    tau2: float = 5e-3
    ridge: float = 1e-8
    min_group_n: int | None = None  # None -> 5 * design width
    seed: int | None = None

    def __post_init__(self):
        if self.g < 1:
            raise ConfigError("em.g must be at least 1")
        if self.max_iter < 1:
            raise ConfigError("em.max_iter must be at least 1")
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise ConfigError("em.tau1 and em.tau2 must be positive")
        if self.ridge < 0:
            raise ConfigError("em.ridge must be non-negative")

    def group_threshold(self, design_dim: int) -> int:
        return self.min_group_n if self.min_group_n is not None else 5 * design_dim


@dataclass(frozen=True, slots=True)
class EmFit:
    params: MixtureParams
    resp: Responsibilities
    loglik: float
    iterations: int
    converged: bool
    trace: list[float]
    alphas: list[float] = field(default_factory=list)
    irls_flags: list[list[int]] = field(default_factory=list)


# --------------------------------------------------------------------------- #
# likelihood pieces
# --------------------------------------------------------------------------- #
def _log_joint(data: Dataset, params: MixtureParams) -> np.ndarray:
    """n x G matrix of log p_ij + log N(y_i; omega_j . x_i, sigma2)."""
    params.check_against(data.spec)
    log_p = log_softmax(data.s_mem() @ params.gamma.T, axis=1)
    resid = data.y[:, None] - data.design() @ params.omega.T
    log_norm = -0.5 * (_LOG_2PI + np.log(params.sigma2)) - 0.5 * resid**2 / params.sigma2
    return log_p + log_norm


def log_likelihood(data: Dataset, params: MixtureParams) -> float:
    value = float(logsumexp(_log_joint(data, params), axis=1).sum())
    if not np.isfinite(value):
        raise NumericalFailure("observed-data log-likelihood is not finite")
    return value


def e_step(data: Dataset, params: MixtureParams) -> Responsibilities:
    joint = _log_joint(data, params)
    norm = logsumexp(joint, axis=1)
    if not np.isfinite(norm).all():
        bad = int(np.flatnonzero(~np.isfinite(norm))[0])
        raise NumericalFailure("every group likelihood underflowed", row=bad)
    w = np.exp(joint - norm[:, None])
    w = np.clip(w, 0.0, 1.0)
    return Responsibilities(w / w.sum(axis=1, keepdims=True))


# --------------------------------------------------------------------------- #
# initialization
# --------------------------------------------------------------------------- #
def _wls(design: np.ndarray, y: np.ndarray, weights: np.ndarray, ridge: float) -> np.ndarray:
    xtw = design.T * weights
    normal = xtw @ design + ridge * np.eye(design.shape[1])
    try:
        factor = cho_factor(normal)
    except LinAlgError as exc:
        raise NumericalFailure("weighted normal matrix is not positive definite") from exc
    return cho_solve(factor, xtw @ y)


def _irls(features: np.ndarray, target: np.ndarray, start: np.ndarray, ridge: float) -> tuple[np.ndarray, bool]:
    """Binomial IRLS with a fractional response; returns (coef, hit_limit)."""
    coef = start.copy()
    jitter = max(ridge, 1e-10) * np.eye(features.shape[1])
    for _ in range(IRLS_MAX_ITER):
        mu = expit(features @ coef)
        weight = mu * (1.0 - mu)
        hessian = (features.T * weight) @ features + jitter
        step = np.linalg.solve(hessian, features.T @ (target - mu))
        coef = coef + step
        if not np.isfinite(coef).all():
            return coef, True
        if np.abs(step).max() < IRLS_TOL:
            return coef, False
    return coef, True


def initialize(data: Dataset, cfg: EmConfig, init_assign: np.ndarray | None = None) -> MixtureParams:
    """Starting parameters from hard group labels (drawn uniformly when absent)."""
    if cfg.g > data.n:
        raise ConfigError(f"G={cfg.g} exceeds the number of rows n={data.n}")
    if init_assign is None:
        labels = np.random.default_rng(cfg.seed).integers(0, cfg.g, size=data.n)
    else:
        labels = np.asarray(init_assign, dtype=int).ravel()
        check_shape(labels.size == data.n, "init_assign needs one label per row")
        if labels.min() < 0 or labels.max() >= cfg.g:
            raise ConfigError(f"init_assign labels must lie in 0..{cfg.g - 1}")

    design = data.design()
    s_mem = data.s_mem()
    pooled = _wls(design, data.y, np.ones(data.n), cfg.ridge)
    threshold = cfg.group_threshold(design.shape[1])

    gamma = np.zeros((cfg.g, s_mem.shape[1]))
    omega = np.empty((cfg.g, design.shape[1]))
    for j in range(cfg.g):
        member = labels == j
        if cfg.g > 1 and s_mem.shape[1] > 0:
            coef, capped = _irls(s_mem, member.astype(float), np.zeros(s_mem.shape[1]), cfg.ridge)
            if capped and not np.isfinite(coef).all():
                coef = np.zeros(s_mem.shape[1])
            gamma[j] = coef
        if member.sum() >= threshold:
            omega[j] = _wls(design[member], data.y[member], np.ones(int(member.sum())), cfg.ridge)
        else:
            log.debug("group %d has %d rows (< %d), using pooled coefficients", j, member.sum(), threshold)
            omega[j] = pooled
    return MixtureParams(gamma, omega)


# --------------------------------------------------------------------------- #
# M-step
# --------------------------------------------------------------------------- #
def m_step_gamma(
    data: Dataset, resp: Responsibilities, gamma_old: np.ndarray, ridge: float = 1e-8
) -> tuple[np.ndarray, list[int]]:
    """Candidate gamma rows and the groups whose IRLS hit the iteration cap.

    A group whose IRLS produced non-finite coefficients keeps its old row.
    """
    gamma_old = np.atleast_2d(gamma_old)
    if gamma_old.shape[0] == 1 or gamma_old.shape[1] == 0:
        return gamma_old.copy(), []
    s_mem = data.s_mem()
    gamma = gamma_old.copy()
    flagged = []
    for j in range(gamma_old.shape[0]):
        coef, capped = _irls(s_mem, resp.w[:, j], gamma_old[j], ridge)
        if capped:
            flagged.append(j)
        if np.isfinite(coef).all():
            gamma[j] = coef
        else:
            log.warning("IRLS diverged for group %d; keeping previous membership row", j)
    if flagged:
        log.info("IRLS hit %d iterations for groups %s", IRLS_MAX_ITER, flagged)
    return gamma, flagged


def m_step_omega(data: Dataset, resp: Responsibilities, cfg: EmConfig, omega_old: np.ndarray | None = None) -> np.ndarray:
    design = data.design()
    g = resp.w.shape[1]
    omega = np.empty((g, design.shape[1])) if omega_old is None else np.array(omega_old, dtype=float)
    for j in range(g):
        weights = resp.w[:, j]
        if weights.sum() < EMPTY_GROUP_MASS:
            if omega_old is None:
                raise NumericalFailure(f"group {j} carries no responsibility mass and has no previous row")
            continue
        omega[j] = _wls(design, data.y, weights, cfg.ridge)
    return omega


def line_search_step(
    data: Dataset, params_old: MixtureParams, params_candidate: MixtureParams, cfg: EmConfig
) -> tuple[MixtureParams, float]:
    """Halve alpha from 0.5 until the log-likelihood strictly improves."""
    base = log_likelihood(data, params_old)
    alpha = 0.5
    while alpha >= cfg.tau2:
        trial = params_old.step_towards(params_candidate, alpha)
        try:
            value = log_likelihood(data, trial)
        except NumericalFailure:
            value = -np.inf
        if value > base:
            return trial, alpha
        alpha /= 2.0
    return params_old, 0.0


# --------------------------------------------------------------------------- #
# driver
# --------------------------------------------------------------------------- #
def fit(data: Dataset, cfg: EmConfig, init_assign: np.ndarray | None = None) -> EmFit:
    params = initialize(data, cfg, init_assign)
    loglik = log_likelihood(data, params)
    trace = [loglik]
    alphas: list[float] = []
    flags: list[list[int]] = []
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iter + 1):
        try:
            resp = e_step(data, params)
            gamma, flagged = m_step_gamma(data, resp, params.gamma, cfg.ridge)
            omega = m_step_omega(data, resp, cfg, params.omega)
            new, alpha = line_search_step(data, params, MixtureParams(gamma, omega, params.sigma2), cfg)
        except NumericalFailure as exc:
            raise exc.at_iteration(iteration) from exc

        change = float(np.abs(new.gamma - params.gamma).sum() + np.abs(new.omega - params.omega).sum())
        params = new
        alphas.append(alpha)
        flags.append(flagged)
        if alpha > 0:
            loglik = log_likelihood(data, params)
        else:
            log.info("line search found no improvement at iteration %d", iteration)
        trace.append(loglik)
        log.debug("EM iteration %d: loglik=%.6f alpha=%g change=%.3g", iteration, loglik, alpha, change)
        if change < cfg.tau1:
            converged = True
            break

    return EmFit(
        params=params,
        resp=e_step(data, params),
        loglik=loglik,
        iterations=iteration,
        converged=converged,
        trace=trace,
        alphas=alphas,
        irls_flags=flags,
    )


def parameter_count(params: MixtureParams) -> int:
    return params.g * params.gamma.shape[1] + params.g * params.omega.shape[1]


def information_criteria(fit: EmFit, data: Dataset) -> tuple[float, float]:
    """(AIC, BIC) from the maximized log-likelihood."""
    k = parameter_count(fit.params)
    return 2 * k - 2 * fit.loglik, k * np.log(data.n) - 2 * fit.loglik


def select_groups(data: Dataset, cfg: EmConfig, g_grid: list[int]) -> list[dict]:
    """Fit each G in the grid from random labels; one AIC/BIC row per G."""
    rows = []
    for g in g_grid:
        result = fit(data, replace(cfg, g=g))
        aic, bic = information_criteria(result, data)
        rows.append({"g": g, "loglik": result.loglik, "aic": aic, "bic": bic, "converged": result.converged})
    return rows
